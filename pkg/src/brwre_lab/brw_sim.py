"""Continuous-time walks and the direct branching simulator.

Walks jump at total rate 2*d*kappa to a uniformly chosen nearest neighbor
(the generator is kappa times the discrete Laplacian).  The branching
process additionally splits a particle in two at rate xi2(site) and kills
it at rate xi0(site).  Under the periodic convention particles live on the
torus wrapped from the environment box; under the zero convention leaving
the box absorbs (kills) the particle.

The direct moment estimator runs independent realizations and averages
powers of the particle count.  Realizations whose alive population exceeds
the cap are excluded from the estimate and counted separately.  All
statistics are accumulated as exact integers per fixed-size chunk with one
random substream per chunk, so results are bit-identical for any worker
count.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .environment import EnvironmentField
from .errors import ParameterError
from .rng import chunk_bounds, substream

DEFAULT_CAP = 1_000_000
_CHUNK = 1024
_DIRECT_TAG = 101


@dataclass(frozen=True)
class WalkPath:
    """A single continuous-time walk trajectory on the integer lattice.

    jump_times are strictly increasing in (0, duration]; sites[i] is the
    position right after jump i.  The path is right-continuous.
    """

    start: tuple[int, ...]
    jump_times: tuple[float, ...]
    sites: tuple[tuple[int, ...], ...]
    duration: float

    def __post_init__(self) -> None:
        if self.duration < 0:
            raise ParameterError("duration must be >= 0")
        if len(self.jump_times) != len(self.sites):
            raise ParameterError("jump_times and sites must align")
        prev_t = 0.0
        prev_s = self.start
        for t, s in zip(self.jump_times, self.sites):
            if not (prev_t < t <= self.duration):
                raise ParameterError("jump times must increase within (0, duration]")
            if sum(abs(a - b) for a, b in zip(prev_s, s)) != 1:
                raise ParameterError("consecutive sites must be lattice neighbors")
            prev_t, prev_s = t, s

    @property
    def end(self) -> tuple[int, ...]:
        return self.sites[-1] if self.sites else self.start

    def position_at(self, s: float) -> tuple[int, ...]:
        if not (0.0 <= s <= self.duration):
            raise ParameterError(f"time {s} outside [0, {self.duration}]")
        i = bisect_right(self.jump_times, s)
        return self.start if i == 0 else self.sites[i - 1]

    def occupation(self) -> list[tuple[tuple[int, ...], float]]:
        """(site, holding time) segments covering [0, duration]."""
        times = (0.0, *self.jump_times, self.duration)
        sites = (self.start, *self.sites)
        return [(sites[i], times[i + 1] - times[i]) for i in range(len(sites))]


def simulate_srw(
    x: Sequence[int],
    t: float,
    kappa: float,
    rng: np.random.Generator | int = 0,
) -> WalkPath:
    """One nearest-neighbor walk on Z^d run for time t."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    if kappa < 0:
        raise ParameterError("kappa must be >= 0")
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng))
    x = tuple(int(c) for c in x)
    d = len(x)
    rate = 2.0 * d * kappa
    times: list[float] = []
    sites: list[tuple[int, ...]] = []
    pos = list(x)
    s = 0.0
    while rate > 0:
        s += rng.exponential(1.0 / rate)
        if s > t:
            break
        k = int(rng.integers(0, 2 * d))
        pos[k >> 1] += 1 - 2 * (k & 1)
        times.append(s)
        sites.append(tuple(pos))
    return WalkPath(start=x, jump_times=tuple(times), sites=tuple(sites), duration=t)


def integrate_potential(
    path: WalkPath,
    value_at: Callable[[np.ndarray], np.ndarray] | Mapping[tuple[int, ...], float],
) -> float:
    """Time integral of a site function along the path."""
    occ = path.occupation()
    if callable(value_at):
        pos = np.array([s for s, _ in occ], dtype=np.int64)
        vals = np.asarray(value_at(pos), dtype=float)
    else:
        vals = np.array([value_at[s] for s, _ in occ], dtype=float)
    durs = np.array([dt for _, dt in occ])
    return float(vals @ durs)


def evolve_walks(
    rng: np.random.Generator,
    start: np.ndarray,
    durations: np.ndarray,
    kappa: float,
    potential: Callable[[np.ndarray], np.ndarray] | None = None,
    inside: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance a batch of independent walks, accumulating a potential integral.

    start is (B, d) and is not modified; durations is (B,).  Returns
    (end positions, integral of potential along each walk, alive mask).
    When an `inside` predicate is given, walks that step outside are frozen
    and flagged dead (their integral is meaningless and ignored upstream).
    """
    pos = np.array(start, dtype=np.int64, copy=True)
    B, d = pos.shape
    remaining = np.asarray(durations, dtype=float).copy()
    if np.any(remaining < 0):
        raise ParameterError("durations must be >= 0")
    integral = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    rate = 2.0 * d * kappa
    if rate == 0.0:
        if potential is not None:
            integral = np.asarray(potential(pos), dtype=float) * remaining
        return pos, integral, alive
    active = remaining > 0
    while True:
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        hold = rng.exponential(1.0 / rate, size=idx.size)
        dt = np.minimum(hold, remaining[idx])
        if potential is not None:
            integral[idx] += np.asarray(potential(pos[idx]), dtype=float) * dt
        jumped = hold < remaining[idx]
        remaining[idx] -= hold
        active[idx[~jumped]] = False
        jidx = idx[jumped]
        if jidx.size:
            dirs = rng.integers(0, 2 * d, size=jidx.size)
            pos[jidx, dirs >> 1] += 1 - 2 * (dirs & 1)
            if inside is not None:
                ok = np.asarray(inside(pos[jidx]), dtype=bool)
                dead = jidx[~ok]
                alive[dead] = False
                active[dead] = False
    return pos, integral, alive


@dataclass(frozen=True)
class ParticleRecord:
    pid: int
    parent: int | None
    birth_time: float
    birth_site: tuple[int, ...]
    jumps: tuple[tuple[float, tuple[int, ...]], ...]
    end_time: float | None
    end_reason: str  # "alive" | "split" | "killed" | "absorbed"


@dataclass(frozen=True)
class BranchingRealization:
    t: float
    counts: Mapping[tuple[int, ...], int]
    total: int
    capped: bool
    particles: tuple[ParticleRecord, ...] | None = None


class _Tables:
    """Per-(environment, kappa) flattened rate and neighbor tables."""

    def __init__(self, env: EnvironmentField, kappa: float):
        if kappa < 0:
            raise ParameterError("kappa must be >= 0")
        self.env = env
        self.kappa = kappa
        d, n = env.d, env.nsites
        self.move_rate = 2.0 * d * kappa
        self.lam = [self.move_rate + float(env.xi2[i] + env.xi0[i]) for i in range(n)]
        self.inv_lam = [1.0 / l if l > 0 else np.inf for l in self.lam]
        self.thr_split = [self.move_rate + float(env.xi2[i]) for i in range(n)]
        sites = env.sites()
        self.site_of = sites
        nbr: list[list[int]] = []
        for s in sites:
            row: list[int] = []
            for axis in range(d):
                for delta in (1, -1):
                    nxt = list(s)
                    nxt[axis] += delta
                    if env.boundary == "zero" and abs(nxt[axis]) > env.R:
                        row.append(-1)
                    else:
                        row.append(env.site_index(nxt))
            nbr.append(row)
        self.nbr = nbr


def _run_realization(
    tables: _Tables,
    start_idx: int,
    checkpoints: Sequence[float],
    cap: int,
    rng: np.random.Generator,
    record: bool = False,
):
    """Event-driven realization, reporting site counts at each checkpoint.

    Returns (counts per checkpoint, capped flags per checkpoint, records).
    A checkpoint after the population first exceeded the cap reports None.
    """
    lam, inv_lam, thr_split, nbr, move_rate = (
        tables.lam, tables.inv_lam, tables.thr_split, tables.nbr, tables.move_rate
    )
    kappa = tables.kappa
    exponential = rng.exponential
    random = rng.random
    counter = 0
    heap: list[tuple[float, int, int]] = []
    records: dict[int, dict] | None = {} if record else None

    def spawn(time: float, idx: int, parent: int | None) -> None:
        nonlocal counter
        pid = counter
        counter += 1
        heapq.heappush(heap, (time + exponential(inv_lam[idx]), pid, idx))
        if records is not None:
            records[pid] = {
                "pid": pid, "parent": parent, "birth_time": time,
                "birth_site": tables.site_of[idx], "jumps": [],
                "end_time": None, "end_reason": "alive",
            }

    spawn(0.0, start_idx, None)
    out_counts: list[dict[int, int] | None] = []
    out_capped: list[bool] = []
    ci = 0
    capped = False

    def snapshot_until(limit: float) -> None:
        # report checkpoints strictly before the next event; each alive
        # particle holds exactly one scheduled event in the heap
        nonlocal ci
        while ci < len(checkpoints) and checkpoints[ci] < limit:
            if capped:
                out_counts.append(None)
                out_capped.append(True)
            else:
                by_site: dict[int, int] = {}
                for _, _, idx in heap:
                    by_site[idx] = by_site.get(idx, 0) + 1
                out_counts.append(by_site)
                out_capped.append(False)
            ci += 1

    while heap:
        snapshot_until(heap[0][0])
        if ci >= len(checkpoints):
            break
        tau, pid, idx = heapq.heappop(heap)
        u = random() * lam[idx]
        if u < move_rate:
            nxt = nbr[idx][int(u / kappa)]
            if nxt < 0:
                if records is not None:
                    records[pid].update(end_time=tau, end_reason="absorbed")
                continue
            heapq.heappush(heap, (tau + exponential(inv_lam[nxt]), pid, nxt))
            if records is not None:
                records[pid]["jumps"].append((tau, tables.site_of[nxt]))
        elif u < thr_split[idx]:
            if records is not None:
                records[pid].update(end_time=tau, end_reason="split")
            spawn(tau, idx, pid if records is not None else None)
            spawn(tau, idx, pid if records is not None else None)
            if len(heap) > cap:
                capped = True
                snapshot_until(np.inf)
                break
        else:
            if records is not None:
                records[pid].update(end_time=tau, end_reason="killed")
    snapshot_until(np.inf)

    recs = None
    if records is not None:
        recs = tuple(
            ParticleRecord(
                pid=r["pid"], parent=r["parent"], birth_time=r["birth_time"],
                birth_site=r["birth_site"], jumps=tuple(r["jumps"]),
                end_time=r["end_time"], end_reason=r["end_reason"],
            )
            for r in records.values()
        )
    return out_counts, out_capped, recs


def simulate_brwre(
    env: EnvironmentField,
    x: Sequence[int],
    t: float,
    kappa: float = 1.0,
    rng: np.random.Generator | int = 0,
    cap: int = DEFAULT_CAP,
    record: bool = False,
) -> BranchingRealization:
    """One realization of the branching walk started from a single particle."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    if cap < 1:
        raise ParameterError("cap must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng))
    tables = _Tables(env, kappa)
    start_idx = env.site_index(tuple(int(c) for c in x))
    counts_list, capped_list, recs = _run_realization(
        tables, start_idx, [t], cap, rng, record=record
    )
    counts_idx = counts_list[0]
    capped = capped_list[0]
    counts: dict[tuple[int, ...], int] = {}
    total = 0
    if counts_idx is not None:
        for idx, c in counts_idx.items():
            counts[tables.site_of[idx]] = c
            total += c
    return BranchingRealization(
        t=t, counts=counts, total=total, capped=capped, particles=recs
    )


@dataclass(frozen=True)
class DirectEstimate:
    order: int
    t: float
    estimate: float
    stderr: float
    samples: int
    capped: int
    y: tuple[int, ...] | None = None


def _direct_chunk(
    tables: _Tables,
    start_idx: int,
    times: Sequence[float],
    powers: Sequence[int],
    seed: int,
    chunk_id: int,
    lo: int,
    hi: int,
    cap: int,
    y_idx: int | None,
):
    rng = substream(seed, _DIRECT_TAG, chunk_id)
    T, P = len(times), len(powers)
    sums = [[0] * P for _ in range(T)]  # exact integer accumulators
    used = [0] * T
    capped = [0] * T
    for _ in range(lo, hi):
        counts, was_capped, _ = _run_realization(tables, start_idx, times, cap, rng)
        for j in range(T):
            if was_capped[j]:
                capped[j] += 1
                continue
            by_site = counts[j]
            if y_idx is None:
                eta = sum(by_site.values())
            else:
                eta = by_site.get(y_idx, 0)
            used[j] += 1
            row = sums[j]
            for pi, p in enumerate(powers):
                row[pi] += eta**p
    return sums, used, capped


def direct_moment_table(
    env: EnvironmentField,
    x: Sequence[int],
    times: Sequence[float],
    orders: Sequence[int],
    samples: int,
    seed: int = 0,
    kappa: float = 1.0,
    cap: int = DEFAULT_CAP,
    y: Sequence[int] | None = None,
    threads: int = 1,
) -> list[DirectEstimate]:
    """Monte Carlo moments of the particle count at several times and orders.

    One set of realizations serves every requested time (via the Markov
    snapshots) and order.  Estimates are sample means of eta^n with their
    standard errors; capped realizations are excluded per checkpoint.
    """
    times = sorted(float(t) for t in times)
    if not times or times[0] < 0:
        raise ParameterError("times must be nonnegative")
    orders = [int(n) for n in orders]
    if not orders or min(orders) < 1:
        raise ParameterError("orders must be >= 1")
    if samples < 2:
        raise ParameterError("need at least 2 samples")
    if threads < 1:
        raise ParameterError("threads must be >= 1")
    tables = _Tables(env, kappa)
    start_idx = env.site_index(tuple(int(c) for c in x))
    y_idx = None if y is None else env.site_index(tuple(int(c) for c in y))
    powers = sorted({p for n in orders for p in (n, 2 * n)})
    bounds = chunk_bounds(samples, _CHUNK)
    jobs = [
        (tables, start_idx, times, powers, seed, ci, lo, hi, cap, y_idx)
        for ci, (lo, hi) in enumerate(bounds)
    ]
    if threads == 1:
        parts = [_direct_chunk(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda j: _direct_chunk(*j), jobs))
    T, P = len(times), len(powers)
    sums = [[0] * P for _ in range(T)]
    used = [0] * T
    capped = [0] * T
    for psums, pused, pcapped in parts:  # integer merge: order independent
        for j in range(T):
            used[j] += pused[j]
            capped[j] += pcapped[j]
            for pi in range(P):
                sums[j][pi] += psums[j][pi]
    out: list[DirectEstimate] = []
    pcol = {p: i for i, p in enumerate(powers)}
    y_t = None if y is None else tuple(int(c) for c in y)
    for j, t in enumerate(times):
        for n in orders:
            m = used[j]
            if m < 2:
                raise ParameterError(
                    f"all realizations capped at t={t}; raise the cap"
                )
            s1 = sums[j][pcol[n]]
            s2 = sums[j][pcol[2 * n]]
            mean = s1 / m
            var = max((s2 - s1 * s1 / m) / (m - 1), 0.0)
            out.append(
                DirectEstimate(
                    order=n, t=t, estimate=float(mean),
                    stderr=float(np.sqrt(var / m)),
                    samples=m, capped=capped[j], y=y_t,
                )
            )
    return out


def estimate_mn_direct(
    env: EnvironmentField,
    x: Sequence[int],
    t: float,
    n: int,
    samples: int,
    seed: int = 0,
    kappa: float = 1.0,
    cap: int = DEFAULT_CAP,
    y: Sequence[int] | None = None,
    threads: int = 1,
) -> DirectEstimate:
    """Moment of order n at a single time; see direct_moment_table."""
    table = direct_moment_table(
        env, x, [t], [n], samples, seed=seed, kappa=kappa, cap=cap, y=y,
        threads=threads,
    )
    return table[0]
