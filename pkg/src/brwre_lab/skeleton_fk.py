"""Moment estimation through the skeleton-tree representation.

The order-n particle-count moment decomposes into a sum over levels
k = 0..n-1, skeleton trees with k splits, and monotone numberings, each
term weighted by the integer coefficient c(k, n).  A term's value is an
integral over ordered split times 0 <= t_1 <= ... <= t_k <= t of the
expectation, over independent walk segments laid along the tree's edges,
of

    exp( sum over edges of the net-potential integral along the segment )
    * product over splitting vertices of xi2 at the split position,

and for the local variant additionally the number of leaves that end at
the target site.  The estimator samples split times uniformly on the
ordered simplex (optionally warped toward early splits by a Beta density)
and averages the integrand times the inverse sampling density, entirely
in log space.

Per-batch random substreams keyed by (seed, tag, *stream_key, batch index)
make every estimate reproducible and independent of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .brw_sim import WalkPath, evolve_walks, simulate_srw
from .environment import EnvironmentField
from .errors import DomainError, ParameterError
from .rng import substream
from .trees import Numbering, SkeletonTree, c_coeff, term_index

_FK_TAG = 202
_BATCH = 1 << 14


@dataclass(frozen=True)
class TimeVector:
    """Ordered interior split times 0 <= t_1 <= ... <= t_k <= t."""

    t: float
    interior: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ParameterError("horizon must be >= 0")
        prev = 0.0
        for s in self.interior:
            if not (prev <= s <= self.t):
                raise ParameterError("interior times must be sorted within [0, t]")
            prev = s

    @property
    def k(self) -> int:
        return len(self.interior)

    def full(self) -> tuple[float, ...]:
        """Times indexed by label: label 0 -> 0, labels 1..k, label k+1 -> t."""
        return (0.0, *self.interior, self.t)


def sample_time_vectors(
    rng: np.random.Generator, k: int, t: float, size: int, warp_a: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted split-time samples of shape (size, k) and their log densities.

    Uniform sampling corresponds to the ordered-uniform density k!/t^k on
    the simplex; warp_a in (0, 1] biases each time toward 0 via a
    Beta(warp_a, 1) marginal, which helps when early splits dominate.
    """
    if k < 0:
        raise ParameterError("k must be >= 0")
    if k == 0:
        return np.zeros((size, 0)), np.zeros(size)
    if t <= 0:
        raise ParameterError("sampling split times requires t > 0")
    if warp_a is None:
        times = np.sort(rng.uniform(0.0, t, size=(size, k)), axis=1)
        logq = np.full(size, math.lgamma(k + 1) - k * math.log(t))
        return times, logq
    a = float(warp_a)
    if not (0 < a <= 1):
        raise ParameterError("warp_a must lie in (0, 1]")
    u = rng.random(size=(size, k))
    raw = t * u ** (1.0 / a)  # Beta(a, 1) scaled to [0, t]
    times = np.sort(raw, axis=1)
    with np.errstate(divide="ignore"):
        logq = (
            math.lgamma(k + 1)
            + k * (math.log(a) - a * math.log(t))
            + (a - 1.0) * np.sum(np.log(times), axis=1)
        )
    return times, logq


@dataclass(frozen=True)
class SkeletonBRW:
    """A path-level realization of the skeleton: one walk segment per edge.

    segments[(u, v)] = (start time, WalkPath) where the path duration spans
    [time(u), time(v)] and starts at the parent's end position.
    """

    tree: SkeletonTree
    numbering: Numbering
    tvec: TimeVector
    x: tuple[int, ...]
    segments: Mapping[tuple[int, int], tuple[float, WalkPath]]

    def leaf_positions(self) -> dict[int, tuple[int, ...]]:
        return {
            v: self.segments[(self.tree.parent[v], v)][1].end
            for v in self.tree.leaves
        }


def assemble_skeleton_brw(
    tree: SkeletonTree,
    numbering: Numbering,
    tvec: TimeVector,
    x: Sequence[int],
    kappa: float,
    rng: np.random.Generator | int = 0,
) -> SkeletonBRW:
    """Lay independent walk segments along the tree's edges."""
    if tvec.k != tree.k:
        raise DomainError(f"time vector has k={tvec.k}, tree has k={tree.k}")
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng))
    x = tuple(int(c) for c in x)
    k = tree.k
    times = tvec.full()
    end_at: dict[int, tuple[int, ...]] = {0: x}
    segments: dict[tuple[int, int], tuple[float, WalkPath]] = {}
    order = sorted(tree.splits, key=lambda v: numbering.label_of(v, k))
    for v in (*order, *tree.leaves):
        u = tree.parent[v]
        t0 = times[numbering.label_of(u, k)]
        t1 = times[numbering.label_of(v, k)]
        path = simulate_srw(end_at[u], t1 - t0, kappa, rng)
        segments[(u, v)] = (t0, path)
        end_at[v] = path.end
    return SkeletonBRW(
        tree=tree, numbering=numbering, tvec=tvec, x=x, segments=segments
    )


@dataclass(frozen=True)
class LocalTimeField:
    """Site occupation times of a skeleton realization (or single walk).

    mass is the total branch length; normalized() sums to 1 whenever the
    mass is positive.  A periodized field lives on the torus cube centered
    at torus_center with radius torus_R.
    """

    ell: Mapping[tuple[int, ...], float]
    mass: float
    torus_R: int | None = None
    torus_center: tuple[int, ...] | None = None

    def normalized(self) -> dict[tuple[int, ...], float]:
        if self.mass <= 0:
            raise DomainError("cannot normalize a zero-mass field")
        return {s: v / self.mass for s, v in self.ell.items()}

    def periodize(self, R: int, center: Sequence[int]) -> "LocalTimeField":
        """Fold all mass into the cube of radius R around the center site."""
        if R < 0:
            raise ParameterError("R must be >= 0")
        center = tuple(int(c) for c in center)
        L = 2 * R + 1
        folded: dict[tuple[int, ...], float] = {}
        for site, v in self.ell.items():
            z = tuple(c0 + ((s - c0 + R) % L) - R for s, c0 in zip(site, center))
            folded[z] = folded.get(z, 0.0) + v
        return LocalTimeField(
            ell=folded, mass=self.mass, torus_R=R, torus_center=center
        )


def local_times(skel: SkeletonBRW) -> LocalTimeField:
    ell: dict[tuple[int, ...], float] = {}
    mass = 0.0
    for _, path in skel.segments.values():
        for site, dt in path.occupation():
            ell[site] = ell.get(site, 0.0) + dt
            mass += dt
    return LocalTimeField(ell=ell, mass=mass)


def eval_S_per(field: LocalTimeField) -> float:
    """Dirichlet energy of sqrt(normalized mass) on the periodized torus.

    Sums (sqrt(mu(a)) - sqrt(mu(b)))^2 over torus edges taken once in the
    positive direction per axis; axes of extent 1 contribute no edges.
    """
    if field.torus_R is None or field.torus_center is None:
        raise DomainError("eval_S_per requires a periodized field")
    R, center = field.torus_R, field.torus_center
    d = len(center)
    L = 2 * R + 1
    mu = field.normalized()

    def fold(site: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(
            c0 + ((s - c0 + R) % L) - R for s, c0 in zip(site, center)
        )

    if L == 1:
        return 0.0
    # every torus edge is owned by its lower endpoint in the positive axis
    # direction; edges between two zero-mass sites contribute nothing, so it
    # suffices to visit mass-carrying sites and pick up the edge from an
    # empty lower neighbor explicitly
    total = 0.0
    for site, m in mu.items():
        rm = math.sqrt(m)
        for axis in range(d):
            up = list(site)
            up[axis] += 1
            total += (rm - math.sqrt(mu.get(fold(tuple(up)), 0.0))) ** 2
            down = list(site)
            down[axis] -= 1
            if fold(tuple(down)) not in mu:
                total += m
    return total


@dataclass(frozen=True)
class PhiEstimate:
    value: float
    stderr: float
    k: int
    tree: str
    samples: int
    y: tuple[int, ...] | None = None


def _phi_batch(
    env: EnvironmentField,
    x: np.ndarray,
    t: float,
    tree: SkeletonTree,
    numbering: Numbering,
    kappa: float,
    seed: int,
    stream_key: tuple[int, ...],
    batch_id: int,
    size: int,
    y_flat: int | None,
    warp_a: float | None,
) -> tuple[float, float, int]:
    """One batch of the term integrand; returns (logsum W, logsum W^2, size)."""
    rng = substream(seed, _FK_TAG, *stream_key, batch_id)
    k = tree.k
    d = env.d
    times, logq = sample_time_vectors(rng, k, t, size, warp_a=warp_a)
    cols = np.concatenate(
        [np.zeros((size, 1)), times, np.full((size, 1), t)], axis=1
    )
    logw = -logq
    alive = np.ones(size, dtype=bool)
    zero_boundary = env.boundary == "zero"
    inside = env.in_box if zero_boundary else None
    pos: dict[int, np.ndarray] = {0: np.tile(x, (size, 1))}
    order = sorted(tree.splits, key=lambda v: numbering.label_of(v, k))
    leaf_hits = np.zeros(size, dtype=np.int64) if y_flat is not None else None
    for v in (*order, *tree.leaves):
        u = tree.parent[v]
        dur = cols[:, numbering.label_of(v, k)] - cols[:, numbering.label_of(u, k)]
        end, integ, seg_alive = evolve_walks(
            rng, pos[u], dur, kappa, potential=env.xi_at, inside=inside
        )
        if zero_boundary:
            dead = ~seg_alive
            if dead.any():
                end[dead] = x  # park dead walks inside; weight voided below
                alive &= seg_alive
        logw = logw + np.where(alive, integ, 0.0)
        if tree.is_split(v):
            vals = np.full(size, -np.inf)
            if alive.any():
                with np.errstate(divide="ignore"):
                    vals[alive] = np.log(env.xi2_at(end[alive]))
            logw = logw + vals
        elif leaf_hits is not None:
            hit = env.flat_indices(end) == y_flat
            leaf_hits += np.where(alive & hit, 1, 0)
        pos[v] = end
    if leaf_hits is not None:
        with np.errstate(divide="ignore"):
            logw = logw + np.log(leaf_hits.astype(float))
    if zero_boundary:
        logw = np.where(alive, logw, -np.inf)
    ls1 = float(logsumexp(logw))
    ls2 = float(logsumexp(2.0 * logw))
    return ls1, ls2, size


def estimate_phi(
    env: EnvironmentField,
    x: Sequence[int],
    t: float,
    tree: SkeletonTree,
    numbering: Numbering,
    samples: int,
    seed: int = 0,
    kappa: float = 1.0,
    y: Sequence[int] | None = None,
    warp_a: float | None = None,
    threads: int = 1,
    stream_key: tuple[int, ...] = (),
) -> PhiEstimate:
    """Monte Carlo estimate of one (tree, numbering) term."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    if samples < 2:
        raise ParameterError("need at least 2 samples")
    if threads < 1:
        raise ParameterError("threads must be >= 1")
    x_arr = np.array([int(c) for c in x], dtype=np.int64)
    y_t = None if y is None else tuple(int(c) for c in y)
    k = tree.k
    if t == 0.0 and k > 0:
        # the ordered simplex is degenerate: the term vanishes
        return PhiEstimate(0.0, 0.0, k, tree.encoding, samples, y_t)
    y_flat = None if y is None else int(env.site_index(y_t))
    sizes = []
    off = 0
    while off < samples:
        sizes.append(min(_BATCH, samples - off))
        off += sizes[-1]
    jobs = [
        (env, x_arr, float(t), tree, numbering, kappa, seed, stream_key, bi, sz,
         y_flat, warp_a)
        for bi, sz in enumerate(sizes)
    ]
    if threads == 1:
        parts = [_phi_batch(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda j: _phi_batch(*j), jobs))
    # merge in fixed batch order for bit-stable results
    ls1 = -np.inf
    ls2 = -np.inf
    n = 0
    for b1, b2, sz in parts:
        ls1 = np.logaddexp(ls1, b1)
        ls2 = np.logaddexp(ls2, b2)
        n += sz
    logn = math.log(n)
    mean = float(np.exp(ls1 - logn))
    m2 = float(np.exp(ls2 - logn))
    var = max(m2 - mean * mean, 0.0) * n / (n - 1)
    return PhiEstimate(
        value=mean, stderr=float(math.sqrt(var / n)), k=k,
        tree=tree.encoding, samples=n, y=y_t,
    )


@dataclass(frozen=True)
class FkMomentEstimate:
    order: int
    t: float
    estimate: float
    stderr: float
    terms: tuple[PhiEstimate, ...]
    coefficients: tuple[int, ...]
    y: tuple[int, ...] | None = None


def assemble_moment(
    order: int, t: float, terms: Sequence[tuple[int, PhiEstimate]],
    y: tuple[int, ...] | None = None,
) -> FkMomentEstimate:
    """Combine per-term estimates with their c(k, n) weights."""
    coeffs = []
    total = 0.0
    var = 0.0
    for k, est in terms:
        c = c_coeff(k, order)
        coeffs.append(c)
        total += c * est.value
        var += (c * est.stderr) ** 2
    return FkMomentEstimate(
        order=order, t=t, estimate=total, stderr=math.sqrt(var),
        terms=tuple(est for _, est in terms), coefficients=tuple(coeffs), y=y,
    )


def estimate_phi_terms(
    env: EnvironmentField,
    x: Sequence[int],
    t: float,
    max_level: int,
    samples: int,
    seed: int = 0,
    kappa: float = 1.0,
    y: Sequence[int] | None = None,
    warp_a: float | None = None,
    threads: int = 1,
) -> list[tuple[int, PhiEstimate]]:
    """Estimate every (tree, numbering) term with level <= max_level.

    Term i draws from substream (seed, tag, i, batch), so term estimates
    are mutually independent and can be reused across orders.
    """
    out: list[tuple[int, PhiEstimate]] = []
    terms = term_index(max_level + 1)
    for i, (k, tree, numbering) in enumerate(terms):
        est = estimate_phi(
            env, x, t, tree, numbering, samples, seed=seed, kappa=kappa, y=y,
            warp_a=warp_a, threads=threads, stream_key=(i,),
        )
        out.append((k, est))
    return out


def estimate_mn_fk(
    env: EnvironmentField,
    x: Sequence[int],
    t: float,
    n: int,
    samples: int,
    seed: int = 0,
    kappa: float = 1.0,
    y: Sequence[int] | None = None,
    warp_a: float | None = None,
    threads: int = 1,
) -> FkMomentEstimate:
    """Order-n moment through the skeleton representation, samples per term."""
    if n < 1:
        raise ParameterError("order must be >= 1")
    terms = estimate_phi_terms(
        env, x, t, n - 1, samples, seed=seed, kappa=kappa, y=y, warp_a=warp_a,
        threads=threads,
    )
    y_t = None if y is None else tuple(int(c) for c in y)
    return assemble_moment(n, t, terms, y=y_t)


def estimate_m1_fk(
    env: EnvironmentField,
    x: Sequence[int],
    t: float,
    samples: int,
    seed: int = 0,
    kappa: float = 1.0,
    y: Sequence[int] | None = None,
    threads: int = 1,
) -> FkMomentEstimate:
    """Mean particle count via the single level-0 term (the PAM baseline)."""
    return estimate_mn_fk(
        env, x, t, 1, samples, seed=seed, kappa=kappa, y=y, threads=threads
    )
