"""Deterministic finite-box oracle for the moment equations.

The order-n moment of the particle count solves the inhomogeneous Cauchy
problem

    d/dt m_n = kappa*Lap m_n + xi*m_n + xi2 * sum_{l=1}^{n-1} C(n,l) m_l m_{n-l}

with m_n(0, .) = 1 (delocalized start) or an indicator of a single site
(localized start).  Order 1 is the linear parabolic Anderson equation; it
can alternatively be solved exactly through the eigendecomposition of the
symmetric operator.  Higher orders are integrated jointly by classical RK4
on the stacked system, so the order-1 row of a stacked solve is
bit-identical to a standalone RK4 run.

This module is the noise-free reference the two Monte Carlo routes are
validated against.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, comb, isfinite
from typing import Sequence

import numpy as np

from .environment import EnvironmentField
from .errors import CapacityError, ParameterError, StepSizeError

MAX_DENSE_SITES = 4096
# relative accuracy target used to pick the automatic RK4 step
_REL_TOL = 1e-9

__all__ = [
    "MAX_DENSE_SITES",
    "LatticeOperator",
    "MomentField",
    "solve_m1",
    "solve_mn_recursive",
]


def _neighbor_table(env: EnvironmentField) -> tuple[np.ndarray, np.ndarray]:
    """Per-site neighbor indices, axis-major with +1 before -1 per axis.

    Returns (idx, mask), both (nsites, 2d).  Zero-boundary exits keep a
    dummy index 0 with mask 0, so gathers stay in bounds.
    """
    sites = np.asarray(env.sites(), dtype=np.int64)
    cols = []
    masks = []
    for axis in range(env.d):
        for delta in (1, -1):
            nxt = sites.copy()
            nxt[:, axis] += delta
            if env.boundary == "zero":
                out = np.abs(nxt[:, axis]) > env.R
                safe = nxt.copy()
                safe[out] = 0
                cols.append(env.flat_indices(safe))
                masks.append(np.where(out, 0.0, 1.0))
            else:
                cols.append(env.flat_indices(nxt))
                masks.append(np.ones(len(sites)))
    return np.stack(cols, axis=1), np.stack(masks, axis=1)


class LatticeOperator:
    """Symmetric action kappa*Lap + diag(v) on flat site vectors.

    The Laplacian accumulates rate kappa per directed jump, which on tiny
    tori (side 1 or 2) reproduces the event simulator's wrap-around
    multigraph: side 1 cancels the Laplacian entirely, side 2 doubles the
    edge weight.
    """

    def __init__(
        self,
        env: EnvironmentField,
        kappa: float,
        v: np.ndarray | None = None,
    ):
        if kappa < 0:
            raise ParameterError("kappa must be >= 0")
        self.env = env
        self.kappa = float(kappa)
        self.v = env.xi if v is None else np.asarray(v, dtype=float)
        if self.v.shape != (env.nsites,):
            raise ParameterError("potential must be flat over the box")
        self.nbr, self.mask = _neighbor_table(env)
        self.diag = self.v - 2.0 * env.d * self.kappa

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Operator action on (..., nsites) arrays, rows independent."""
        nb = (f[..., self.nbr] * self.mask).sum(axis=-1)
        return self.kappa * nb + self.diag * f

    def dense(self) -> np.ndarray:
        n = self.env.nsites
        if n > MAX_DENSE_SITES:
            raise CapacityError(
                f"dense operator needs <= {MAX_DENSE_SITES} sites, box has {n}"
            )
        a = np.zeros((n, n))
        rows = np.repeat(np.arange(n), 2 * self.env.d)
        np.add.at(a, (rows, self.nbr.ravel()), self.kappa * self.mask.ravel())
        a[np.arange(n), np.arange(n)] += self.diag
        return a

    @property
    def stability_dt(self) -> float:
        """Largest explicit step honored by the solvers."""
        lam = 2.0 * self.env.d * self.kappa + float(np.max(np.abs(self.v)))
        return 0.5 / lam if lam > 0 else np.inf


@dataclass(frozen=True, eq=False)
class MomentField(object):
    """Site-indexed moment values on an increasing time grid from 0."""

    order: int
    init: str
    y: tuple[int, ...] | None
    times: np.ndarray
    values: np.ndarray
    env: EnvironmentField
    kappa: float
    method: str

    def final(self) -> np.ndarray:
        """Values at the last grid time, flat in site order."""
        return self.values[-1]

    def at(self, time_index: int, site: Sequence[int]) -> float:
        return float(self.values[time_index, self.env.site_index(site)])

    def site_series(self, site: Sequence[int]) -> np.ndarray:
        return self.values[:, self.env.site_index(site)]


def _time_grid(times) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(times, dtype=float))
    if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ParameterError("times must be finite and >= 0")
    arr = np.unique(arr)
    if arr[0] != 0.0:
        arr = np.concatenate(([0.0], arr))
    return arr


def _init_stack(
    env: EnvironmentField, n: int, init: str, y
) -> tuple[np.ndarray, tuple[int, ...] | None]:
    if init == "delocalized":
        if y is not None:
            raise ParameterError("y only applies to the localized start")
        return np.ones((n, env.nsites)), None
    if init == "localized":
        site = (0,) * env.d if y is None else tuple(int(c) for c in y)
        stack = np.zeros((n, env.nsites))
        stack[:, env.site_index(site)] = 1.0
        return stack, site
    raise ParameterError("init must be 'delocalized' or 'localized'")


def _resolve_env(env: EnvironmentField, boundary: str | None) -> EnvironmentField:
    if boundary is None or boundary == env.boundary:
        return env
    return EnvironmentField(
        d=env.d, R=env.R, boundary=boundary, xi0=env.xi0, xi2=env.xi2
    )


def _pick_dt(op: LatticeOperator, horizon: float, dt, dt_scale: float) -> float:
    dt_stab = op.stability_dt
    if dt is not None:
        dt = float(dt)
        if dt <= 0:
            raise ParameterError("dt must be > 0")
        if dt > dt_stab:
            raise StepSizeError(
                f"dt={dt:g} exceeds the stability bound {dt_stab:g}"
            )
        return dt
    # accuracy-driven target: classical local error (lam*h)^5/120 per step,
    # lam bounded by the spectral radius 4dk + max|v|
    lam = 4.0 * op.env.d * op.kappa + float(np.max(np.abs(op.v)))
    if lam > 0 and horizon > 0:
        dt_acc = (120.0 * _REL_TOL / (horizon * lam**5)) ** 0.25
    else:
        dt_acc = np.inf
    target = min(dt_stab, dt_acc) * float(dt_scale)
    if not (target > 0):
        raise ParameterError("dt_scale must be > 0")
    return target


def _source(out: np.ndarray, stack: np.ndarray, xi2: np.ndarray, n: int) -> None:
    """Add the branching coupling to d/dt rows of order >= 2 in place."""
    for order in range(2, n + 1):
        acc = np.zeros_like(stack[0])
        for l in range(1, order):
            acc += comb(order, l) * stack[l - 1] * stack[order - l - 1]
        out[order - 1] += xi2 * acc


def _integrate_stack(
    op: LatticeOperator,
    xi2: np.ndarray,
    n: int,
    y0: np.ndarray,
    grid: np.ndarray,
    dt_target: float,
) -> np.ndarray:
    def rate(stack: np.ndarray) -> np.ndarray:
        out = op.apply(stack)
        if n > 1:
            _source(out, stack, xi2, n)
        return out

    out = np.empty((grid.size, n, y0.shape[1]))
    out[0] = y0
    y = y0.copy()
    for i in range(1, grid.size):
        span = grid[i] - grid[i - 1]
        steps = 1 if not isfinite(dt_target) else max(1, ceil(span / dt_target))
        h = span / steps
        for _ in range(steps):
            k1 = rate(y)
            k2 = rate(y + 0.5 * h * k1)
            k3 = rate(y + 0.5 * h * k2)
            k4 = rate(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        # integrator state stays unclamped; snapshots shed roundoff dust
        out[i] = np.maximum(y, 0.0)
    return out


def _solve_stack(
    env: EnvironmentField,
    kappa: float,
    times,
    n: int,
    init: str,
    y,
    dt,
    dt_scale: float,
) -> list[MomentField]:
    if n < 1:
        raise ParameterError("n must be >= 1")
    grid = _time_grid(times)
    y0, site = _init_stack(env, n, init, y)
    op = LatticeOperator(env, kappa)
    dt_target = _pick_dt(op, float(grid[-1]), dt, dt_scale)
    cube = _integrate_stack(op, env.xi2, n, y0, grid, dt_target)
    return [
        MomentField(
            order=k,
            init=init,
            y=site,
            times=grid,
            values=cube[:, k - 1],
            env=env,
            kappa=float(kappa),
            method="rk4",
        )
        for k in range(1, n + 1)
    ]


def solve_m1(
    env: EnvironmentField,
    kappa: float,
    times,
    init: str = "delocalized",
    y: Sequence[int] | None = None,
    *,
    boundary: str | None = None,
    method: str = "expm",
    dt: float | None = None,
    dt_scale: float = 1.0,
) -> MomentField:
    """Mean-field solve d/dt u = kappa*Lap u + xi u on the box.

    method "expm" (alias "matrix_exponential") diagonalizes the symmetric
    operator, exact up to roundoff, boxes of <= MAX_DENSE_SITES sites;
    "rk4" integrates by method of lines and honors dt / dt_scale.
    """
    env = _resolve_env(env, boundary)
    if method == "rk4":
        return _solve_stack(env, kappa, times, 1, init, y, dt, dt_scale)[0]
    if method not in ("expm", "matrix_exponential"):
        raise ParameterError("method must be 'expm', 'matrix_exponential' or 'rk4'")
    grid = _time_grid(times)
    u0, site = _init_stack(env, 1, init, y)
    op = LatticeOperator(env, kappa)
    w, vecs = np.linalg.eigh(op.dense())
    coef = vecs.T @ u0[0]
    values = np.empty((grid.size, env.nsites))
    values[0] = u0[0]
    for i in range(1, grid.size):
        values[i] = np.maximum(vecs @ (np.exp(w * grid[i]) * coef), 0.0)
    return MomentField(
        order=1,
        init=init,
        y=site,
        times=grid,
        values=values,
        env=env,
        kappa=float(kappa),
        method="expm",
    )


def solve_mn_recursive(
    env: EnvironmentField,
    kappa: float,
    times,
    n: int,
    init: str = "delocalized",
    y: Sequence[int] | None = None,
    *,
    boundary: str | None = None,
    dt: float | None = None,
    dt_scale: float = 1.0,
) -> list[MomentField]:
    """Moment fields of orders 1..n solved jointly by stacked RK4.

    The coupling feeds each order from the lower ones only, so the list
    entry for order 1 is bit-identical to solve_m1(..., method='rk4') with
    the same stepping parameters.
    """
    env = _resolve_env(env, boundary)
    return _solve_stack(env, kappa, times, n, init, y, dt, dt_scale)
