"""Censored (Powell) quantile regression and the censored quantile process.

The objective ``mean rho_tau(y - max(0, X b))`` is piecewise linear but not
convex. It is minimised with the iterative linear programming algorithm:
fit an ordinary quantile regression, keep the observations whose fitted
value is strictly positive, refit on them, and repeat until that active set
stops changing. Several starting points are tried and the lowest objective
wins.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllCensoredDegenerate, BudgetExceeded, ConfigError, DegenerateDesign
from .model import AugmentedDesign
from .qr import qr_solve

__all__ = [
    "check_loss",
    "cqr_objective",
    "QuantileGrid",
    "CqrOptions",
    "CqrFit",
    "QuantileProcess",
    "cqr_fit",
    "quantile_process",
    "brute_force_cqr",
]

log = logging.getLogger(__name__)

ACTIVE_RTOL = 1e-12


def check_loss(u, tau):
    """``rho_tau(u) = (tau - 1{u <= 0}) u``; scalar in, scalar out."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    out = (tau - (u <= 0)) * u
    return float(out) if out.ndim == 0 else out


def _design(X_hat) -> np.ndarray:
    X = X_hat.X_hat if isinstance(X_hat, AugmentedDesign) else X_hat
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def cqr_objective(beta, X_hat, y, tau) -> float:
    """Powell objective ``(1/n) sum rho_tau(y_i - max(0, x_i' beta))``."""
    X = _design(X_hat)
    y = np.asarray(y, dtype=float)
    u = y - np.maximum(0.0, X @ np.asarray(beta, dtype=float))
    return float(np.mean((tau - (u <= 0)) * u))


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """Quantile levels inside ``[tau0, 1 - tau0]``.

    :meth:`midpoints` builds the default grid: ``m`` cells of equal width
    partition ``[tau0, 1 - tau0]`` and the grid points are the cell centres,
    so the composite midpoint rule over the grid integrates over exactly
    that interval.
    """

    tau0: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if not 0.0 < self.tau0 < 0.5:
            raise ConfigError(f"tau0 must lie in (0, 0.5), got {self.tau0}")
        if pts.size < 1:
            raise ConfigError("a quantile grid needs at least one point")
        if np.any(np.diff(pts) <= 0):
            raise ConfigError("grid points must be strictly increasing")
        lo, hi = self.tau0, 1.0 - self.tau0
        if pts[0] < lo - 1e-12 or pts[-1] > hi + 1e-12:
            raise ConfigError(f"grid points must lie in [{lo}, {hi}]")

    @classmethod
    def midpoints(cls, tau0: float = 0.05, m: int = 99) -> "QuantileGrid":
        if m < 1:
            raise ConfigError("grid size m must be at least 1")
        width = (1.0 - 2.0 * tau0) / m
        return cls(tau0, tau0 + width * (np.arange(m) + 0.5))

    @property
    def m(self) -> int:
        return self.points.size

    def cell_edges(self) -> np.ndarray:
        """Edges of the cells each point represents in the midpoint rule."""
        pts = self.points
        if pts.size == 1:
            return np.array([self.tau0, 1.0 - self.tau0])
        mids = 0.5 * (pts[1:] + pts[:-1])
        return np.concatenate([[max(self.tau0, pts[0] - (mids[0] - pts[0]))], mids,
                               [min(1.0 - self.tau0, pts[-1] + (pts[-1] - mids[-1]))]])

    def fingerprint(self) -> str:
        h = hashlib.sha256(np.float64(self.tau0).tobytes() + self.points.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class CqrOptions:
    """Solver settings for :func:`cqr_fit`.

    ``n_starts`` counts the cold start plus ``n_starts - 1`` random
    perturbations of its solution; perturbation ``k`` draws from
    ``numpy.random.default_rng([seed, k])`` so fits are reproducible and
    independent of call order. When the hyperplane arrangement of the
    problem has at most ``exhaustive_limit`` vertices, every vertex is also
    evaluated, which makes small problems exact.
    """

    n_starts: int = 5
    max_iter: int = 50
    perturb_scale: float = 0.5
    seed: int = 0
    warm_start: bool = True
    exhaustive_limit: int = 20000


@dataclass(frozen=True, eq=False)
class CqrFit:
    beta: np.ndarray
    objective: float
    active_count: int
    converged: bool
    iterations: int
    starts_used: int
    tau: float = 0.5
    degenerate: bool = False
    n_optimal_starts: int = 1


@dataclass(frozen=True, eq=False)
class QuantileProcess:
    grid: QuantileGrid
    coefficients: np.ndarray
    fits: tuple = field(default=())
    warm_start: bool = True

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        if c.shape[0] != self.grid.m:
            raise ValueError("one coefficient row per grid point is required")

    @property
    def degenerate(self) -> np.ndarray:
        return np.array([f.degenerate for f in self.fits], dtype=bool)

    def scaled(self, a: float, d=0.0) -> "QuantileProcess":
        """Process with rows ``a * beta + d`` (metadata dropped)."""
        return QuantileProcess(self.grid, a * self.coefficients + d, (), self.warm_start)


def _active(X, y, beta) -> np.ndarray:
    # fits within rounding of zero (interpolated censored rows) count as
    # censored; the threshold scales with y so fits are scale equivariant
    return (X @ beta) > ACTIVE_RTOL * float(np.max(np.abs(y), initial=0.0))


def _scale_estimate(X, y, beta) -> float:
    fit = X @ beta
    act = _active(X, y, beta)
    r = np.abs(y[act] - fit[act]) if act.any() else np.abs(y)
    s = float(np.median(r)) / 0.6745
    if not np.isfinite(s) or s <= 0:
        s = float(np.std(y))
    return s if s > 0 else 1.0


def _ilpa(X, y, tau, beta, max_iter, lp_start=None, visited=None):
    """Iterate active-set refits from ``beta``.

    Returns the best point visited (including the start), its objective, the
    iteration count and whether the active set stabilised. ``visited``
    holds active sets explored by earlier starts; the path from such a set
    is already known, so the run stops there.
    """
    best_b = beta
    best_f = cqr_objective(beta, X, y, tau)
    active = _active(X, y, beta)
    if visited is None:
        visited = set()
    key = active.tobytes()
    if key in visited:
        return best_b, best_f, 0, False
    visited.add(key)
    seen = {key}
    lp_b = lp_start
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size <= X.shape[1]:
            return best_b, best_f, it - 1, False
        try:
            sol = qr_solve(X[idx], y[idx], tau, beta0=lp_b)
        except DegenerateDesign:
            return best_b, best_f, it - 1, False
        beta = sol.beta
        lp_b = beta
        f = cqr_objective(beta, X, y, tau)
        if f < best_f - 1e-14 * (1.0 + abs(best_f)):
            best_b, best_f = beta, f
        new_active = _active(X, y, beta)
        if np.array_equal(new_active, active):
            return best_b, best_f, it, True
        key = new_active.tobytes()
        if key in seen:
            # the active sets cycle; the best point on the cycle is kept
            return best_b, best_f, it, False
        if key in visited:
            return best_b, best_f, it, False
        seen.add(key)
        visited.add(key)
        active = new_active
    return best_b, best_f, max_iter, False


def _vertex_search(X, y, tau, limit):
    """Global minimiser of the Powell objective by vertex enumeration.

    The objective is linear on every cell of the arrangement formed by the
    hyperplanes ``x_i' b = y_i`` and ``x_i' b = 0`` and bounded below, so
    its minimum is attained at a vertex of that arrangement. Returns
    ``None`` when the vertex count exceeds ``limit``.
    """
    n, k = X.shape
    if math.comb(2 * n, k) > limit:
        return None
    A = np.vstack([X, X])
    rhs = np.concatenate([y, np.zeros(n)])
    combos = np.array(list(itertools.combinations(range(2 * n), k)))
    M = A[combos]
    ok = np.abs(np.linalg.det(M)) > 1e-12 * np.prod(
        np.linalg.norm(M, axis=2) + 1e-300, axis=1)
    if not ok.any():
        return None
    B = np.linalg.solve(M[ok], rhs[combos[ok]][..., None])[..., 0]
    B = np.vstack([B, np.zeros(k)])
    u = y[:, None] - np.maximum(0.0, X @ B.T)
    f = np.mean((tau - (u <= 0)) * u, axis=0)
    fmin = f.min()
    tied = np.flatnonzero(f <= fmin + 1e-12 * (1.0 + abs(fmin)))
    j = tied[np.lexsort(B[tied].T[::-1])[0]]
    return B[j], float(f[j])


def _better(f, b, best_f, best_b) -> bool:
    tol = 1e-12 * (1.0 + abs(best_f))
    if f < best_f - tol:
        return True
    if f <= best_f + tol:
        # lexicographic order on the coefficient vector breaks ties
        diff = np.flatnonzero(np.abs(b - best_b) > 1e-12 * (1.0 + np.abs(best_b)))
        return bool(diff.size) and b[diff[0]] < best_b[diff[0]]
    return False


def cqr_fit(X_hat, y, tau, options: CqrOptions | None = None, *,
            warm_beta=None, full_start=None, strict: bool = False) -> CqrFit:
    """Censored quantile regression at level ``tau``.

    Parameters
    ----------
    X_hat : AugmentedDesign or array_like, shape (n, k)
    y : array_like, shape (n,)
        Non-negative responses censored at zero.
    tau : float in (0, 1)
    options : CqrOptions, optional
    warm_beta : array_like, optional
        Extra starting point (the neighbouring grid solution in
        :func:`quantile_process`).
    full_start : array_like, optional
        Warm start for the full-sample LP of the cold start; affects speed
        only.
    strict : bool
        Raise :class:`AllCensoredDegenerate` instead of returning a flagged
        fit when no observation is active at the optimum.
    """
    opts = options or CqrOptions()
    X = _design(X_hat)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if n <= k:
        raise DegenerateDesign(f"censored QR needs n > {k}, got n = {n}")

    b0 = qr_solve(X, y, tau, beta0=full_start).beta
    starts = [b0]
    visited: set = set()
    best_b, best_f, iters, conv = _ilpa(X, y, tau, b0, opts.max_iter, lp_start=b0,
                                        visited=visited)
    total_iters = iters
    optimal = 1
    if warm_beta is not None:
        wb = np.asarray(warm_beta, dtype=float)
        starts.append(wb)
        b, f, it, c = _ilpa(X, y, tau, wb, opts.max_iter, lp_start=wb, visited=visited)
        total_iters += it
        if _better(f, b, best_f, best_b):
            best_b, best_f, conv = b, f, c
    if opts.n_starts > 1:
        center = best_b
        sigma = _scale_estimate(X, y, center)
        sd = X.std(axis=0)
        colscale = np.where(sd > 0, sd, 1.0) * np.sqrt(k)
        for s in range(1, opts.n_starts):
            g = np.random.default_rng([opts.seed, s]).standard_normal(k)
            start = center + opts.perturb_scale * sigma * g / colscale
            starts.append(start)
            b, f, it, c = _ilpa(X, y, tau, start, opts.max_iter, lp_start=center,
                                visited=visited)
            total_iters += it
            if _better(f, b, best_f, best_b):
                best_b, best_f, conv = b, f, c
            elif abs(f - best_f) <= 1e-12 * (1.0 + abs(best_f)):
                optimal += 1

    if opts.exhaustive_limit:
        found = _vertex_search(X, y, tau, opts.exhaustive_limit)
        if found is not None and _better(found[1], found[0], best_f, best_b):
            best_b, best_f, conv = found[0], found[1], True

    active = int(np.count_nonzero(_active(X, y, best_b)))
    if active == 0:
        if strict:
            raise AllCensoredDegenerate(
                f"no observation is active at the optimum for tau = {tau}"
            )
        zero = np.zeros(k)
        return CqrFit(zero, cqr_objective(zero, X, y, tau), 0, False, total_iters,
                      len(starts), tau, True, optimal)
    return CqrFit(np.asarray(best_b, dtype=float), float(best_f), active, bool(conv),
                  total_iters, len(starts), tau, False, optimal)


def quantile_process(X_hat, y, grid: QuantileGrid,
                     options: CqrOptions | None = None) -> QuantileProcess:
    """Censored QR at every grid point, sweeping upward in ``tau``.

    With ``options.warm_start`` each level also starts from the previous
    level's solution. The sweep is sequential by construction.
    """
    opts = options or CqrOptions()
    X = _design(X_hat)
    y = np.asarray(y, dtype=float)
    rows, fits = [], []
    prev = None
    full = None
    for tau in grid.points:
        fit = cqr_fit(X, y, float(tau), opts,
                      warm_beta=prev if opts.warm_start else None,
                      full_start=full)
        fits.append(fit)
        rows.append(fit.beta)
        if not fit.degenerate:
            prev = fit.beta
        full = None if fit.degenerate else fit.beta
    n_deg = sum(f.degenerate for f in fits)
    if n_deg:
        log.warning("%d of %d grid levels are degenerate (no active observations)",
                    n_deg, grid.m)
    return QuantileProcess(grid, np.vstack(rows), tuple(fits), opts.warm_start)


def brute_force_cqr(X_hat, y, tau, box, step, budget: int = 10**7):
    """Exhaustive grid minimisation of the Powell objective (a test oracle).

    ``box`` is a sequence of ``(low, high)`` pairs, one per column. Returns
    the grid point with the smallest objective (first in lexicographic
    order among ties) and that objective.
    """
    X = _design(X_hat)
    y = np.asarray(y, dtype=float)
    if len(box) != X.shape[1]:
        raise ValueError("box needs one (low, high) pair per column")
    axes = []
    for lo, hi in box:
        m = int(np.floor((hi - lo) / step + 1e-9)) + 1
        ax = lo + step * np.arange(m)
        if lo <= 0.0 <= hi and not np.any(ax == 0.0):
            ax = np.sort(np.append(ax, 0.0))
        axes.append(ax)
    size = int(np.prod([a.size for a in axes], dtype=float))
    if size > budget:
        raise BudgetExceeded(f"brute force grid has {size} points (budget {budget})")
    mesh = np.meshgrid(*axes, indexing="ij")
    B = np.column_stack([m.ravel() for m in mesh])
    best_f, best_b = np.inf, None
    for start in range(0, B.shape[0], 20000):
        chunk = B[start:start + 20000]
        u = y[:, None] - np.maximum(0.0, X @ chunk.T)
        f = np.mean((tau - (u <= 0)) * u, axis=0)
        j = int(np.argmin(f))
        if f[j] < best_f:
            best_f, best_b = float(f[j]), chunk[j].copy()
    return best_b, best_f
