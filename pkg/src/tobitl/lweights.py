"""Weight measures on (0, 1) and L-estimates of the quantile process.

A weight measure is a density ``J1`` on a compact interval plus a finite
list of atoms. Integrating the censored quantile process against it gives
the L-estimate ``L_n = int beta_n(tau) dmu(tau)``.

The deterministic scheme is a midpoint rule in which grid point ``tau_j``
carries the exact measure of its cell (the density integrated over the
cell), so any mass-one measure integrates a constant process exactly.
Atoms are evaluated at their own location.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .cqr import QuantileGrid, QuantileProcess
from .errors import ConfigError, SupportUncovered

__all__ = [
    "WeightMeasure",
    "LEstimate",
    "MonteCarloScheme",
    "trimmed_weight",
    "winsorized_weight",
    "parabolic_weight",
    "point_mass_weight",
    "smoothed_quantile_weight",
    "parse_weight",
    "grid_for_weights",
    "integrate_process",
    "population_l0",
    "KERNELS",
]

MASS_TOL = 1e-9
GRID_TOL = 1e-12


# symmetric densities on [-1, 1] with their distribution functions
KERNELS: dict[str, tuple[Callable, Callable]] = {
    "uniform": (
        lambda u: np.where(np.abs(u) <= 1, 0.5, 0.0),
        lambda u: 0.5 * (np.clip(u, -1, 1) + 1.0),
    ),
    "triangular": (
        lambda u: np.clip(1.0 - np.abs(u), 0.0, None),
        lambda u: np.where(np.clip(u, -1, 1) < 0,
                           0.5 * (1 + np.clip(u, -1, 1)) ** 2,
                           1 - 0.5 * (1 - np.clip(u, -1, 1)) ** 2),
    ),
    "epanechnikov": (
        lambda u: np.where(np.abs(u) <= 1, 0.75 * (1 - u * u), 0.0),
        lambda u: 0.5 + 0.75 * np.clip(u, -1, 1) - 0.25 * np.clip(u, -1, 1) ** 3,
    ),
    "biweight": (
        lambda u: np.where(np.abs(u) <= 1, 15.0 / 16.0 * (1 - u * u) ** 2, 0.0),
        lambda u: 0.5 + 15.0 / 16.0 * (np.clip(u, -1, 1)
                                       - 2.0 / 3.0 * np.clip(u, -1, 1) ** 3
                                       + 0.2 * np.clip(u, -1, 1) ** 5),
    ),
}


@dataclass(frozen=True, eq=False)
class WeightMeasure:
    """``mu = density on support + sum of atoms``.

    Attributes
    ----------
    kind : str
        ``trimmed``, ``winsorized``, ``parabolic``, ``point_mass``,
        ``smoothed_quantile`` or ``custom``.
    density : callable or None
        Vectorised ``tau -> J1(tau)``; zero outside ``support``.
    support : (float, float) or None
    atoms : tuple of (location, mass)
    cdf : callable or None
        ``tau -> int_{support[0]}^{tau} J1``; used for exact cell masses.
        Numerical quadrature is used when absent.
    params : dict
        Constructor arguments, echoed in reports.
    normalizer : float
        Factor applied to the raw density to reach unit mass (1 unless the
        density was truncated).
    location : bool
        Location functionals must have total mass one.
    """

    kind: str
    density: Callable | None = None
    support: tuple[float, float] | None = None
    atoms: tuple = ()
    cdf: Callable | None = None
    params: dict = field(default_factory=dict)
    normalizer: float = 1.0
    location: bool = True

    def __post_init__(self):
        if (self.density is None) != (self.support is None):
            raise ConfigError("a density needs a support interval and vice versa")
        if self.support is not None:
            a, b = (float(v) for v in self.support)
            if not 0.0 <= a < b <= 1.0:
                raise ConfigError(f"density support ({a}, {b}) must lie in [0, 1]")
            object.__setattr__(self, "support", (a, b))
        atoms = tuple((float(t), float(m)) for t, m in self.atoms)
        for t, m in atoms:
            if not 0.0 < t < 1.0:
                raise ConfigError(f"atom location {t} must lie in (0, 1)")
            if not m > 0.0:
                raise ConfigError(f"atom mass {m} must be positive")
        object.__setattr__(self, "atoms", atoms)
        if self.location and abs(self.total_mass() - 1.0) > MASS_TOL:
            raise ConfigError(
                f"{self.kind} weight has total mass {self.total_mass():.12g}, not 1"
            )

    def __reduce__(self):
        # built-in weights hold closures; rebuild them from their parameters
        # so they can be sent to worker processes
        if self.kind in _BUILDERS:
            return _rebuild, (self.kind, dict(self.params))
        return object.__reduce__(self)

    def mass_between(self, lo, hi) -> np.ndarray:
        """Density mass of each interval ``[lo_j, hi_j]`` (vectorised)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.density is None:
            return np.zeros(lo.shape)
        a, b = self.support
        lo_c = np.clip(lo, a, b)
        hi_c = np.clip(hi, a, b)
        if self.cdf is not None:
            return np.maximum(self.cdf(hi_c) - self.cdf(lo_c), 0.0)
        out = np.zeros(lo.shape)
        for j, (u, v) in enumerate(zip(lo_c, hi_c)):
            if v > u:
                out[j] = integrate.quad(self.density, u, v, epsabs=1e-13,
                                        epsrel=1e-12, limit=200)[0]
        return out

    def density_mass(self) -> float:
        if self.density is None:
            return 0.0
        a, b = self.support
        return float(self.mass_between(a, b)[0])

    def total_mass(self) -> float:
        return self.density_mass() + sum(m for _, m in self.atoms)

    def describe(self) -> dict:
        out = {"kind": self.kind, **self.params}
        if self.normalizer != 1.0:
            out["normalizer"] = self.normalizer
        return out

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        vals = [v if isinstance(v, str) else f"{v:g}" for v in self.params.values()]
        return self.kind + ":" + ",".join(vals)

    @classmethod
    def custom(cls, density=None, support=None, atoms=(), *, normalize=False,
               location=True) -> "WeightMeasure":
        """User-supplied measure; ``normalize`` rescales it to unit mass."""
        raw = cls("custom", density, support, atoms, location=False)
        if not normalize:
            return cls("custom", density, support, atoms, location=location)
        c = 1.0 / raw.total_mass()
        dens = None if density is None else (lambda t, f=density: c * f(t))
        return cls("custom", dens, support, tuple((t, c * m) for t, m in raw.atoms),
                   normalizer=c, location=location)


@dataclass(frozen=True)
class MonteCarloScheme:
    """Integration by ``draws`` uniform levels: ``(1/M) sum beta(tau_j) J1(tau_j)``.

    ``beta`` between grid points is read from the grid cell containing
    ``tau_j``, so the scheme converges to the deterministic one.
    """

    draws: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise ConfigError("Monte Carlo integration needs at least one draw")


@dataclass(frozen=True, eq=False)
class LEstimate:
    value: np.ndarray
    weight: dict
    scheme: str
    grid_fingerprint: str
    label: str = ""

    def __post_init__(self):
        v = np.array(self.value, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "value", v)
        if not np.all(np.isfinite(v)):
            raise ValueError("L-estimate has non-finite entries")


def _alpha(alpha_t) -> float:
    a = float(alpha_t)
    if not 0.0 < a < 0.5:
        raise ConfigError(f"trimming proportion must lie in (0, 0.5), got {alpha_t}")
    return a


def _flat(lo, hi, c):
    return (lambda t: np.where((np.asarray(t) >= lo) & (np.asarray(t) <= hi), c, 0.0),
            lambda t: c * (np.asarray(t, dtype=float) - lo))


def trimmed_weight(alpha_t: float) -> WeightMeasure:
    """Density ``1/(1 - 2a)`` on ``(a, 1 - a)``: the trimmed mean."""
    a = _alpha(alpha_t)
    dens, cdf = _flat(a, 1.0 - a, 1.0 / (1.0 - 2.0 * a))
    return WeightMeasure("trimmed", dens, (a, 1.0 - a), (), cdf, {"alpha": a})


def winsorized_weight(alpha_t: float) -> WeightMeasure:
    """Density 1 on ``(a, 1 - a)`` plus mass ``a`` at each of ``a`` and ``1 - a``."""
    a = _alpha(alpha_t)
    dens, cdf = _flat(a, 1.0 - a, 1.0)
    return WeightMeasure("winsorized", dens, (a, 1.0 - a), ((a, a), (1.0 - a, a)),
                         cdf, {"alpha": a})


def parabolic_weight(tau0: float = 0.05) -> WeightMeasure:
    """``J1(tau) = 6 tau (1 - tau)`` restricted to ``[tau0, 1 - tau0]``.

    The restriction is renormalised to unit mass; the factor is stored in
    ``normalizer``. ``tau0 = 0`` gives the untruncated density.
    """
    t0 = float(tau0)
    if not 0.0 <= t0 < 0.5:
        raise ConfigError(f"parabolic truncation must lie in [0, 0.5), got {tau0}")
    F = lambda t: 3.0 * t * t - 2.0 * t ** 3  # noqa: E731
    c = 1.0 / (F(1.0 - t0) - F(t0))

    def dens(t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= t0) & (t <= 1.0 - t0), c * 6.0 * t * (1.0 - t), 0.0)

    def cdf(t):
        return c * (F(np.asarray(t, dtype=float)) - F(t0))

    return WeightMeasure("parabolic", dens, (t0, 1.0 - t0), (), cdf, {"tau0": t0},
                         normalizer=c)


def point_mass_weight(tau: float) -> WeightMeasure:
    t = float(tau)
    if not 0.0 < t < 1.0:
        raise ConfigError(f"point mass location must lie in (0, 1), got {tau}")
    return WeightMeasure("point_mass", atoms=((t, 1.0),), params={"tau": t})


def smoothed_quantile_weight(kernel="epanechnikov", pi: float = 0.5,
                             h: float = 0.25) -> WeightMeasure:
    """Kernel-smoothed quantile at ``pi``: density ``K((tau - pi)/h)/h``.

    ``kernel`` is a name from :data:`KERNELS` or a symmetric density on
    ``[-1, 1]``. Requires ``0 < h < min(pi, 1 - pi)``.
    """
    pi, h = float(pi), float(h)
    if not 0.0 < pi < 1.0:
        raise ConfigError(f"pi must lie in (0, 1), got {pi}")
    if not 0.0 < h < min(pi, 1.0 - pi):
        raise ConfigError(f"bandwidth h = {h} must lie in (0, min(pi, 1 - pi))")
    if isinstance(kernel, str):
        if kernel not in KERNELS:
            raise ConfigError(f"unknown kernel '{kernel}'; choose from {sorted(KERNELS)}")
        K, Kcdf = KERNELS[kernel]
        name = kernel
        cdf = lambda t: Kcdf((np.asarray(t, dtype=float) - pi) / h)  # noqa: E731
    else:
        K, name, cdf = kernel, getattr(kernel, "__name__", "custom"), None
    dens = lambda t: np.asarray(K((np.asarray(t, dtype=float) - pi) / h)) / h  # noqa: E731
    if cdf is not None:
        raw_cdf = cdf
        cdf = lambda t: raw_cdf(t) - raw_cdf(pi - h)  # noqa: E731
    return WeightMeasure("smoothed_quantile", dens, (pi - h, pi + h), (), cdf,
                         {"kernel": name, "pi": pi, "h": h})


_BUILDERS = {
    "trimmed": lambda p: trimmed_weight(p["alpha"]),
    "winsorized": lambda p: winsorized_weight(p["alpha"]),
    "parabolic": lambda p: parabolic_weight(p["tau0"]),
    "point_mass": lambda p: point_mass_weight(p["tau"]),
    "smoothed_quantile": lambda p: smoothed_quantile_weight(p["kernel"], p["pi"], p["h"]),
}


def _rebuild(kind, params) -> WeightMeasure:
    return _BUILDERS[kind](params)


def parse_weight(spec: str) -> WeightMeasure:
    """Build a weight from ``kind[:param[,param]]``, e.g. ``trimmed:0.01``."""
    kind, _, arg = spec.strip().partition(":")
    kind = kind.strip().lower().replace("-", "_")
    vals = [v for v in arg.split(",") if v.strip()] if arg else []
    try:
        nums = [float(v) for v in vals if kind != "smoothed_quantile"]
    except ValueError:
        raise ConfigError(f"bad weight parameter in '{spec}'") from None
    if kind in ("trimmed", "winsorized"):
        if len(nums) != 1:
            raise ConfigError(f"'{kind}' takes one parameter, e.g. {kind}:0.01")
        return (trimmed_weight if kind == "trimmed" else winsorized_weight)(nums[0])
    if kind == "parabolic":
        if len(nums) > 1:
            raise ConfigError("'parabolic' takes at most one parameter (tau0)")
        return parabolic_weight(*nums)
    if kind == "point_mass":
        if len(nums) != 1:
            raise ConfigError("'point_mass' takes one parameter, e.g. point_mass:0.5")
        return point_mass_weight(nums[0])
    if kind == "smoothed_quantile":
        # smoothed_quantile:kernel,pi,h
        if len(vals) != 3:
            raise ConfigError("use smoothed_quantile:kernel,pi,h")
        try:
            return smoothed_quantile_weight(vals[0].strip(), float(vals[1]), float(vals[2]))
        except ValueError:
            raise ConfigError(f"bad weight parameter in '{spec}'") from None
    raise ConfigError(
        f"unknown weight kind '{kind}' (trimmed, winsorized, parabolic, "
        "point_mass, smoothed_quantile)"
    )


def _lower_edge(mu: WeightMeasure) -> float:
    lows = [t for t, _ in mu.atoms]
    if mu.support is not None:
        lows.append(mu.support[0])
    return min(lows, default=0.5)


def grid_for_weights(weights: Sequence[WeightMeasure], tau0: float = 0.05,
                     m: int = 99) -> QuantileGrid:
    """Midpoint grid wide enough for every weight.

    The range ``[tau0, 1 - tau0]`` is widened when a weight reaches further
    into the tails (an upper edge ``b`` counts as a lower edge ``1 - b``).
    """
    lo = tau0
    for mu in weights:
        edges = [t for t, _ in mu.atoms]
        if mu.support is not None:
            edges.extend(mu.support)
        for e in edges:
            lo = min(lo, e, 1.0 - e)
    if lo <= 0.0:
        raise SupportUncovered("a weight reaches tau = 0 or 1; truncate it first")
    return QuantileGrid.midpoints(lo, m)


def _check_support(grid: QuantileGrid, mu: WeightMeasure):
    edges = grid.cell_edges()
    lo, hi = edges[0], edges[-1]
    if mu.support is not None:
        a, b = mu.support
        if a < lo - GRID_TOL or b > hi + GRID_TOL:
            raise SupportUncovered(
                f"{mu.kind} weight has support [{a:g}, {b:g}] but the grid covers "
                f"[{lo:g}, {hi:g}]"
            )
    for t, _ in mu.atoms:
        if t < grid.tau0 - GRID_TOL or t > 1.0 - grid.tau0 + GRID_TOL:
            raise SupportUncovered(
                f"atom at {t:g} lies outside the grid range "
                f"[{grid.tau0:g}, {1 - grid.tau0:g}]"
            )


def _atom_value(grid, coefs, t, evaluate):
    hit = np.flatnonzero(np.abs(grid.points - t) <= GRID_TOL)
    if hit.size:
        return coefs[hit[0]]
    if evaluate is None:
        raise ConfigError(
            f"atom at tau = {t:g} is not a grid point; pass an evaluator that "
            "fits the process at that level"
        )
    return np.asarray(evaluate(t), dtype=float)


def quadrature_weights(grid: QuantileGrid, mu: WeightMeasure, scheme="midpoint"):
    """Per-grid-point weights of the density part of ``mu``.

    For the midpoint scheme these are the exact cell masses. For a
    :class:`MonteCarloScheme` they are the draw counts per cell times
    ``J1(tau_j) / M``.
    """
    _check_support(grid, mu)
    edges = grid.cell_edges()
    if isinstance(scheme, MonteCarloScheme):
        if mu.density is None:
            return np.zeros(grid.m)
        u = np.random.default_rng(scheme.seed).uniform(size=scheme.draws)
        cell = np.searchsorted(edges, u, side="right") - 1
        inside = (cell >= 0) & (cell < grid.m)
        wts = np.asarray(mu.density(u), dtype=float) * inside
        return np.bincount(cell[inside], weights=wts[inside], minlength=grid.m) / scheme.draws
    if scheme != "midpoint":
        raise ConfigError(f"unknown integration scheme {scheme!r}")
    return mu.mass_between(edges[:-1], edges[1:])


def _scheme_name(scheme) -> str:
    if isinstance(scheme, MonteCarloScheme):
        return f"monte_carlo(M={scheme.draws},seed={scheme.seed})"
    return "midpoint(m)"


def _integrate(grid, coefs, mu, scheme, evaluate):
    w = quadrature_weights(grid, mu, scheme)
    value = w @ coefs
    for t, mass in mu.atoms:
        value = value + mass * _atom_value(grid, coefs, t, evaluate)
    return value


def integrate_process(proc: QuantileProcess, mu: WeightMeasure, scheme="midpoint",
                      evaluate: Callable | None = None) -> LEstimate:
    """``L_n = int beta_n(tau) dmu(tau)`` over the process grid.

    Parameters
    ----------
    proc : QuantileProcess
    mu : WeightMeasure
    scheme : ``"midpoint"`` or MonteCarloScheme
    evaluate : callable, optional
        ``tau -> beta_n(tau)`` used for atoms that are not grid points.

    Raises
    ------
    SupportUncovered
        If ``mu`` puts mass outside the range the grid represents.
    """
    value = _integrate(proc.grid, proc.coefficients, mu, scheme, evaluate)
    name = _scheme_name(scheme).replace("(m)", f"(m={proc.grid.m})")
    return LEstimate(value, mu.describe(), name, proc.grid.fingerprint(), mu.label)


def population_l0(beta0_of_tau: Callable, mu: WeightMeasure, grid: QuantileGrid,
                  scheme="midpoint") -> np.ndarray:
    """The same quadrature applied to a known coefficient path ``tau -> beta_0(tau)``."""
    coefs = np.vstack([np.asarray(beta0_of_tau(t), dtype=float) for t in grid.points])
    return _integrate(grid, coefs, mu, scheme, beta0_of_tau)
