"""Plug-in inference for L-estimates.

Observation ``i`` contributes the influence term

    h_i = int v_i(tau) dmu(tau),
    v_i(tau) = J2b(tau)^{-1} {Psi2_i(tau) + s * J2d(tau) J1^{-1} Psi1_i},

with ``s = -1`` by default (``first_stage_sign``). The long-run variance
of ``h`` is estimated with a Bartlett-kernel HAC sum and gives the
covariance of ``sqrt(n) (L_n - L_0)``.

Both smoothed Jacobians are averages, ``1/(2 n h_n) sum ...``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .cqr import QuantileProcess
from .errors import ConfigError, NonPsd, SingularJacobian
from .first_stage import FirstStageFit
from .lweights import LEstimate, WeightMeasure, quadrature_weights
from .model import Dataset, build_augmented_design, build_instrument_design

__all__ = [
    "ScoreConfig",
    "JacobianHat",
    "OmegaHat",
    "VHat",
    "ConfidenceIntervals",
    "psi1",
    "psi2",
    "bartlett_kernel",
    "default_lag_truncation",
    "default_bandwidth",
    "hac",
    "jacobian_hat",
    "influence_h",
    "omega_hat",
    "l_confidence_interval",
    "hac_v_hat",
    "beta_tau_covariance",
]

log = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-10
PSD_RTOL = 1e-8


def bartlett_kernel(t):
    """``K(t) = (1 - |t|) 1{|t| <= 1}``."""
    t = np.abs(np.asarray(t, dtype=float))
    out = np.where(t <= 1.0, 1.0 - t, 0.0)
    return float(out) if out.ndim == 0 else out


KERNELS = {"bartlett": bartlett_kernel}


def default_lag_truncation(n: int) -> int:
    """``floor((4 n / 100)^(1/3))``, at least 1."""
    b = math.floor((4.0 * n / 100.0) ** (1.0 / 3.0) + 1e-12)
    return max(1, b)


@dataclass(frozen=True)
class ScoreConfig:
    """Bandwidth ``h_n`` of the smoothed Jacobians and HAC settings."""

    h_n: float
    b_n: int
    kernel: str = "bartlett"
    first_stage_sign: float = -1.0

    def __post_init__(self):
        if not (np.isfinite(self.h_n) and self.h_n > 0):
            raise ConfigError(f"bandwidth must be positive, got {self.h_n}")
        if int(self.b_n) != self.b_n or self.b_n < 1:
            raise ConfigError(f"lag truncation must be an integer >= 1, got {self.b_n}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown HAC kernel '{self.kernel}'; only 'bartlett'")
        if self.first_stage_sign not in (-1.0, 1.0):
            raise ConfigError("first_stage_sign must be -1 or +1")

    @property
    def kernel_fn(self) -> Callable:
        return KERNELS[self.kernel]


def psi1(w, Z, delta) -> np.ndarray:
    """First-stage score ``(w - z' delta) z`` (rows for a sample)."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        return (float(w) - Z @ delta) * Z
    return (np.asarray(w, dtype=float) - Z @ delta)[:, None] * Z


def psi2(y, X, beta, tau) -> np.ndarray:
    """Censored QR score ``1{x' b > 0} (tau - 1{y - x' b < 0}) x``."""
    X = np.asarray(X, dtype=float)
    fit = X @ np.asarray(beta, dtype=float)
    u = np.asarray(y, dtype=float) - fit
    s = (fit > 0) * (tau - (u < 0))
    return s * X if X.ndim == 1 else s[:, None] * X


def _median_index(proc: QuantileProcess) -> int:
    return int(np.argmin(np.abs(proc.grid.points - 0.5)))


def default_bandwidth(X, y, beta_median) -> float:
    """``sigma * n^(-1/3)``, ``sigma`` = MAD / 0.6745 of the active median residuals."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    fit = X @ beta_median
    act = fit > 0
    r = np.abs(y[act] - fit[act]) if act.any() else np.abs(y - np.median(y))
    sigma = float(np.median(r)) / 0.6745
    if not sigma > 0:
        sigma = float(np.std(y)) or 1.0
    return sigma * X.shape[0] ** (-1.0 / 3.0)


def default_score_config(d: Dataset, proc: QuantileProcess, fs: FirstStageFit,
                         h_n=None, b_n=None, **kw) -> ScoreConfig:
    if h_n is None:
        X = build_augmented_design(d, fs.residuals).X_hat
        h_n = default_bandwidth(X, d.y, proc.coefficients[_median_index(proc)])
    if b_n is None:
        b_n = default_lag_truncation(d.n)
    return ScoreConfig(float(h_n), int(b_n), **kw)


def hac(A, B=None, b_n: int = 1, kernel=bartlett_kernel) -> np.ndarray:
    """``(1/n) sum_j K(j/b_n) sum_i A_i B_{i+j}'`` over all valid ``i`` and ``j``.

    Computed as ``G_0 + sum_{j>=1} K(j/b_n) (G_j(A, B) + G_j(B, A)')`` with
    ``G_j(A, B) = (1/n) sum_i A_i B_{i+j}'``. ``B`` defaults to ``A``.
    """
    A = np.asarray(A, dtype=float)
    B = A if B is None else np.asarray(B, dtype=float)
    n = A.shape[0]
    out = A.T @ B / n
    for j in range(1, n):
        k = kernel(j / b_n)
        if k == 0.0:
            if j >= b_n:
                break
            continue
        out = out + k * (A[:-j].T @ B[j:] + (B[:-j].T @ A[j:]).T) / n
    return out


@dataclass(frozen=True, eq=False)
class JacobianHat:
    """Smoothed Jacobian blocks on the process grid.

    ``J2_beta[j]`` and ``J2_delta[j]`` belong to ``grid.points[j]``;
    ``singular[j]`` marks levels whose ``J2_beta`` cannot be inverted.
    """

    J1_delta: np.ndarray
    J2_beta: np.ndarray
    J2_delta: np.ndarray
    rho1: np.ndarray
    singular: np.ndarray
    taus: np.ndarray
    h_n: float


def _blocks(X, y, Z, beta, h):
    n = X.shape[0]
    fit = X @ beta
    sel = (fit > 0) & (np.abs(y - fit) <= h)
    Xs = X[sel]
    scale = 1.0 / (2.0 * n * h)
    J2b = scale * Xs.T @ Xs
    J2d = scale * beta[-1] * Xs.T @ Z[sel]
    return J2b, J2d


def _is_singular(M) -> bool:
    s = np.linalg.svd(M, compute_uv=False)
    return not (s[0] > 0 and s[-1] >= SINGULAR_RTOL * s[0])


def jacobian_hat(d: Dataset, proc: QuantileProcess, fs: FirstStageFit,
                 cfg: ScoreConfig) -> JacobianHat:
    """``J1 = (1/n) sum z z'`` and the smoothed second-stage blocks per level.

    ``rho1`` at each level is the last coefficient of ``beta_n(tau)``.
    Singular ``J2_beta`` levels are flagged rather than raised.
    """
    X = build_augmented_design(d, fs.residuals).X_hat
    Z = build_instrument_design(d).Z
    J1 = Z.T @ Z / d.n
    m = proc.grid.m
    k, k1 = X.shape[1], Z.shape[1]
    J2b = np.empty((m, k, k))
    J2d = np.empty((m, k, k1))
    singular = np.zeros(m, dtype=bool)
    for j in range(m):
        J2b[j], J2d[j] = _blocks(X, d.y, Z, proc.coefficients[j], cfg.h_n)
        singular[j] = _is_singular(J2b[j])
    if singular.any():
        bad = proc.grid.points[singular]
        log.warning("smoothed Jacobian is singular at %d of %d levels (tau = %s)",
                    bad.size, m, np.array2string(bad, precision=3, threshold=8))
    return JacobianHat(J1, J2b, J2d, proc.coefficients[:, -1].copy(), singular,
                       proc.grid.points.copy(), cfg.h_n)


def _v_hat(J2b, J2d, J1inv_psi1, psi2_mat, sign):
    rhs = psi2_mat + sign * J1inv_psi1 @ J2d.T
    # rows of rhs are observations: v_i = J2b^{-1} rhs_i
    return np.linalg.solve(J2b, rhs.T).T


def influence_h(d: Dataset, proc: QuantileProcess, fs: FirstStageFit, J: JacobianHat,
                mu: WeightMeasure, *, beta_at: Callable | None = None,
                scheme="midpoint", first_stage_sign: float = -1.0) -> np.ndarray:
    """Influence matrix ``(n, p + 2)`` with rows ``h_i = int v_i(tau) dmu(tau)``.

    The density part uses the same weights as :func:`integrate_process`;
    levels with singular ``J2_beta`` are dropped and the remaining weights
    rescaled to the same total. Atoms use ``v_i`` at their own level, with
    ``beta_at`` supplying ``beta_n`` off the grid.
    """
    X = build_augmented_design(d, fs.residuals).X_hat
    Z = build_instrument_design(d).Z
    P1 = psi1(d.w, Z, fs.delta_hat)
    P1J = np.linalg.solve(J.J1_delta, P1.T).T
    w = quadrature_weights(proc.grid, mu, scheme)
    total = w.sum()
    usable = (w != 0) & ~J.singular
    if total != 0 and not usable.any():
        raise SingularJacobian("every level carrying weight has a singular Jacobian")
    if usable.any() and np.any((w != 0) & J.singular):
        w = np.where(usable, w, 0.0) * (total / w[usable].sum())
        log.warning("dropped %d singular levels from the influence integral",
                    int(np.count_nonzero(J.singular & (w == 0))))
    H = np.zeros(X.shape)
    for j in np.flatnonzero(usable):
        tau = proc.grid.points[j]
        P2 = psi2(d.y, X, proc.coefficients[j], tau)
        H += w[j] * _v_hat(J.J2_beta[j], J.J2_delta[j], P1J, P2, first_stage_sign)
    for tau, mass in mu.atoms:
        hit = np.flatnonzero(np.abs(proc.grid.points - tau) <= 1e-12)
        if hit.size:
            beta, J2b, J2d = (proc.coefficients[hit[0]], J.J2_beta[hit[0]],
                              J.J2_delta[hit[0]])
        else:
            if beta_at is None:
                raise ConfigError(f"atom at tau = {tau:g} needs beta_at to evaluate")
            beta = np.asarray(beta_at(tau), dtype=float)
            J2b, J2d = _blocks(X, d.y, Z, beta, J.h_n)
        if _is_singular(J2b):
            raise SingularJacobian(f"smoothed Jacobian is singular at atom tau = {tau:g}")
        P2 = psi2(d.y, X, beta, tau)
        H += mass * _v_hat(J2b, J2d, P1J, P2, first_stage_sign)
    return H


@dataclass(frozen=True, eq=False)
class OmegaHat:
    matrix: np.ndarray
    config: ScoreConfig
    grid_fingerprint: str = ""


def omega_hat(h, cfg: ScoreConfig, grid_fingerprint: str = "") -> OmegaHat:
    """Bartlett HAC long-run covariance of the influence rows."""
    h = np.asarray(h, dtype=float)
    if h.shape[0] < 2:
        raise ConfigError("the HAC estimate needs at least two observations")
    M = hac(h, None, cfg.b_n, cfg.kernel_fn)
    return OmegaHat(0.5 * (M + M.T), cfg, grid_fingerprint)


def _check_psd(M, what="covariance"):
    ev = np.linalg.eigvalsh(M)
    floor = -PSD_RTOL * max(float(np.trace(M)), 0.0)
    if ev[0] < floor or (np.trace(M) <= 0 and ev[0] < -1e-300):
        raise NonPsd(f"{what} has eigenvalue {ev[0]:.3g} below the floor {floor:.3g}")
    return ev


@dataclass(frozen=True, eq=False)
class ConfidenceIntervals:
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    degenerate: np.ndarray
    root_inv: np.ndarray
    n: int

    def standardized(self, l0) -> np.ndarray:
        """``sqrt(n) Omega^{-1/2} (L_n - l0)``, pseudo-inverse on the null space."""
        return math.sqrt(self.n) * self.root_inv @ (self.estimate - np.asarray(l0))

    def covers(self, l0) -> np.ndarray:
        l0 = np.asarray(l0, dtype=float)
        return (self.lower <= l0) & (l0 <= self.upper)


def l_confidence_interval(L: LEstimate | np.ndarray, Om: OmegaHat | np.ndarray, n: int,
                          level: float = 0.95) -> ConfidenceIntervals:
    """Per-coordinate intervals ``L_k +- z sqrt(Omega_kk / n)``."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"confidence level must lie in (0, 1), got {level}")
    est = np.asarray(L.value if isinstance(L, LEstimate) else L, dtype=float)
    M = np.asarray(Om.matrix if isinstance(Om, OmegaHat) else Om, dtype=float)
    ev, V = np.linalg.eigh(0.5 * (M + M.T))
    _check_psd(M, "Omega")
    tol = PSD_RTOL * max(float(ev.max()), 0.0)
    inv_root = np.where(ev > tol, 1.0 / np.sqrt(np.where(ev > tol, ev, 1.0)), 0.0)
    root_inv = (V * inv_root) @ V.T
    var = np.clip(np.diag(M), 0.0, None)
    se = np.sqrt(var / n)
    z = norm.ppf(0.5 + level / 2.0)
    degenerate = se == 0.0
    if degenerate.any():
        log.warning("zero-width intervals for %d coordinates", int(degenerate.sum()))
    return ConfidenceIntervals(est, se, est - z * se, est + z * se, level, degenerate,
                               root_inv, int(n))


@dataclass(frozen=True, eq=False)
class VHat:
    """HAC blocks at ``(tau, tau')``.

    ``bd`` is ``V_{beta,delta}(tau)`` and ``db`` is ``V_{beta,delta}(tau')'``;
    they are transposes of each other when ``tau == tau'``.
    """

    bb: np.ndarray
    bd: np.ndarray
    db: np.ndarray
    dd: np.ndarray
    tau: float
    tau_prime: float

    def matrix(self) -> np.ndarray:
        return np.block([[self.bb, self.bd], [self.db, self.dd]])


def _grid_index(proc, tau) -> int:
    j = int(np.argmin(np.abs(proc.grid.points - tau)))
    if abs(proc.grid.points[j] - tau) > 1e-9:
        raise ConfigError(f"tau = {tau:g} is not a grid point")
    return j


def hac_v_hat(d: Dataset, proc: QuantileProcess, fs: FirstStageFit, cfg: ScoreConfig,
              tau: float, tau_prime: float | None = None) -> VHat:
    """Kernel-weighted cross products of the two scores at ``(tau, tau')``.

    ``Psi2`` at ``tau'`` is evaluated at ``beta_n(tau')``.
    """
    tau_prime = tau if tau_prime is None else tau_prime
    j, jp = _grid_index(proc, tau), _grid_index(proc, tau_prime)
    X = build_augmented_design(d, fs.residuals).X_hat
    Z = build_instrument_design(d).Z
    P1 = psi1(d.w, Z, fs.delta_hat)
    P2 = psi2(d.y, X, proc.coefficients[j], proc.grid.points[j])
    P2p = P2 if jp == j else psi2(d.y, X, proc.coefficients[jp], proc.grid.points[jp])
    K, b = cfg.kernel_fn, cfg.b_n
    bb = hac(P2, P2p, b, K)
    bd = hac(P2, P1, b, K)
    db = bd.T if jp == j else hac(P2p, P1, b, K).T
    dd = hac(P1, None, b, K)
    if jp == j:
        bb = 0.5 * (bb + bb.T)
        dd = 0.5 * (dd + dd.T)
    return VHat(bb, bd, db, 0.5 * (dd + dd.T), float(tau), float(tau_prime))


def beta_tau_covariance(J: JacobianHat, V: VHat, tau: float | None = None, *,
                        exogenous: bool = False,
                        first_stage_sign: float = -1.0) -> np.ndarray:
    """Asymptotic covariance of ``sqrt(n) beta_n(tau)`` and ``sqrt(n) beta_n(tau')``.

    ``J2b^{-1} {V_bb + s J2d J1^{-1} V_db + s V_bd J1^{-T} J2d'
    + J2d J1^{-1} V_dd J1^{-T} J2d'} J2b'^{-T}`` with primed blocks at
    ``tau'``. ``exogenous=True`` keeps only ``V_bb``, the covariance when
    the first stage is ignored.
    """
    tau = V.tau if tau is None else tau
    j = int(np.argmin(np.abs(J.taus - tau)))
    jp = int(np.argmin(np.abs(J.taus - V.tau_prime)))
    for i in (j, jp):
        if J.singular[i]:
            raise SingularJacobian(f"smoothed Jacobian is singular at tau = {J.taus[i]:g}")
    A, Ap = J.J2_beta[j], J.J2_beta[jp]
    inner = V.bb.copy()
    if not exogenous:
        s = first_stage_sign
        J1inv = np.linalg.inv(J.J1_delta)
        D, Dp = J.J2_delta[j] @ J1inv, J.J2_delta[jp] @ J1inv
        inner += s * D @ V.db + s * V.bd @ Dp.T + D @ V.dd @ Dp.T
    out = np.linalg.solve(A, np.linalg.solve(Ap, inner.T).T)
    if j == jp:
        out = 0.5 * (out + out.T)
    return out
