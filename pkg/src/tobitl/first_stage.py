"""First-stage least squares of the endogenous regressor on the instruments."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SingularDesign
from .model import InstrumentDesign

__all__ = ["FirstStageFit", "ols_fit", "residuals"]

RANK_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class FirstStageFit:
    """Least-squares fit of ``w`` on ``Z``.

    ``delta_hat`` is ordered like the columns of ``Z``: the excluded
    instrument first, then the intercept and remaining exogenous columns.
    """

    delta_hat: np.ndarray
    residuals: np.ndarray
    gram_condition: float
    fingerprint: str


def _fingerprint(Z, w, delta) -> str:
    h = hashlib.sha256()
    for a in (Z, w, delta):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


def ols_fit(Z, w) -> FirstStageFit:
    """Solve ``min ||w - Z delta||^2`` through a thin SVD.

    Raises
    ------
    SingularDesign
        If the smallest singular value of ``Z`` is below ``1e-12`` times the
        largest, i.e. the instrument carries no information beyond the
        exogenous block.
    """
    Z = np.asarray(Z.Z if isinstance(Z, InstrumentDesign) else Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    w = np.asarray(w, dtype=float)
    n, k = Z.shape
    if w.shape != (n,):
        raise DataError(f"w has shape {w.shape}, expected ({n},)")
    if n <= k:
        raise DataError(f"first stage needs n > {k} observations, got {n}")
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    if s[-1] < RANK_RTOL * s[0]:
        raise SingularDesign(
            "instrument matrix is rank deficient "
            f"(singular values {s[0]:.3g} .. {s[-1]:.3g}); "
            "the excluded instrument is not identified"
        )
    delta = Vt.T @ ((U.T @ w) / s)
    e = w - Z @ delta
    return FirstStageFit(delta, e, float((s[0] / s[-1]) ** 2),
                         _fingerprint(Z, w, delta))


def residuals(fit: FirstStageFit, Z, w) -> np.ndarray:
    """Control-function residuals ``w - Z delta_hat``."""
    Z = np.asarray(Z.Z if isinstance(Z, InstrumentDesign) else Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return np.asarray(w, dtype=float) - Z @ fit.delta_hat
