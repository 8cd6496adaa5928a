"""Linear quantile regression solved exactly as a linear program.

The kernel is a basis-exchange (exterior point) simplex specialised to the
check-loss problem ``min sum rho_tau(y - X b)``. A basis is a set ``h`` of
``p`` observations fitted exactly; from it the 2p edge directions are
priced and the steepest descent edge is followed to the minimiser of the
piecewise linear objective along that edge (a weighted median), which may
skip several vertices at once. Every pivot strictly decreases the
objective, so degenerate vertices cannot cycle. Optimality at a degenerate
vertex is confirmed with a small subgradient feasibility LP, and HiGHS is
used as a fallback and for the lexicographic tie-break among multiple
optima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import DegenerateDesign, NumericalError

__all__ = ["QRSolution", "qr_fit", "qr_solve", "check_objective", "lp_optimum"]

MAX_PIVOTS = 5000


@dataclass
class QRSolution:
    beta: np.ndarray
    objective: float          # sum of check losses (not averaged)
    basis: np.ndarray         # indices of the p interpolated observations
    unique: bool
    pivots: int
    method: str               # "simplex", "highs" or "lexmin"


def check_objective(X, y, beta, tau) -> float:
    u = y - X @ beta
    return float(np.sum(u * (tau - (u <= 0))))


def _pick_basis(X, order, p):
    """First ``p`` linearly independent rows of ``X`` taken in ``order``."""
    Q = np.zeros((p, 0))
    chosen = []
    for i in order:
        x = X[i]
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        v = x - Q @ (Q.T @ x)
        nv = np.linalg.norm(v)
        if nv > 1e-7 * nx:
            Q = np.column_stack([Q, v / nv])
            chosen.append(i)
            if len(chosen) == p:
                return np.array(chosen)
    raise DegenerateDesign(
        f"design has rank {len(chosen)} < {p} columns on this sample"
    )


def _start_basis(X, y, beta0):
    p = X.shape[1]
    if beta0 is None:
        beta0 = np.linalg.lstsq(X, y, rcond=None)[0]
    r = np.abs(y - X @ beta0)
    k = 4 * p
    if r.size > 2 * k:
        head = np.argpartition(r, k)[:k]
        head = head[np.lexsort((head, r[head]))]
        try:
            return _pick_basis(X, head, p)
        except DegenerateDesign:
            pass
    # stable sort keeps the choice deterministic under ties
    return _pick_basis(X, np.argsort(r, kind="stable"), p)


def _subgradient_ok(X, psi_sum, zero_idx, tau) -> bool:
    """Is ``0`` in the subdifferential given the zero-residual set?

    Solves for ``u_i in [tau - 1, tau]`` with ``X_Z^T u = -psi_sum``.
    """
    A = X[zero_idx].T
    res = linprog(np.zeros(len(zero_idx)), A_eq=A, b_eq=-psi_sum,
                  bounds=[(tau - 1.0, tau)] * len(zero_idx), method="highs")
    return res.status == 0


def _simplex(X, y, tau, h, max_pivots):
    n, p = X.shape
    scale_y = 1.0 + float(np.max(np.abs(y)))
    h = np.array(h, dtype=int)
    for it in range(max_pivots + 1):
        Xh = X[h]
        try:
            Binv = np.linalg.inv(Xh)
        except np.linalg.LinAlgError:
            return None
        beta = Binv @ y[h]
        r = y - X @ beta
        r[h] = 0.0
        zero = np.abs(r) <= 1e-11 * scale_y
        nz = ~zero
        psi = np.where(r > 0, tau, tau - 1.0)
        psi[zero] = 0.0
        g = psi @ X
        A = X @ Binv
        xi = g @ Binv
        zero[h] = False
        zidx = np.flatnonzero(zero)
        if zidx.size:
            Az = A[zidx]
            extra_plus = np.sum(np.where(-Az > 0, tau * -Az, (tau - 1.0) * -Az), axis=0)
            extra_minus = np.sum(np.where(Az > 0, tau * Az, (tau - 1.0) * Az), axis=0)
        else:
            extra_plus = extra_minus = 0.0
        d_plus = -xi + (1.0 - tau) + extra_plus
        d_minus = xi + tau + extra_minus
        D = np.concatenate([d_plus, d_minus])
        tol = 1e-9 * (1.0 + float(np.max(np.abs(xi))))
        j = int(np.argmin(D))
        if D[j] >= -tol:
            # exact copies of basis rows are already priced into D; the vertex
            # is simple for the problem with duplicates merged
            copies = bool(np.all((X[zidx][:, None, :] == Xh[None]).all(axis=2).any(axis=1)))
            if not copies and not _subgradient_ok(X, g, np.concatenate([h, zidx]), tau):
                return None
            # at a degenerate vertex every edge may rise while a face of optima
            # remains, so only simple vertices are certified unique
            unique = bool(np.all(D > tol)) and copies
            return beta, h, unique, it
        if it == max_pivots:
            return None
        k = j % p
        s = 1.0 if j < p else -1.0
        a = s * A[:, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = r / a
        cand = np.flatnonzero(nz & (a != 0.0) & (t > 0))
        if cand.size == 0:
            return None
        tc = t[cand]
        # the weighted median usually sits among the first few breakpoints
        if tc.size > 64:
            head = np.argpartition(tc, 32)[:33]
            order = head[np.lexsort((cand[head], tc[head]))]
            slope = D[j] + np.cumsum(np.abs(a[cand[order]]))
            stop = np.flatnonzero(slope >= -tol)
            if stop.size:
                h[k] = cand[order[stop[0]]]
                continue
        order = np.lexsort((cand, tc))
        slope = D[j] + np.cumsum(np.abs(a[cand[order]]))
        stop = np.flatnonzero(slope >= -tol)
        if stop.size == 0:
            return None
        h[k] = cand[order[stop[0]]]
    return None


def _lp_matrix(X):
    n = X.shape[0]
    eye = sparse.identity(n, format="csr")
    return sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")


def _highs_vertex(X, y, tau):
    n, p = X.shape
    c = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    A = _lp_matrix(X)
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise NumericalError(f"HiGHS failed on the quantile LP: {res.message}")
    return res.x[:p], float(res.fun)


def lp_optimum(X, y, tau) -> float:
    """Optimal check-loss sum from HiGHS; an oracle independent of the simplex."""
    X = np.asarray(X, dtype=float)
    return _highs_vertex(X, np.asarray(y, dtype=float), tau)[1]


def _snap(X, y, tau, beta, fstar):
    """Move an LP solution onto an interpolating vertex with the same objective."""
    p = X.shape[1]
    r = np.abs(y - X @ beta)
    try:
        h = _pick_basis(X, np.argsort(r, kind="stable"), p)
    except DegenerateDesign:
        return beta, None
    b = np.linalg.solve(X[h], y[h])
    if check_objective(X, y, b, tau) <= fstar + 1e-10 * (1.0 + abs(fstar)):
        return b, h
    return beta, None


def _lexmin(X, y, tau, beta, fstar):
    """Lexicographically smallest minimiser.

    By complementary slackness with any optimal dual ``u``, the optimal set
    is ``{b : r_i = 0 where u_i is interior, r_i >= 0 where u_i = tau,
    r_i <= 0 where u_i = tau - 1}``; it is searched with ``p`` small LPs in
    ``b`` alone.
    """
    n, p = X.shape
    r = y - X @ beta
    zero = np.abs(r) <= 1e-9 * (1.0 + float(np.max(np.abs(y))))
    u = np.where(r > 0, tau, tau - 1.0)
    zidx = np.flatnonzero(zero)
    if zidx.size:
        g = u[~zero] @ X[~zero]
        res = linprog(np.zeros(zidx.size), A_eq=X[zidx].T, b_eq=-g,
                      bounds=[(tau - 1.0, tau)] * zidx.size, method="highs")
        if res.status != 0:
            return None
        u[zidx] = res.x
    eps = 1e-9
    eq = (u > tau - 1.0 + eps) & (u < tau - eps)
    upper = ~eq & (u >= tau - eps)      # r >= 0, i.e. x'b <= y
    lower = ~eq & ~upper                # r <= 0
    if eq.any() and np.linalg.matrix_rank(X[eq]) == p:
        return np.linalg.lstsq(X[eq], y[eq], rcond=None)[0]
    A_ub = np.vstack([X[upper], -X[lower]])
    b_ub = np.concatenate([y[upper], -y[lower]])
    A_eq = X[eq] if eq.any() else None
    b_eq = y[eq] if eq.any() else None
    bounds = [(None, None)] * p
    out = np.empty(p)
    for k in range(p):
        c = np.zeros(p)
        c[k] = 1.0
        res = linprog(c, A_ub=A_ub if A_ub.size else None,
                      b_ub=b_ub if A_ub.size else None, A_eq=A_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
        if res.status != 0:
            return None
        out[k] = res.x[k]
        slack = 1e-11 * (1.0 + abs(out[k]))
        bounds[k] = (out[k] - slack, out[k] + slack)
    return out


def qr_solve(X, y, tau, *, beta0=None, lexicographic=True,
             max_pivots=MAX_PIVOTS) -> QRSolution:
    """Exact linear quantile regression with solution metadata.

    Parameters
    ----------
    X : array_like, shape (n, p)
    y : array_like, shape (n,)
    tau : float in (0, 1)
    beta0 : array_like, optional
        Warm start; the initial basis is the ``p`` independent observations
        with the smallest absolute residual at ``beta0`` (least squares when
        omitted).
    lexicographic : bool
        When the optimum is not unique, return the lexicographically
        smallest optimal vertex.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if n <= p:
        raise DegenerateDesign(f"quantile regression needs n > {p}, got n = {n}")
    h = _start_basis(X, y, beta0)
    out = _simplex(X, y, tau, h, max_pivots)
    if out is not None:
        beta, h, unique, pivots = out
        method = "simplex"
    else:
        if np.linalg.matrix_rank(X) < p:
            raise DegenerateDesign("design is rank deficient on this sample")
        beta, _ = _highs_vertex(X, y, tau)
        beta, h = _snap(X, y, tau, beta, check_objective(X, y, beta, tau))
        unique, pivots, method = False, 0, "highs"
    fstar = check_objective(X, y, beta, tau)
    if not unique and lexicographic:
        lb = _lexmin(X, y, tau, beta, fstar)
        if lb is not None:
            lb, lh = _snap(X, y, tau, lb, fstar)
            if check_objective(X, y, lb, tau) <= fstar + 1e-9 * (1.0 + abs(fstar)):
                beta, h, method = lb, lh, "lexmin"
                fstar = check_objective(X, y, beta, tau)
    if h is None:
        h = np.array([], dtype=int)
    return QRSolution(np.asarray(beta, dtype=float), fstar, np.asarray(h), unique,
                      pivots, method)


def qr_fit(X, y, tau, **options) -> np.ndarray:
    """Coefficients of the linear ``tau``-quantile regression of ``y`` on ``X``."""
    return qr_solve(X, y, tau, **options).beta
