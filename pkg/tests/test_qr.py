import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from tobitl.errors import DegenerateDesign
from tobitl.qr import check_objective, lp_optimum, qr_fit, qr_solve


def lp_oracle(X, y, tau, lexicographic=False):
    """Dense LP in (b, u+, u-), solved by HiGHS, with an optional lexicographic pass."""
    n, p = X.shape
    A = np.hstack([X, np.eye(n), -np.eye(n)])
    cost = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    f = res.fun
    if not lexicographic:
        return res.x[:p], f
    for k in range(p):
        c = np.zeros(p + 2 * n)
        c[k] = 1.0
        res = linprog(c, A_ub=cost[None], b_ub=[f + 1e-9], A_eq=A, b_eq=y,
                      bounds=bounds, method="highs")
        bounds[k] = (res.x[k], res.x[k])
    return res.x[:p], f


def test_median_odd():
    X = np.ones((3, 1))
    assert qr_fit(X, np.array([1.0, 2.0, 3.0]), 0.5)[0] == pytest.approx(2.0)


def test_median_even_smallest_minimiser():
    sol = qr_solve(np.ones((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]), 0.5)
    assert sol.beta[0] == pytest.approx(2.0)
    assert not sol.unique


def test_interpolation():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
    beta = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(qr_fit(X, X @ beta, 0.3), beta, atol=1e-10)


def test_rank_deficient():
    X = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.raises(DegenerateDesign):
        qr_solve(X, np.arange(6.0), 0.5)


def test_objective_matches_lp_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(5, 60))
        p = int(rng.integers(1, 4))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = X @ rng.normal(size=p) + rng.standard_t(3, size=n)
        tau = float(rng.uniform(0.05, 0.95))
        _, f = lp_oracle(X, y, tau)
        sol = qr_solve(X, y, tau)
        assert sol.objective <= f + 1e-8 * (1 + abs(f))
        assert check_objective(X, y, sol.beta, tau) == pytest.approx(sol.objective)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.25, 0.5, 0.75]))
def test_lexicographic_tie_break_on_discrete_data(seed, tau):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 14))
    X = np.column_stack([np.ones(n), rng.integers(0, 3, n), rng.integers(0, 2, n)])
    if np.linalg.matrix_rank(X) < 3:
        return
    y = rng.integers(0, 4, n).astype(float)
    b_lex, f = lp_oracle(X, y, tau, lexicographic=True)
    sol = qr_solve(X, y, tau)
    assert sol.objective == pytest.approx(f, abs=1e-9)
    np.testing.assert_allclose(sol.beta, b_lex, atol=1e-7)


def test_duplicated_rows_match_lexicographic_oracle():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(8, 30))
        base = rng.normal(size=(n, 2))
        yb = rng.normal(size=n)
        idx = rng.integers(0, n, n)
        X = np.column_stack([np.ones(n), base[idx]])
        if np.linalg.matrix_rank(X) < 3:
            continue
        tau = float(rng.choice([0.2, 0.5, 0.8]))
        b_lex, _ = lp_oracle(X, yb[idx], tau, lexicographic=True)
        np.testing.assert_allclose(qr_fit(X, yb[idx], tau), b_lex, atol=1e-7)


def test_lp_optimum_agrees_with_oracle():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = rng.normal(size=30)
    assert lp_optimum(X, y, 0.4) == pytest.approx(lp_oracle(X, y, 0.4)[1], rel=1e-9)


def test_warm_start_does_not_change_answer():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 3))])
    y = X @ np.array([1.0, 2.0, -1.0, 0.0]) + rng.normal(size=200)
    a = qr_solve(X, y, 0.7)
    b = qr_solve(X, y, 0.7, beta0=np.zeros(4))
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-10)
