import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from tobitl.cqr import (CqrOptions, QuantileGrid, brute_force_cqr, check_loss, cqr_fit,
                        cqr_objective, quantile_process)
from tobitl.errors import AllCensoredDegenerate, BudgetExceeded, ConfigError
from tobitl.first_stage import ols_fit
from tobitl.model import build_augmented_design, build_instrument_design
from tobitl.simulate import SimConfig, gen_dgp

from conftest import noiseless_dataset


def powell(beta, X, y, tau):
    # written out independently of the package
    total = 0.0
    for xi, yi in zip(X, y):
        u = yi - max(0.0, float(np.dot(xi, beta)))
        total += u * (tau - (1.0 if u <= 0 else 0.0))
    return total / len(y)


@pytest.mark.parametrize("u,tau,expected", [(2, 0.5, 1.0), (-1, 0.25, 0.75), (0, 0.9, 0.0)])
def test_check_loss(u, tau, expected):
    assert check_loss(u, tau) == pytest.approx(expected)


def test_check_loss_rejects_bad_tau():
    with pytest.raises(ValueError):
        check_loss(1.0, 1.0)


def test_objective_hand_values():
    y = np.array([0.3, 1.2, 0.0, 4.0])
    X = np.ones((4, 1))
    assert cqr_objective([0.0], X, y, 0.5) == pytest.approx(0.5 * y.mean())
    assert cqr_objective([1.0], X[:2], [1.0, 1.0], 0.3) == 0.0
    assert cqr_objective([1.0], X[:2], [0.0, 2.0], 0.5) == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.95))
def test_objective_matches_loop(seed, tau):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(9), rng.normal(size=9)])
    y = np.maximum(0, rng.normal(size=9))
    b = rng.normal(size=2)
    assert cqr_objective(b, X, y, tau) == pytest.approx(powell(b, X, y, tau), abs=1e-12)


def test_intercept_only_median():
    X = np.ones((5, 1))
    fit = cqr_fit(X, np.array([0.0, 0.0, 1.0, 2.0, 3.0]), 0.5)
    assert fit.beta[0] == pytest.approx(1.0, abs=1e-12)
    b, f = brute_force_cqr(X, [0, 0, 1, 2, 3], 0.5, [(-1, 4)], 1e-3)
    assert b[0] == pytest.approx(1.0, abs=1e-9)
    assert fit.objective == pytest.approx(f, abs=1e-12)
    assert fit.objective == pytest.approx(0.5)


def test_all_censored_is_degenerate():
    X = np.ones((3, 1))
    fit = cqr_fit(X, np.zeros(3), 0.4)
    assert fit.degenerate and fit.beta[0] == 0.0 and fit.objective == 0.0
    with pytest.raises(AllCensoredDegenerate):
        cqr_fit(X, np.zeros(3), 0.4, strict=True)


def test_exact_fit_recovered():
    d, beta = noiseless_dataset(n=40)
    X = build_augmented_design(d, ols_fit(build_instrument_design(d), d.w).residuals)
    for tau in (0.1, 0.5, 0.9):
        fit = cqr_fit(X, d.y, tau)
        np.testing.assert_allclose(fit.beta, beta, atol=1e-6)
        assert fit.objective == pytest.approx(0.0, abs=1e-12)


def test_exact_fit_process():
    d, beta = noiseless_dataset(n=30, seed=3)
    X = build_augmented_design(d, ols_fit(build_instrument_design(d), d.w).residuals)
    proc = quantile_process(X, d.y, QuantileGrid.midpoints(0.05, 9))
    np.testing.assert_allclose(proc.coefficients, np.tile(beta, (9, 1)), atol=1e-6)


def test_single_point_grid_matches_fit():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(60), rng.normal(size=60)])
    y = np.maximum(0, X @ [0.3, 1.0] + rng.normal(size=60))
    grid = QuantileGrid(0.05, [0.4])
    proc = quantile_process(X, y, grid)
    np.testing.assert_array_equal(proc.coefficients[0], cqr_fit(X, y, 0.4).beta)


def test_dgp_median_near_truth():
    d, _ = gen_dgp(SimConfig(n=1000, seed=4), 0)
    X = build_augmented_design(d, ols_fit(build_instrument_design(d), d.w).residuals)
    fit = cqr_fit(X, d.y, 0.5)
    assert np.all(np.abs(fit.beta - [1.0, 2.0, 3.0, 0.5]) < 0.15)


def test_process_intercept_tracks_error_quantile():
    d, _ = gen_dgp(SimConfig(n=1000, seed=8), 0)
    X = build_augmented_design(d, ols_fit(build_instrument_design(d), d.w).residuals)
    grid = QuantileGrid.midpoints(0.05, 9)
    proc = quantile_process(X, d.y, grid)
    target = 1.0 + np.sqrt(4.0 / 3.0) * norm.ppf(grid.points)
    assert np.max(np.abs(proc.coefficients[:, 0] - target)) < 0.3


def test_cqr_not_worse_than_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(20):
        n = int(rng.integers(5, 13))
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = np.maximum(0.0, X @ [0.2, 1.0] + rng.normal(size=n))
        tau = float(rng.uniform(0.2, 0.8))
        _, fb = brute_force_cqr(X, y, tau, [(-3, 3), (-3, 3)], 0.01)
        assert cqr_fit(X, y, tau).objective <= fb + 1e-6


def test_brute_force_properties():
    rng = np.random.default_rng(4)
    X = np.column_stack([np.ones(8), rng.normal(size=8)])
    y = np.maximum(0.0, X @ [0.5, 1.0] + rng.normal(size=8))
    _, coarse = brute_force_cqr(X, y, 0.5, [(-2, 2), (-2, 2)], 0.1)
    _, fine = brute_force_cqr(X, y, 0.5, [(-2, 2), (-2, 2)], 0.05)
    assert coarse <= cqr_objective([0.0, 0.0], X, y, 0.5)
    assert fine <= coarse + 1e-15
    with pytest.raises(BudgetExceeded):
        brute_force_cqr(X, y, 0.5, [(-2, 2), (-2, 2)], 1e-4, budget=1000)


def test_deterministic_under_seed():
    rng = np.random.default_rng(6)
    X = np.column_stack([np.ones(80), rng.normal(size=(80, 2))])
    y = np.maximum(0.0, X @ [0.0, 1.0, -1.0] + rng.normal(size=80))
    opts = CqrOptions(seed=3)
    a, b = cqr_fit(X, y, 0.3, opts), cqr_fit(X, y, 0.3, opts)
    np.testing.assert_array_equal(a.beta, b.beta)


def test_grid_validation():
    g = QuantileGrid.midpoints(0.05, 99)
    assert g.m == 99
    assert g.points[0] == pytest.approx(0.05 + 0.9 / 198)
    edges = g.cell_edges()
    assert edges[0] == pytest.approx(0.05) and edges[-1] == pytest.approx(0.95)
    with pytest.raises(ConfigError):
        QuantileGrid(0.05, [0.5, 0.4])
    with pytest.raises(ConfigError):
        QuantileGrid(0.1, [0.05])
    with pytest.raises(ConfigError):
        QuantileGrid.midpoints(0.05, 0)


@pytest.mark.parametrize("seed", [6, 11])
def test_process_scale_equivariant(seed):
    # interpolated censored rows have fitted values at rounding level, whose
    # sign must not decide the active set
    d, _ = gen_dgp(SimConfig(n=200, seed=seed), 0)
    X = build_augmented_design(d, ols_fit(build_instrument_design(d), d.w).residuals)
    g = QuantileGrid.midpoints(0.05, 19)
    base = quantile_process(X, d.y, g).coefficients
    for c in (0.5, 3.0):
        np.testing.assert_allclose(quantile_process(X, c * d.y, g).coefficients, c * base,
                                   atol=1e-8, rtol=0)
