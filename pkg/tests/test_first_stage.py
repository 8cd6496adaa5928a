import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tobitl.errors import SingularDesign
from tobitl.first_stage import ols_fit, residuals


def test_mean_only():
    fit = ols_fit(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(fit.delta_hat, [2.0])
    np.testing.assert_allclose(fit.residuals, [-1.0, 0.0, 1.0], atol=1e-14)


def test_perfect_fit_instrument_first():
    z1 = np.array([0.0, 1.0, 2.0])
    Z = np.column_stack([z1, np.ones(3)])
    fit = ols_fit(Z, 1.0 + 2.0 * z1)
    np.testing.assert_allclose(fit.delta_hat, [2.0, 1.0])
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-14)


def test_two_by_two_closed_form():
    # Z'Z = [[5, 3], [3, 3]], det 6; Z'w = (8, 5)
    z1 = np.array([0.0, 1.0, 2.0])
    w = np.array([0.0, 2.0, 3.0])
    fit = ols_fit(np.column_stack([z1, np.ones(3)]), w)
    inv = np.array([[3.0, -3.0], [-3.0, 5.0]]) / 6.0
    expected = inv @ np.array([8.0, 5.0])
    np.testing.assert_allclose(expected, [1.5, 1.0 / 6.0])
    np.testing.assert_allclose(fit.delta_hat, expected, atol=1e-14)
    np.testing.assert_allclose(fit.residuals, [-1 / 6, 1 / 3, -1 / 6], atol=1e-14)


def test_residual_helper():
    Z = np.column_stack([np.arange(5.0), np.ones(5)])
    w = np.array([1.0, 0.0, 3.0, 2.0, 5.0])
    fit = ols_fit(Z, w)
    np.testing.assert_allclose(residuals(fit, Z, w), fit.residuals, atol=1e-14)
    zero = fit.__class__(np.zeros(2), w, 1.0, "")
    np.testing.assert_array_equal(residuals(zero, Z, w), w)


def test_singular_instrument():
    z = np.ones(6)
    with pytest.raises(SingularDesign):
        ols_fit(np.column_stack([z, np.ones(6)]), np.arange(6.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2 ** 31 - 1))
def test_normal_equations(n, seed):
    rng = np.random.default_rng(seed)
    Z = np.column_stack([rng.normal(size=n), np.ones(n), rng.normal(size=n)])
    w = rng.normal(size=n)
    fit = ols_fit(Z, w)
    np.testing.assert_allclose(Z.T @ fit.residuals / n, 0.0, atol=1e-10)
    np.testing.assert_allclose(fit.delta_hat, np.linalg.lstsq(Z, w, rcond=None)[0],
                               rtol=1e-8, atol=1e-10)
