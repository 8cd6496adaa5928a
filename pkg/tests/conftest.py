from pathlib import Path

import numpy as np
import pytest

from tobitl.first_stage import ols_fit
from tobitl.model import Dataset, build_instrument_design, load_csv, load_schema

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def mroz():
    return load_csv(DATA / "mroz.csv", load_schema(DATA / "mroz_schema.json"))


def noiseless_dataset(n=40, beta=(1.0, 2.0, 3.0, 0.5), seed=0, censor=False):
    """``y = X_hat beta`` exactly, with ``e`` the first-stage residual.

    Without censoring every latent value is positive so each quantile level
    has the exact-fit optimum ``beta``.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=n)
    x = rng.uniform(0.0, 1.0, size=n)
    w = z + rng.normal(scale=0.5, size=n)
    d0 = Dataset(np.ones(n), np.column_stack([np.ones(n), x]), w, z)
    e = ols_fit(build_instrument_design(d0), w).residuals
    latent = beta[0] + beta[1] * x + beta[2] * w + beta[3] * e
    if not censor:
        shift = max(0.0, 0.5 - latent.min())
        latent = latent + shift
        beta = (beta[0] + shift,) + tuple(beta[1:])
    y = np.maximum(0.0, latent)
    return Dataset(y, d0.x_exo, w, z), np.array(beta, dtype=float)
