"""Bootstrap root mean squared error of L-estimates on observed data.

Each replicate resamples rows and re-runs the whole estimator, first stage
included, so first-stage estimation noise is part of the dispersion.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cqr import CqrOptions, QuantileGrid
from .errors import ConfigError, EstimationFailure, NumericalError
from .lweights import LEstimate, WeightMeasure, grid_for_weights
from .model import Dataset
from .pipeline import fit_two_stage

__all__ = ["BootstrapReport", "resample_indices", "bootstrap_brmse", "SCHEMES"]

log = logging.getLogger(__name__)

SCHEMES = ("iid_pairs", "moving_block")
MAX_FAILURE_RATE = 0.20


def resample_indices(n: int, scheme: str = "iid_pairs", stream=None,
                     block_len: int | None = None) -> np.ndarray:
    """Row indices of one bootstrap sample of size ``n``.

    ``moving_block`` concatenates blocks of ``block_len`` consecutive rows
    (wrapping around the end) starting at uniform positions; the default
    length is ``ceil(n^(1/3))``.
    """
    rng = stream if stream is not None else np.random.default_rng()
    if scheme == "iid_pairs":
        return rng.integers(0, n, size=n)
    if scheme == "moving_block":
        L = math.ceil(n ** (1.0 / 3.0) - 1e-12) if block_len is None else int(block_len)
        if not 1 <= L <= n:
            raise ConfigError(f"block length must lie in [1, {n}], got {block_len}")
        starts = rng.integers(0, n, size=-(-n // L))
        idx = (starts[:, None] + np.arange(L)[None, :]) % n
        return idx.ravel()[:n]
    raise ConfigError(f"unknown resampling scheme '{scheme}'; choose from {SCHEMES}")


@dataclass(frozen=True, eq=False)
class BootstrapReport:
    point: LEstimate
    b: int
    brmse: np.ndarray
    replicate_estimates: np.ndarray | None
    failures: int
    scheme: str
    seed: int
    param_names: tuple = ()
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return {
            "weight": self.point.weight,
            "b": self.b,
            "scheme": self.scheme,
            "seed": self.seed,
            "failures": self.failures,
            "estimate": dict(zip(self.param_names, map(float, self.point.value))),
            "brmse": dict(zip(self.param_names, map(float, self.brmse))),
            "runtime_s": self.runtime,
        }

    def write_replicates(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", *self.param_names])
            if self.replicate_estimates is not None:
                for k, row in enumerate(self.replicate_estimates):
                    writer.writerow([k, *(repr(float(v)) for v in row)])


def _one(d, weight, grid, options, idx):
    try:
        return fit_two_stage(d.take(idx), [weight], grid, options).estimates[weight.label].value
    except NumericalError as exc:
        return str(exc)


def _chunk(args):
    d, weight, grid, options, scheme, seed, block_len, ks = args
    return [(k, _one(d, weight, grid, options,
                     resample_indices(d.n, scheme, np.random.default_rng([seed, k]),
                                      block_len)))
            for k in ks]


def bootstrap_brmse(d: Dataset, weight: WeightMeasure, b: int, scheme: str = "iid_pairs",
                    seed: int = 0, options: CqrOptions | None = None, *,
                    grid: QuantileGrid | None = None, block_len: int | None = None,
                    keep_replicates: bool = True, threads: int = 1,
                    resampler: Callable | None = None) -> BootstrapReport:
    """``BRMSE_j = sqrt((1/b) sum_k (L_{n,j,k} - L_{n,j})^2)``.

    Replicate ``k`` resamples with ``numpy.random.default_rng([seed, k])``.
    ``resampler(n, k)`` overrides the resampling (a test hook). Failed
    replicates are excluded; more than 20% failures raises
    :class:`EstimationFailure`.
    """
    if b < 1:
        raise ConfigError(f"bootstrap replicate count must be at least 1, got {b}")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown resampling scheme '{scheme}'; choose from {SCHEMES}")
    if resampler is None:
        # fail on a bad block length before any fitting
        resample_indices(d.n, scheme, np.random.default_rng([seed, 0]), block_len)
    t0 = time.perf_counter()
    grid = grid or grid_for_weights([weight])
    point = fit_two_stage(d, [weight], grid, options).estimates[weight.label]
    if threads > 1 and resampler is None and b > 1:
        parts = [(d, weight, grid, options, scheme, seed, block_len, list(range(i, b, threads)))
                 for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = sorted((r for part in ex.map(_chunk, parts) for r in part),
                             key=lambda r: r[0])
    else:
        results = []
        for k in range(b):
            if resampler is not None:
                idx = np.asarray(resampler(d.n, k), dtype=int)
            else:
                idx = resample_indices(d.n, scheme, np.random.default_rng([seed, k]),
                                       block_len)
            results.append((k, _one(d, weight, grid, options, idx)))
    reps, failures = [], 0
    for k, out in results:
        if isinstance(out, str):
            failures += 1
            log.warning("bootstrap replicate %d failed: %s", k, out)
        else:
            reps.append(out)
    if failures > MAX_FAILURE_RATE * b:
        raise EstimationFailure(f"{failures} of {b} bootstrap replicates failed (limit 20%)")
    R = np.vstack(reps)
    brmse = np.sqrt(np.mean((R - point.value) ** 2, axis=0))
    return BootstrapReport(point, b, brmse, R if keep_replicates else None, failures,
                           scheme, seed, d.param_names, time.perf_counter() - t0)
