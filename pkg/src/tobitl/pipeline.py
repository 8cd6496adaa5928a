"""The full two-stage estimator: first stage, censored quantile process, L-estimates."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .cqr import CqrFit, CqrOptions, QuantileGrid, QuantileProcess, cqr_fit, quantile_process
from .first_stage import FirstStageFit, ols_fit
from .lweights import LEstimate, WeightMeasure, grid_for_weights, integrate_process
from .model import AugmentedDesign, Dataset, build_augmented_design, build_instrument_design

__all__ = ["TwoStageFit", "fit_two_stage"]


@dataclass(eq=False)
class TwoStageFit:
    data: Dataset
    first_stage: FirstStageFit
    design: AugmentedDesign
    process: QuantileProcess
    options: CqrOptions
    weights: dict[str, WeightMeasure]
    estimates: dict[str, LEstimate]
    atom_fits: dict[float, CqrFit] = field(default_factory=dict)

    @property
    def Z(self) -> np.ndarray:
        return build_instrument_design(self.data).Z

    def beta_at(self, tau: float) -> np.ndarray:
        """``beta_n(tau)``: a grid row, or a dedicated fit cached per level."""
        pts = self.process.grid.points
        hit = np.flatnonzero(np.abs(pts - tau) <= 1e-12)
        if hit.size:
            return self.process.coefficients[hit[0]]
        key = float(tau)
        if key not in self.atom_fits:
            near = int(np.argmin(np.abs(pts - tau)))
            self.atom_fits[key] = cqr_fit(self.design, self.data.y, key, self.options,
                                          warm_beta=self.process.coefficients[near],
                                          full_start=self.process.coefficients[near])
        return self.atom_fits[key].beta


def fit_two_stage(d: Dataset, weights: Sequence[WeightMeasure],
                  grid: QuantileGrid | None = None,
                  options: CqrOptions | None = None,
                  scheme="midpoint") -> TwoStageFit:
    """Estimate ``delta``, the censored quantile process and one L-estimate per weight.

    The grid defaults to 99 midpoints on the narrowest interval that
    contains every weight and ``[0.05, 0.95]``.
    """
    opts = options or CqrOptions()
    weights = list(weights)
    if grid is None:
        grid = grid_for_weights(weights)
    Z = build_instrument_design(d)
    fs = ols_fit(Z, d.w)
    design = build_augmented_design(d, fs.residuals)
    proc = quantile_process(design, d.y, grid, opts)
    fit = TwoStageFit(d, fs, design, proc, opts, {}, {})
    for mu in weights:
        label = mu.label
        fit.weights[label] = mu
        fit.estimates[label] = integrate_process(proc, mu, scheme, fit.beta_at)
    return fit
