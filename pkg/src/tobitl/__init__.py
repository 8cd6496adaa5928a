"""Two-stage L-estimation for the censored (Tobit) regression model with an
endogenous regressor handled by a control-function first stage."""

from .cqr import CqrOptions, QuantileGrid, cqr_fit, quantile_process
from .errors import (ConfigError, DataError, NumericalError, SupportUncovered,
                     TobitLError)
from .first_stage import ols_fit
from .lweights import (integrate_process, parabolic_weight, parse_weight,
                       point_mass_weight, smoothed_quantile_weight, trimmed_weight,
                       winsorized_weight)
from .model import Dataset, Schema, load_csv, load_schema, validate_dataset
from .pipeline import TwoStageFit, fit_two_stage

__version__ = "0.1.0"

__all__ = [
    "CqrOptions", "QuantileGrid", "cqr_fit", "quantile_process",
    "ConfigError", "DataError", "NumericalError", "SupportUncovered", "TobitLError",
    "ols_fit",
    "integrate_process", "parabolic_weight", "parse_weight", "point_mass_weight",
    "smoothed_quantile_weight", "trimmed_weight", "winsorized_weight",
    "Dataset", "Schema", "load_csv", "load_schema", "validate_dataset",
    "TwoStageFit", "fit_two_stage",
]
