"""Exception hierarchy.

Each class carries the CLI exit code for its error family: 2 for data
problems, 3 for numerical failures, 4 for configuration mistakes.
"""


class TobitLError(Exception):
    exit_code = 1


class DataError(TobitLError, ValueError):
    exit_code = 2


class NumericalError(TobitLError, ArithmeticError):
    exit_code = 3


class ConfigError(TobitLError, ValueError):
    exit_code = 4


class SingularDesign(NumericalError):
    """The first-stage instrument matrix is rank deficient."""


class DegenerateDesign(NumericalError):
    """The design is rank deficient on the sample handed to the LP kernel."""


class AllCensoredDegenerate(NumericalError):
    """No observation is active at the returned censored-QR optimum."""


class BudgetExceeded(NumericalError):
    """A brute-force search would exceed its grid-point budget."""


class SupportUncovered(ConfigError):
    """A weight measure puts mass outside the range covered by the grid."""


class SingularJacobian(NumericalError):
    """A smoothed Jacobian block is numerically singular."""


class NonPsd(NumericalError):
    """A covariance estimate has an eigenvalue below the numerical floor."""


class EstimationFailure(NumericalError):
    """Too many replicate fits failed in a simulation or bootstrap run."""
