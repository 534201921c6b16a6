"""Exception hierarchy shared by all modules."""


class FbsdepError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FbsdepError):
    """Invalid experiment configuration. ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class NonFiniteCoefficient(FbsdepError):
    """A coefficient returned NaN or infinity at a probe point."""


class BlowUp(FbsdepError):
    """A simulated process left the numerically safe range."""

    def __init__(self, message, step=None, path=None):
        self.step = step
        self.path = path
        super().__init__(message)


class InvalidEpsilon(FbsdepError):
    """The free parameter epsilon makes the estimate's prefactor non-positive."""


class InvalidDelta(FbsdepError):
    """The free parameter delta makes the stability prefactor non-positive."""


class SingularRegression(FbsdepError):
    """The regression normal matrix is too ill-conditioned to solve."""


class NonConvergent(FbsdepError):
    """The Picard correction moved the solution by more than the allowed amount."""


class NonFiniteCost(FbsdepError):
    """The cost functional evaluated to NaN or infinity."""


class NoStabilizingSolution(FbsdepError):
    """The scalar Riccati equation has no stabilizing nonnegative root."""


class AssumptionViolation(FbsdepError):
    """A standing assumption or solvability condition fails for the configured problem."""


NUMERICAL_ERRORS = (BlowUp, SingularRegression, NonConvergent, NonFiniteCost,
                    NoStabilizingSolution, NonFiniteCoefficient)
ASSUMPTION_ERRORS = (InvalidEpsilon, InvalidDelta, AssumptionViolation)
