class PathlossError(Exception):
    """Base class for every error raised by pathloss_ncv."""


class DataError(PathlossError, ValueError):
    """A data source is missing, malformed, or violates a dataset invariant."""


class ConfigError(PathlossError, ValueError):
    """A run configuration failed validation.

    Attributes:
        errors: One message per problem, each naming the offending key.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("Invalid configuration: " + "; ".join(self.errors))


class FoldPlanError(PathlossError, ValueError):
    pass


class LeakageError(PathlossError, RuntimeError):
    pass


class FitError(PathlossError, RuntimeError):
    """A model fit failed. Nested CV scores a failed grid point as +inf."""


class ConvergenceError(FitError):
    pass


class DivergenceError(FitError):
    pass


class HyperparameterError(FitError, ValueError):
    pass


class AllFitsFailedError(PathlossError, RuntimeError):
    pass
