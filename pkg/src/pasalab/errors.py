"""Exception types shared across the package."""


class CapacityError(RuntimeError):
    """An exact computation was requested beyond its configured size cap."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without reaching its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ConfigError(ValueError):
    """An experiment configuration is invalid or inconsistent."""


class ReselectionError(RuntimeError):
    """The split-reselection sequence reached a state it must not reach.

    Raised defensively if the verbatim update rule ever leaves a singleton
    cell as a split target; the singleton mask is supposed to make this
    unreachable.
    """
