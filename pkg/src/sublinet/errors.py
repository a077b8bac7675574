"""Exception types shared across the library."""


class SublinetError(Exception):
    """Base class for all library errors."""


class DomainError(SublinetError):
    """Input outside the domain of an operation (e.g. near the origin)."""


class InvalidBodyError(SublinetError):
    """The underlying function is not positive on the sphere."""


class DegenerateMapError(SublinetError):
    """The boundary map has a (numerically) singular Jacobian."""


class SolverError(SublinetError):
    """A linear solve failed or produced non-finite values."""

    def __init__(self, message: str, condition_estimate: float | None = None):
        if condition_estimate is not None:
            message = f"{message} (condition estimate {condition_estimate:.3e})"
        super().__init__(message)
        self.condition_estimate = condition_estimate


class ConvergenceError(SublinetError):
    """An iterative procedure exhausted its budget.

    Carries the best artifact produced so far in ``best``.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class InitializationError(SublinetError):
    """A construction step produced an unusable starting object."""


class CheckFailedError(SublinetError):
    """A self-check (UAT bound, monotonicity) did not hold."""


class ConfigError(SublinetError):
    """Configuration validation failed; ``problems`` lists every issue."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)
