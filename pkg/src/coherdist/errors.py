"""Exception hierarchy shared by all modules."""


class CoherDistError(Exception):
    pass


class DomainError(CoherDistError, ValueError):
    """Invalid input: wrong dimension, non-Hermitian, out-of-range parameter."""


class SolverError(CoherDistError, RuntimeError):
    """The conic solver did not reach an optimal, certified point."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class ResourceError(CoherDistError, RuntimeError):
    """Problem too large for the dense solver."""
