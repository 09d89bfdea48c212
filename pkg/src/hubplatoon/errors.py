"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ValidationError(ValueError):
    """An input object or file is malformed or inconsistent."""


class InferenceError(RuntimeError):
    """The hidden-state filter received an observation it deems impossible."""

    def __init__(self, t, theta, msg=None):
        self.t = t
        self.theta = theta
        super().__init__(msg or f"observation theta={theta} has zero likelihood at t={t}")


class ContractViolation(RuntimeError):
    """A policy returned a release outside {0..n}."""
