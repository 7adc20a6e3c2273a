"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A problem configuration violates one of its invariants."""


class IntegrationError(RuntimeError):
    """Time integration failed (non-finite state, step budget, ...)."""


class StiffnessError(IntegrationError):
    """Step-size underflow: the controller pushed dt below 1e-14."""


class BudgetExceededError(RuntimeError):
    """An ensemble probe did not settle within its time budget."""


class InsufficientWindowError(ValueError):
    """Not enough tail samples (or scales) to fit anything meaningful."""


class FitError(RuntimeError):
    """A regression produced parameters outside the model class."""
