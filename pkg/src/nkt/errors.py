"""Exception types raised across the package.

Everything derives from NktError so callers can catch package errors
with a single except clause while still matching specific failures.
"""


class NktError(Exception):
    """Base class for all package errors."""


class RangeError(NktError):
    """An index or interval falls outside the valid range."""


class ShapeError(NktError):
    """An array has the wrong shape or an incompatible length."""


class DegenerateChannelError(NktError):
    """A channel has zero variance where nonzero variance is required."""


class StratifyError(NktError):
    """A class has too few trials to split."""


class FormatError(NktError):
    """A binary file has a bad magic number, version, or truncated payload."""


class FrequencyError(NktError):
    """A frequency lies outside (0, fs/2)."""


class DomainError(NktError):
    """An input value lies outside the mathematical domain of the transform."""


class TokenError(NktError):
    """A token index is outside [0, Q)."""


class ClassCountError(NktError):
    """A class has no samples or labels exceed the declared class count."""


class NormalizationError(NktError):
    """Probability rows do not sum to 1."""


class SingularError(NktError):
    """A matrix that must be inverted is singular."""


class InterfaceError(NktError):
    """A model object lacks the prediction interface an operation needs."""


class NumericsError(NktError):
    """A numeric invariant broke: NaN gradients, NaN likelihoods, divergence."""


class StateError(NktError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class DivergenceError(NktError):
    """Recursive generation produced unbounded values."""


class ConditionError(NktError):
    """A condition index exceeds the model's condition vocabulary."""


class ConfigError(NktError):
    """An invalid configuration (inadmissible window/hop, bad config file)."""
