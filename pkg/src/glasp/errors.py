"""Exception types shared across the package."""


class DimsError(ValueError):
    """Tensor shapes or list lengths are inconsistent with the declared dims."""


class DomainError(ValueError):
    """A value lies outside its mathematical domain (e.g. log-decay >= 0)."""


class LayoutError(ValueError):
    """Sequence/chunk/rank divisibility constraints are violated."""


class ConfigError(ValueError):
    """Invalid configuration or parameter combination."""


class PrecisionError(TypeError):
    """An operation that requires float64 received another dtype."""


class StateError(RuntimeError):
    """Saved forward state required by a backward run is missing or mismatched."""


class DeadlockError(RuntimeError):
    """The simulated cluster stalled: a receive has no pending sender."""


class TensorFormatError(ValueError):
    """A serialized tensor file is malformed."""
