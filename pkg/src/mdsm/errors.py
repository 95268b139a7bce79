"""Exception types shared across the package.

Most subclass ValueError so callers that only know about the stdlib
hierarchy still catch them.
"""


class DimensionError(ValueError):
    """Shapes do not conform (elementwise, matmul, or batch width)."""


class DomainError(ValueError):
    """Mathematically invalid input, e.g. log of a non-positive value."""


class GraphError(RuntimeError):
    """Gradient requested for a tensor that never took part in the tape."""


class NumericError(ArithmeticError):
    """A NaN or Inf surfaced from an operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class CapacityError(ValueError):
    """A computation was asked to exceed its documented size limits."""


class FormatError(ValueError):
    """A file does not parse as the expected format."""


class CorruptionError(FormatError):
    """A file parses structurally but fails its integrity check."""


class CompatibilityError(ValueError):
    """Stored parameters do not match the configuration they claim."""
