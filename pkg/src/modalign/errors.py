"""Exception types shared across the package."""


class DegenerateProjection(ArithmeticError):
    """A homogeneous denominator fell below the safe threshold.

    Raised when a point projects onto (or beyond) the horizon line, or when
    a matrix renormalization would divide by a near-zero (3,3) entry.
    """


class SingularSystem(ArithmeticError):
    """A linear solve or inversion hit a (near-)singular matrix."""


class SamplingExhausted(RuntimeError):
    """Rejection sampling gave up after the configured attempt budget."""


class ShapeMismatch(ValueError):
    """An array did not have the spatial/channel shape the operation needs."""


class FormatError(ValueError):
    """An input file exists but cannot be parsed as expected."""


class EmptyInput(ValueError):
    """An operation that needs at least one element received none."""


class NonFiniteLoss(ArithmeticError):
    """Training produced a NaN/inf loss; carries the offending batch id."""


class ConfigError(ValueError):
    """A configuration value failed validation; message names the field."""
