"""Exception types raised by the mdcp package.

Every error is a ValueError subclass except NumericalFailure and NonFinite,
which signal runtime numerical trouble rather than bad arguments.
"""


class MdcpError(Exception):
    pass


class BadFractions(MdcpError, ValueError):
    """Split fractions outside [0,1] or not summing to 1."""


class EmptySource(MdcpError, ValueError):
    """A source ended up with an empty calibration fold."""


class TooFewSamples(MdcpError, ValueError):
    """Not enough rows for the requested operation."""


class DegenerateLabels(MdcpError, ValueError):
    """Fewer than two distinct classes in a classification fit."""


class UnknownSource(MdcpError, ValueError):
    """Source index out of range."""


class ClassOutOfRange(MdcpError, ValueError):
    """Class index >= numClasses."""


class BadUniform(MdcpError, ValueError):
    """Randomization uniform outside [0,1]."""


class EmptyVector(MdcpError, ValueError):
    """Empty input where at least one element is required."""


class EmptyLabels(MdcpError, ValueError):
    """Empty label vector where a grid is required."""


class NegativeLambda(MdcpError, ValueError):
    """Dual multiplier vector with a negative entry."""


class NonFinite(MdcpError, FloatingPointError):
    """NaN or infinity encountered in data, model output, or training."""


class NumericalFailure(MdcpError, RuntimeError):
    """A solver failed to reach its certified tolerance."""
