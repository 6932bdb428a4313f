"""Custom exceptions for the roadgraph package.

Every exception carries a stable short ``code`` so that scripts driving the
command line can branch on the failure kind without parsing messages."""


class RoadGraphException(Exception):
    """Base exception for the roadgraph package."""

    code = "E_INTERNAL"


class ContractError(RoadGraphException, ValueError):
    """Raised when a precondition or a data invariant is violated."""

    code = "E_CONTRACT"


class ShapeError(RoadGraphException, ValueError):
    """Raised when a tensor or parameter has an unexpected shape."""

    code = "E_SHAPE"


class TensorFormatError(RoadGraphException):
    """Raised when an RGT1 tensor or parameter bundle is corrupt or truncated."""

    code = "E_FORMAT"


class DataIOError(RoadGraphException, OSError):
    """Raised when an input cannot be read or an output cannot be written."""

    code = "E_IO"


class ConfigError(RoadGraphException, ValueError):
    """Raised when a configuration file or key is invalid."""

    code = "E_CONFIG"


class NumericalError(RoadGraphException, ArithmeticError):
    """Raised when training produces a non-finite loss."""

    code = "E_NUMERIC"


class WindowProviderError(RoadGraphException):
    """Raised when a window provider fails to deliver a mask or feature map."""

    code = "E_PROVIDER"

    def __init__(self, ix: int, iy: int, reason: str):
        super().__init__(f"window ({ix}, {iy}): {reason}")
        self.ix = ix
        self.iy = iy


class UsageError(RoadGraphException):
    """Raised for unknown command line flags or subcommands."""

    code = "E_USAGE"
