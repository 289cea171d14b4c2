"""
Toolkit exceptions, mapped to CLI exit codes by invrisk.harness.cli
"""


class ConfigError(ValueError):
    """
    Invalid experiment configuration or domain object construction
    """


class ShapeError(ValueError):
    """
    Dimension mismatch between operands
    """


class RankError(ValueError):
    """
    Requested rank exceeds the effective rank of a decomposition
    """

    def __init__(self, requested: int, effective: int):
        super().__init__(f"rank {requested} exceeds effective rank {effective}")
        self.requested = requested
        self.effective = effective


class NumericError(ArithmeticError):
    """
    Numeric failure: non-convergence, non-finite values, undefined statistics
    """


class TensorFormatError(OSError):
    """
    Malformed IVT1 tensor file
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class BadMagicError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class DimensionOverflowError(TensorFormatError):
    pass
