"""Exception hierarchy shared by every xcal module."""


class XcalError(Exception):
    """Base class for all errors raised by xcal."""


class DataError(XcalError):
    """Malformed files, inconsistent containers, bad datasets."""


class ShapeError(DataError, ValueError):
    """Tensor shapes do not fit the operation."""


class GraphError(DataError):
    """Invalid model graph: cycles, dangling references, bad topology."""


class NumericError(XcalError, ArithmeticError):
    """Non-finite values or degenerate numerics that cannot be recovered."""
