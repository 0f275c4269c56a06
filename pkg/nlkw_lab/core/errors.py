"""Exception hierarchy shared by every layer"""

from typing import Optional


class NlkwError(Exception):
    """Base class for all errors raised by nlkw_lab"""


class ParameterError(NlkwError, ValueError):
    """Argument outside the domain an operation accepts"""


class ShapeError(NlkwError, ValueError):
    """Arrays or grids that do not line up"""


class CapabilityError(NlkwError, TypeError):
    """Operation needs an analytic form the object does not provide"""


class NumericError(NlkwError, ArithmeticError):
    """Evaluation that would overflow or cannot be solved"""

    def __init__(
        self, message: str, t: Optional[float] = None, x: Optional[float] = None
    ):
        if t is not None or x is not None:
            message = f"{message} (t={t}, x={x})"
        super().__init__(message)
        self.t = t
        self.x = x


class ConfigError(NlkwError, ValueError):
    """Invalid experiment configuration"""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class OutputError(NlkwError, OSError):
    """Output file or directory cannot be written"""

    def __init__(self, path: str, message: str):
        super().__init__(f"{message}: {path}")
        self.path = path


class StageError(NlkwError):
    """Failure of one pipeline stage, wrapping the original error"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
