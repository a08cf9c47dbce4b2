"""Exception hierarchy for hopgate"""

from typing import Optional


class HopgateError(Exception):
    """Base class for every error raised by hopgate"""


class DimensionError(HopgateError):
    """Operand shapes do not agree"""


class NumericalError(HopgateError):
    """A kernel produced a NaN or infinite value"""


class ParseError(HopgateError):
    """Malformed bAbI input"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EncodingError(HopgateError):
    """Token missing from the closed vocabulary, or index out of range"""


class ConfigurationError(HopgateError):
    """Requested scenario needs components that are absent or inconsistent"""


class ParameterError(HopgateError):
    """A numeric parameter is outside its meaningful range"""


class TrainingDivergedError(HopgateError):
    """Loss became NaN or infinite during training"""


class DatasetDownloadError(HopgateError):
    """Fetching or unpacking the dataset archive failed"""
