import logging
import traceback
from typing import Optional, Dict, Any
from datetime import datetime


class DecError(Exception):
    """Base exception class for dec_sgg"""

    exit_code = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.timestamp = datetime.now().isoformat()


class ConfigError(DecError):
    """Raised for invalid hyperparameters or infeasible settings"""
    exit_code = 1


class DataError(DecError):
    """Raised for problems with input data"""
    exit_code = 2


class ParseError(DataError):
    """Raised for malformed input lines"""
    pass


class DataReferenceError(DataError):
    """Raised for unknown names or dangling instance ids"""
    pass


class DimensionMismatchError(DataError):
    """Raised when a vector dimension disagrees with the configuration"""
    pass


class VocabularyError(DataError):
    """Raised for missing or unusable word embeddings"""
    pass


class GeometryError(DataError):
    """Raised for degenerate or non-finite boxes"""
    pass


class CompositionError(DataError):
    """Raised when a composed relation cannot be built or is invalid"""
    pass


class NumericError(DecError):
    """Raised for numeric failures"""
    exit_code = 3


class DivergenceError(NumericError):
    """Raised when training produces a non-finite loss"""
    pass


USAGE_EXIT_CODE = 1


class ErrorHandler:
    """Centralized error handling for the command line front end"""

    def __init__(self):
        self.logger = logging.getLogger('DecSGG.error')
        self.error_counts: Dict[str, int] = {}

    def handle_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> int:
        """Log an error with its context and return the process exit code"""
        error_type = type(error).__name__
        self.error_counts[error_type] = self.error_counts.get(error_type, 0) + 1

        error_info = {
            'error_type': error_type,
            'error_message': str(error),
            'count': self.error_counts[error_type],
            'context': context or {},
        }

        if isinstance(error, DecError):
            error_info['details'] = error.details
        else:
            error_info['traceback'] = traceback.format_exc()

        self.logger.error(f"Error occurred: {error_type}", extra=error_info)
        return self.exit_code_for(error)

    @staticmethod
    def exit_code_for(error: Exception) -> int:
        if isinstance(error, DecError):
            return error.exit_code
        # Anything unexpected is reported as a data failure
        return DataError.exit_code

    @staticmethod
    def describe(error: Exception) -> Dict[str, Any]:
        """Serializable description of an error for run manifests"""
        info = {
            'type': type(error).__name__,
            'message': str(error),
            'exit_code': ErrorHandler.exit_code_for(error),
        }
        if isinstance(error, DecError):
            info['details'] = {k: _plain(v) for k, v in error.details.items()}
        return info


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple, set)):
        return [_plain(v) for v in value]
    return str(value)
