"""Exception hierarchy shared by every engine.

Each error maps onto one failure class of the lab:

    InvalidParameterError   parameter outside its documented domain
    SizeLimitError          exact computation requested beyond its enumeration limit
    OptimizerFailureError   training diverged (risk became NaN/Inf)
    ConfigError             configuration file failed validation
    LabIOError              result files could not be read or written

Usage:
    try:
        report = norm_bound(spec, budget, n=100, delta=0.0)
    except InvalidParameterError as e:
        print(e.to_dict())
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for all lab errors."""
    kind = 'lab-error'

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'message': self.message, 'details': self.details}


class InvalidParameterError(LabError, ValueError):
    kind = 'invalid-parameter'


class SizeLimitError(LabError):
    kind = 'size-limit'


class OptimizerFailureError(LabError):
    """Raised when projected gradient descent diverges.

    ``details`` carries the diagnostics: restart index, step, last finite risk
    and step size.
    """
    kind = 'optimizer-failure'


class ConfigError(LabError):
    kind = 'config-error'

    def __init__(self, message: str, validation=None):
        super().__init__(message, validation.to_dict() if validation is not None else None)
        self.validation = validation


class LabIOError(LabError, OSError):
    kind = 'io-error'


def require(condition: bool, message: str, **details):
    """Raise InvalidParameterError with ``message`` unless ``condition`` holds."""
    if not condition:
        raise InvalidParameterError(message, details or None)
