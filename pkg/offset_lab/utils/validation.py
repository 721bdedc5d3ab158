"""Configuration validation - collect every problem before failing.

A config file is checked section by section. Instead of stopping at the first
bad key, every problem is recorded as a ValidationError with a short fix hint,
and the whole list is raised at once as a ConfigError. A typo in a bound
constant name (``B_vv``) is reported next to a negative sample size, so a user
fixes the file in one pass.

Usage:
    result = ValidationResult(is_valid=True)
    fields = check_keys(result, 'budget', raw, allowed={'B_v', 'B_c'})
    result.raise_if_invalid()
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List

from .errors import ConfigError


@dataclass
class ValidationError:
    """Represents a single validation error with details and fix instructions."""
    field: str
    message: str
    fix_instructions: str
    severity: str = "error"  # "error", "warning"


@dataclass
class ValidationResult:
    """Result of validation with detailed errors and warnings."""
    is_valid: bool = True
    errors: List[ValidationError] = field(default_factory=list)
    warnings: List[ValidationError] = field(default_factory=list)

    def add_error(self, field: str, message: str, fix_instructions: str):
        """Add an error that blocks the run."""
        self.errors.append(ValidationError(field, message, fix_instructions, "error"))
        self.is_valid = False

    def add_warning(self, field: str, message: str, fix_instructions: str):
        """Add a warning that does not block the run."""
        self.warnings.append(ValidationError(field, message, fix_instructions, "warning"))

    def raise_if_invalid(self, context: str = 'configuration'):
        if not self.is_valid:
            summary = '; '.join(f"{e.field}: {e.message}" for e in self.errors)
            raise ConfigError(f"Invalid {context}: {summary}", self)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        return {
            'is_valid': self.is_valid,
            'errors': [
                {
                    'field': e.field,
                    'message': e.message,
                    'fix_instructions': e.fix_instructions,
                    'severity': e.severity
                }
                for e in self.errors
            ],
            'warnings': [
                {
                    'field': w.field,
                    'message': w.message,
                    'fix_instructions': w.fix_instructions,
                    'severity': w.severity
                }
                for w in self.warnings
            ],
        }


def check_keys(result: ValidationResult, section: str, raw: Any, allowed: Iterable[str],
               required: Iterable[str] = ()) -> Dict[str, Any]:
    """Record unknown and missing keys of one config section.

    Returns the section as a dict (empty when ``raw`` is not a mapping) so the
    caller can keep validating the remaining fields.
    """
    if not isinstance(raw, dict):
        result.add_error(section, f"expected an object, got {type(raw).__name__}",
                         f"Write '{section}' as a JSON object")
        return {}

    allowed = set(allowed)
    for key in sorted(set(raw) - allowed):
        result.add_error(f"{section}.{key}", "unknown key",
                         f"Remove it or use one of: {', '.join(sorted(allowed))}")
    for key in required:
        if key not in raw:
            result.add_error(f"{section}.{key}", "missing required key", f"Add '{key}' to '{section}'")
    return raw


def check_positive(result: ValidationResult, name: str, value: Any, allow_zero: bool = False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        result.add_error(name, f"expected a number, got {value!r}", "Use a numeric literal")
        return
    if value < 0 or (value == 0 and not allow_zero):
        bound = 'nonnegative' if allow_zero else 'positive'
        result.add_error(name, f"must be {bound}, got {value}", f"Set a {bound} value")


def check_choice(result: ValidationResult, name: str, value: Any, choices: Iterable[str]):
    choices = tuple(choices)
    if value not in choices:
        result.add_error(name, f"unsupported value {value!r}", f"Use one of: {', '.join(choices)}")
