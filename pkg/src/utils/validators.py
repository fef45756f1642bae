"""
Validation utilities for scenario and network values.

Every validator returns ``(is_valid, error_message)``; callers decide whether a
failure becomes a ConfigurationError.
"""
import math
from typing import Any, Iterable, Optional, Sequence, Tuple

ValidationResult = Tuple[bool, Optional[str]]


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_number(value: Any, name: str) -> ValidationResult:
    """
    Validate that a value is a finite real number.

    Args:
        value: Value to check
        name: Dotted key used in the error message

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not _is_number(value):
        return False, f"{name} must be a number, got {value!r}"
    if not math.isfinite(value):
        return False, f"{name} must be finite"
    return True, None


def validate_positive(value: Any, name: str) -> ValidationResult:
    ok, err = validate_number(value, name)
    if not ok:
        return ok, err
    if value <= 0:
        return False, f"{name} must be > 0, got {value}"
    return True, None


def validate_non_negative(value: Any, name: str) -> ValidationResult:
    ok, err = validate_number(value, name)
    if not ok:
        return ok, err
    if value < 0:
        return False, f"{name} must be >= 0, got {value}"
    return True, None


def validate_fraction(value: Any, name: str) -> ValidationResult:
    """Validate a weight in the closed interval [0, 1]."""
    ok, err = validate_number(value, name)
    if not ok:
        return ok, err
    if not 0.0 <= value <= 1.0:
        return False, f"{name} must lie in [0, 1], got {value}"
    return True, None


def validate_open_fraction(value: Any, name: str) -> ValidationResult:
    ok, err = validate_number(value, name)
    if not ok:
        return ok, err
    if not 0.0 < value < 1.0:
        return False, f"{name} must lie in (0, 1), got {value}"
    return True, None


def validate_positive_int(value: Any, name: str) -> ValidationResult:
    if isinstance(value, bool) or not isinstance(value, int):
        return False, f"{name} must be an integer, got {value!r}"
    if value < 1:
        return False, f"{name} must be >= 1, got {value}"
    return True, None


def validate_bool(value: Any, name: str) -> ValidationResult:
    if not isinstance(value, bool):
        return False, f"{name} must be true or false, got {value!r}"
    return True, None


def validate_choice(value: Any, choices: Sequence[str], name: str) -> ValidationResult:
    if value not in choices:
        return False, f"{name} must be one of {', '.join(choices)}, got {value!r}"
    return True, None


def validate_override(expression: str) -> ValidationResult:
    """
    Validate a ``dotted.path=value`` override expression.

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not expression or '=' not in expression:
        return False, f"Override '{expression}' must have the form key=value"
    key = expression.split('=', 1)[0].strip()
    if not key:
        return False, f"Override '{expression}' has an empty key"
    if any(not part for part in key.split('.')):
        return False, f"Override key '{key}' has an empty path segment"
    return True, None


def validate_sweep_values(values: Sequence[Any]) -> ValidationResult:
    """Sweep value lists must be non-empty and every numeric entry finite."""
    if not values:
        return False, "Sweep value list is empty"
    for value in values:
        if _is_number(value) and not math.isfinite(value):
            return False, f"Sweep value {value!r} is not finite"
    return True, None


def validate_channels(requested: Iterable[str], available: Sequence[str]) -> ValidationResult:
    """Every requested channel must exist in the waveform table."""
    missing = [name for name in requested if name not in available]
    if missing:
        return False, (
            f"Unknown channel(s): {', '.join(missing)}. "
            f"Available channels: {', '.join(available)}"
        )
    return True, None
