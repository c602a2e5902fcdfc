"""
Error hierarchy shared by all services.

Every error carries the process exit code the CLI should use and can render
itself as a machine-parseable dictionary, the same way HTTP errors carry a
status code and a ``detail`` payload.
"""

from typing import Any, Dict, Optional


EXIT_ORACLE_FAILURE = 1
EXIT_INPUT_ERROR = 2
EXIT_FIT_ERROR = 3


class AttributionToolError(Exception):
    """
    Base class for every error raised by the toolkit.

    Attributes:
        message (str): Human readable description
        details (dict): Structured context (paths, months, line numbers)
        exit_code (int): Process exit code used by the CLI
    """

    exit_code = EXIT_INPUT_ERROR

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """
        Render the error as a machine-parseable object.

        Returns:
            dict: ``{"error", "message", "exit_code", "details"}``

        Example:
            >>> CoverageError("gap", {"missing": ["1996-02"]}).to_dict()["error"]
            'CoverageError'
        """
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


# Ingestion

class SchemaError(AttributionToolError):
    """A mapped column is missing from the input header."""


class EmptyInputError(AttributionToolError):
    """No data row could be parsed."""


class TemperatureParseError(AttributionToolError):
    """Duplicate keys, out-of-range months or non-numeric temperatures."""


class CoverageError(AttributionToolError):
    """In-window months without a temperature record."""


class BaselineError(AttributionToolError):
    """Baseline file with missing or duplicated months."""


class InputFileError(AttributionToolError):
    """A referenced input file does not exist or cannot be decoded."""


class ConfigError(AttributionToolError):
    """Invalid run configuration or scenario."""


class UsageError(AttributionToolError):
    """Invalid argument values (negative horizon, weight outside [0, 1])."""


class UnitMismatchError(AttributionToolError):
    """Temperatures expressed in a unit different from the model's."""


class MissingMonthError(AttributionToolError):
    """An operation needing all 12 calendar months got fewer."""


# Fitting

class InsufficientDataError(AttributionToolError):
    """Fewer points than the fit requires."""

    exit_code = EXIT_FIT_ERROR


class DegenerateFitError(AttributionToolError):
    """Zero variance or perfectly (anti)correlated data."""

    exit_code = EXIT_FIT_ERROR


class DegenerateModelError(AttributionToolError):
    """A conditional model with zero residual scale was asked for a density."""

    exit_code = EXIT_FIT_ERROR


# Verification

class OracleFailure(AttributionToolError):
    """A Monte Carlo oracle did not reproduce its closed form."""

    exit_code = EXIT_ORACLE_FAILURE


class UnexpectedError(AttributionToolError):
    """Any failure outside the hierarchy above, wrapped so the CLI can report it."""

    @classmethod
    def wrap(cls, error: Exception) -> "UnexpectedError":
        return cls(f"{type(error).__name__}: {error}", {"type": type(error).__name__})
