"""
Unit tests for the error hierarchy.
"""

import json

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared.errors import (
    AttributionToolError,
    CoverageError,
    DegenerateFitError,
    InsufficientDataError,
    OracleFailure,
    UnitMismatchError,
)


def test_exit_codes():
    assert CoverageError("x").exit_code == 2
    assert UnitMismatchError("x").exit_code == 2
    assert DegenerateFitError("x").exit_code == 3
    assert InsufficientDataError("x").exit_code == 3
    assert OracleFailure("x").exit_code == 1


def test_to_dict_is_json_ready():
    error = CoverageError("temperature file has gaps", {"missing": ["1996-02"]})
    payload = json.loads(json.dumps(error.to_dict()))
    assert payload == {
        "error": "CoverageError",
        "message": "temperature file has gaps",
        "exit_code": 2,
        "details": {"missing": ["1996-02"]},
    }


def test_errors_share_a_base():
    error = DegenerateFitError("month 3: constant temperature")
    assert isinstance(error, AttributionToolError)
    assert str(error) == "month 3: constant temperature"
    assert error.details == {}
