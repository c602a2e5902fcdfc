"""
Unit tests for Ingest Service.
"""

import random
from datetime import date

import numpy as np
import pytest

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.ingest_service import (
    aggregate_monthly,
    baseline_from_file,
    convert_baseline,
    convert_unit,
    parse_cost,
    parse_events,
    parse_temperatures,
    read_series,
    write_series,
)
from shared.config import EventSchema, TemperatureSchema
from shared.errors import (
    BaselineError,
    CoverageError,
    EmptyInputError,
    SchemaError,
    TemperatureParseError,
)
from shared.models import EventRecord, TemperatureRecord, TemperatureUnit, YearWindow

F = TemperatureUnit.FAHRENHEIT
C = TemperatureUnit.CELSIUS


def full_year_temps(year=1996, unit=F, skip=()):
    return [TemperatureRecord(year=year, month=m, mean_temp=30.0 + m, temp_unit=unit)
            for m in range(1, 13) if m not in skip]


# Events

def test_parse_events_maps_columns():
    """Test a plain date and cost row."""
    result = parse_events("DATE,DAMAGE\n1996-07-04,57800\n", EventSchema())
    assert result.records == [EventRecord(timestamp=date(1996, 7, 4), damage_cost=57800.0)]
    assert result.issues == []


def test_parse_events_expands_suffix():
    """Test K suffix expansion."""
    result = parse_events("DATE,DAMAGE\n1996-07-04,57.8K\n1996-07-05,1.5M\n", EventSchema(suffixes={"K": 1e3, "M": 1e6}))
    assert [r.damage_cost for r in result.records] == [57800.0, 1500000.0]


def test_parse_events_collects_row_errors():
    """Test that bad rows are reported with line numbers and skipped."""
    text = "DATE,DAMAGE\nnot-a-date,100\n1996-07-04,5X\n1996-07-05,10\n"
    result = parse_events(text, EventSchema())
    assert len(result.records) == 1
    assert [i.line for i in result.issues] == [2, 3]
    assert "date" in result.issues[0].message
    assert "suffix" in result.issues[1].message


def test_parse_events_rejects_row_with_extra_field():
    """Test that a ragged row is reported with its line number and later rows still parse."""
    text = "DATE,DAMAGE\n1996-07-04,100\n1996-07-05,200,extra\n1996-07-06,300\n1996-07-07,5X\n"
    result = parse_events(text, EventSchema())
    assert [r.damage_cost for r in result.records] == [100.0, 300.0]
    assert [i.line for i in result.issues] == [3, 5]
    assert "expected 2 fields, found 3" in result.issues[0].message


def test_parse_events_pads_short_row():
    text = "DATE,DAMAGE,STATE\n1996-07-04,100\n"
    result = parse_events(text, EventSchema(region_column="STATE"))
    assert result.records[0].region_tag == ""


def test_parse_events_missing_column():
    """Test schema error for an unmapped column."""
    with pytest.raises(SchemaError) as exc:
        parse_events("WHEN,DAMAGE\n1996-07-04,1\n", EventSchema())
    assert "DATE" in exc.value.message


def test_parse_events_no_valid_rows():
    """Test empty-input error when nothing parses."""
    with pytest.raises(EmptyInputError):
        parse_events("DATE,DAMAGE\nbad,1\n", EventSchema())


def test_parse_events_empty_stream():
    with pytest.raises(EmptyInputError):
        parse_events("", EventSchema())


def test_parse_events_type_filter_and_region():
    """Test that other event types are filtered, not reported."""
    schema = EventSchema(date_column="BEGIN_DATE", cost_column="DAMAGE_PROPERTY", region_column="STATE",
                         event_type_column="EVENT_TYPE", event_types=["Lightning"])
    text = ("BEGIN_DATE,EVENT_TYPE,STATE,DAMAGE_PROPERTY\n"
            "1996-07-04,Lightning,TX,1K\n"
            "1996-07-04,Hail,TX,2K\n"
            "1996-07-09,lightning,FL,\n")
    result = parse_events(text, schema)
    assert result.skipped == 1
    assert [(r.region_tag, r.damage_cost) for r in result.records] == [("TX", 1000.0), ("FL", 0.0)]


def test_parse_events_custom_delimiter_and_format():
    schema = EventSchema(delimiter=";", date_format="%m/%d/%Y")
    result = parse_events("DATE;DAMAGE\n07/04/1996;3\n", schema)
    assert result.records[0].timestamp == date(1996, 7, 4)


def test_parse_cost_rejects_negative_and_blank_when_strict():
    with pytest.raises(ValueError):
        parse_cost("-5", {})
    with pytest.raises(ValueError):
        parse_cost("", {}, blank_as_zero=False)
    assert parse_cost("$1,200", {}) == 1200.0


# Temperatures

def test_parse_temperatures_basic():
    """Test unit tagging."""
    records = parse_temperatures("year,month,temperature\n1996,1,32.0\n", TemperatureSchema(), F)
    assert records == [TemperatureRecord(year=1996, month=1, mean_temp=32.0, temp_unit=F)]


def test_parse_temperatures_duplicate():
    """Test duplicate (year, month) error."""
    with pytest.raises(TemperatureParseError) as exc:
        parse_temperatures("year,month,temperature\n1996,1,32\n1996,1,33\n", TemperatureSchema(), F)
    assert exc.value.details["issues"][0]["line"] == 3


def test_parse_temperatures_month_out_of_range():
    with pytest.raises(TemperatureParseError) as exc:
        parse_temperatures("year,month,temperature\n1996,13,50.0\n", TemperatureSchema(), F)
    assert "13" in exc.value.message


def test_parse_temperatures_lists_every_problem():
    text = "year,month,temperature\n1996,1,abc\n1996,2,40\n1996,0,41\n"
    with pytest.raises(TemperatureParseError) as exc:
        parse_temperatures(text, TemperatureSchema(), F)
    assert [i["line"] for i in exc.value.details["issues"]] == [2, 4]


def test_parse_temperatures_reports_row_with_extra_field():
    text = "year,month,temperature\n1996,1,32\n1996,2,33,34\n1996,3,x\n"
    with pytest.raises(TemperatureParseError) as exc:
        parse_temperatures(text, TemperatureSchema(), F)
    assert [i["line"] for i in exc.value.details["issues"]] == [3, 4]


def test_parse_temperatures_yearmonth_column():
    schema = TemperatureSchema(yearmonth_column="Date", temp_column="Value")
    records = parse_temperatures("Date,Value\n199601,31.5\n199602,33.0\n", schema, F)
    assert [(r.year, r.month, r.mean_temp) for r in records] == [(1996, 1, 31.5), (1996, 2, 33.0)]


# Aggregation

def test_aggregate_counts_and_costs():
    """Test counting events and summing costs per month."""
    events = [EventRecord(timestamp=date(1996, 7, d), damage_cost=c) for d, c in ((1, 10.0), (2, 20.5), (30, 0.0))]
    series = aggregate_monthly(events, full_year_temps(), YearWindow(start=1996, end=1996))
    july = series[6]
    assert (july.year, july.month, july.count, july.total_cost) == (1996, 7, 3, 30.5)
    assert july.mean_temp == 37.0
    assert series[0].count == 0 and series[0].total_cost == 0.0
    assert [o.month for o in series] == list(range(1, 13))


def test_aggregate_coverage_error_names_gap():
    """Test coverage error for a missing in-window month."""
    with pytest.raises(CoverageError) as exc:
        aggregate_monthly([], full_year_temps(skip=(12,)), YearWindow(start=1996, end=1996))
    assert exc.value.details["missing"] == ["1996-12"]


def test_aggregate_conserves_events_and_ignores_order():
    """Test that counts sum to the in-window events regardless of order."""
    rng = random.Random(3)
    events = [EventRecord(timestamp=date(rng.choice([1995, 1996, 1997]), rng.randint(1, 12), rng.randint(1, 28)),
                          damage_cost=rng.random() * 1000) for _ in range(500)]
    temps = full_year_temps(1996) + full_year_temps(1997)
    window = YearWindow(start=1996, end=1997)
    series = aggregate_monthly(events, temps, window)
    in_window = [e for e in events if e.timestamp.year in (1996, 1997)]
    assert sum(o.count for o in series) == len(in_window)

    shuffled = list(events)
    rng.shuffle(shuffled)
    assert aggregate_monthly(shuffled, temps, window) == series


def test_aggregate_region_and_excluded_years():
    events = [
        EventRecord(timestamp=date(1996, 5, 1), region_tag="TX"),
        EventRecord(timestamp=date(1996, 5, 2), region_tag="AK"),
        EventRecord(timestamp=date(1997, 5, 2), region_tag="TX"),
    ]
    window = YearWindow(start=1996, end=1997, regions=["TX"], exclude_years=[1997])
    series = aggregate_monthly(events, full_year_temps(1996), window)
    assert len(series) == 12
    assert series[4].count == 1


# Baseline

def baseline_text(months):
    return "month,temperature\n" + "".join(f"{m},{40 + m}\n" for m in months)


def test_baseline_complete():
    baseline = baseline_from_file(baseline_text(range(1, 13)), F)
    assert baseline.t0(7) == 47.0
    assert baseline.temp_unit == F


def test_baseline_incomplete():
    with pytest.raises(BaselineError) as exc:
        baseline_from_file(baseline_text(range(1, 12)), F)
    assert exc.value.details["missing"] == [12]


def test_baseline_duplicate_month():
    with pytest.raises(BaselineError) as exc:
        baseline_from_file(baseline_text([1, 1] + list(range(2, 12))), F)
    assert exc.value.details["duplicated"] == [1]


def test_baseline_row_with_extra_field():
    text = baseline_text(range(1, 13)).replace("\n3,43\n", "\n3,43,44\n")
    with pytest.raises(BaselineError) as exc:
        baseline_from_file(text, F)
    assert exc.value.details["line"] == 4


def test_convert_baseline():
    baseline = convert_baseline(baseline_from_file(baseline_text(range(1, 13)), F), C)
    assert baseline.temp_unit == C
    assert baseline.t0(1) == pytest.approx((41 - 32) / 1.8)


# Units

def test_convert_absolute_freezing_point():
    assert convert_unit(32.0, F, C) == 0.0
    assert convert_unit(100.0, C, F) == pytest.approx(212.0)


def test_convert_difference():
    assert convert_unit(1.21, F, C, "difference") == pytest.approx(0.672, abs=0.01)


def test_convert_rate():
    assert convert_unit(2.0, F, C, "rate") == pytest.approx(3.6)


def test_convert_round_trip_array():
    values = np.linspace(-40.0, 120.0, 17)
    back = convert_unit(convert_unit(values, F, C), C, F)
    np.testing.assert_allclose(back, values, atol=1e-9)


def test_convert_unknown_kind():
    with pytest.raises(ValueError):
        convert_unit(1.0, F, C, "speed")


# Series files

def test_series_file(tmp_path):
    series = aggregate_monthly([], full_year_temps(), YearWindow(start=1996, end=1996))
    write_series(tmp_path / "series.json", series)
    assert read_series(tmp_path / "series.json") == series
