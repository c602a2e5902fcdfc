"""
Ingest Service

This service turns raw event and temperature files into aligned monthly
observation series and counterfactual baselines.

Operations:
    - parse_events: Event rows to EventRecords, collecting per-row errors
    - parse_temperatures: Monthly temperature rows to TemperatureRecords
    - aggregate_monthly: Count events per (year, month) and align temperatures
    - baseline_from_file: 12-row counterfactual temperature file
    - convert_unit: Fahrenheit/Celsius conversion of values, differences and rates
"""

import io
import logging
from collections import Counter
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from shared.config import BaselineSchema, EventSchema, TemperatureSchema
from shared.errors import (
    BaselineError,
    CoverageError,
    EmptyInputError,
    InputFileError,
    SchemaError,
    TemperatureParseError,
    UnitMismatchError,
)
from shared.models import (
    MONTHS,
    EventRecord,
    MonthlyBaseline,
    MonthlyObservation,
    ParseIssue,
    ParseResult,
    TemperatureRecord,
    TemperatureUnit,
    YearWindow,
)
from shared.monitoring import track_rows
from shared.serialization import read_json, write_json

logger = logging.getLogger(__name__)

FAHRENHEIT_PER_CELSIUS = 1.8
FREEZING_F = 32.0

ABSOLUTE = "absolute"
DIFFERENCE = "difference"
RATE = "rate"

Stream = Union[str, TextIO]


# ---------------------------------------------------------------------------
# Units
# ---------------------------------------------------------------------------

def convert_unit(value, from_unit: TemperatureUnit, to_unit: TemperatureUnit, kind: str = ABSOLUTE):
    """
    Convert temperatures, temperature differences or per-degree rates.

    Absolute temperatures use the affine map T_C = (T_F - 32) / 1.8;
    differences only scale by 1.8; rates (quantity per degree) scale by
    the inverse factor.

    Args:
        value: Scalar, sequence or numpy array
        from_unit: Unit of ``value``
        to_unit: Target unit
        kind: ``"absolute"``, ``"difference"`` or ``"rate"``

    Returns:
        Converted value, a float for scalar input and an ndarray otherwise

    Example:
        >>> convert_unit(32.0, TemperatureUnit.FAHRENHEIT, TemperatureUnit.CELSIUS)
        0.0
        >>> round(convert_unit(1.21, TemperatureUnit.FAHRENHEIT, TemperatureUnit.CELSIUS, "difference"), 3)
        0.672
    """
    from_unit = TemperatureUnit(from_unit)
    to_unit = TemperatureUnit(to_unit)
    if kind not in (ABSOLUTE, DIFFERENCE, RATE):
        raise ValueError(f"unknown conversion kind: {kind}")

    scalar = np.isscalar(value)
    arr = np.asarray(value, dtype=float)
    if from_unit == to_unit:
        out = arr.copy()
    elif from_unit == TemperatureUnit.FAHRENHEIT:
        if kind == ABSOLUTE:
            out = (arr - FREEZING_F) / FAHRENHEIT_PER_CELSIUS
        elif kind == DIFFERENCE:
            out = arr / FAHRENHEIT_PER_CELSIUS
        else:
            out = arr * FAHRENHEIT_PER_CELSIUS
    else:
        if kind == ABSOLUTE:
            out = arr * FAHRENHEIT_PER_CELSIUS + FREEZING_F
        elif kind == DIFFERENCE:
            out = arr * FAHRENHEIT_PER_CELSIUS
        else:
            out = arr / FAHRENHEIT_PER_CELSIUS
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

# Fills the slot of a row with too many fields so later rows keep their line numbers
_RAGGED = "\x00ragged"


def _read_table(stream: Stream, delimiter: str, source: str) -> Tuple[pd.DataFrame, List[ParseIssue]]:
    """
    Read delimiter-separated text as strings, keeping blanks as empty strings.

    Rows with more fields than the header are not parsed; each comes back
    as a ParseIssue with its line number. Short rows are padded with
    empty strings. The frame is indexed by line number.

    Raises:
        EmptyInputError: If there is no header row
        SchemaError: If the text cannot be tokenized at all
    """
    text = stream if isinstance(stream, str) else stream.read()
    options = dict(sep=delimiter, dtype=str, keep_default_na=False, skipinitialspace=True, engine="python")
    try:
        width = len(pd.read_csv(io.StringIO(text), nrows=0, **options).columns)
        ragged: List[int] = []

        def keep_slot(fields: List[str]) -> List[str]:
            ragged.append(len(fields))
            return [_RAGGED] * width

        frame = pd.read_csv(io.StringIO(text), on_bad_lines=keep_slot, **options)
    except pd.errors.EmptyDataError as e:
        raise EmptyInputError(f"{source} input is empty", {"source": source}) from e
    except pd.errors.ParserError as e:
        raise SchemaError(f"{source} input is malformed: {e}", {"source": source}) from e
    frame.columns = [str(c).strip() for c in frame.columns]
    # header is line 1
    frame.index = np.arange(len(frame)) + 2
    frame = frame.fillna("")

    issues: List[ParseIssue] = []
    if ragged:
        slots = (frame == _RAGGED).all(axis=1).to_numpy()
        for line, found in zip(frame.index[slots], ragged):
            issues.append(ParseIssue(line=int(line), message=f"expected {width} fields, found {found}"))
        frame = frame[~slots]
    return frame, issues


def _require_columns(frame: pd.DataFrame, columns: Iterable[str], source: str):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(
            f"{source} input lacks mapped column(s): {', '.join(missing)}",
            {"source": source, "missing": missing, "found": list(frame.columns)},
        )


def _line_numbers(frame: pd.DataFrame) -> np.ndarray:
    return frame.index.to_numpy()


def read_text(path: Path) -> str:
    """
    Read an input file as text.

    Raises:
        InputFileError: If the file is missing or not UTF-8
    """
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8-sig")
    except FileNotFoundError as e:
        raise InputFileError(f"file not found: {path}", {"path": str(path)}) from e
    except UnicodeDecodeError as e:
        raise InputFileError(f"file is not UTF-8 text: {path}", {"path": str(path)}) from e


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

def parse_cost(raw: str, suffixes: Dict[str, float], blank_as_zero: bool = True) -> float:
    """
    Parse a cost field, expanding magnitude suffixes.

    Args:
        raw: Field text such as ``"57800"`` or ``"57.8K"``
        suffixes: Suffix to multiplier table
        blank_as_zero: Return 0 for an empty field

    Returns:
        float: Nonnegative cost

    Raises:
        ValueError: On unknown suffixes, non-numeric text or negative values

    Example:
        >>> parse_cost("57.8K", {"K": 1e3})
        57800.0
    """
    text = raw.strip().replace(",", "").lstrip("$")
    if not text:
        if blank_as_zero:
            return 0.0
        raise ValueError("empty cost")
    multiplier = Decimal(1)
    if text[-1].isalpha():
        suffix = text[-1].upper()
        if suffix not in suffixes:
            raise ValueError(f"unknown cost suffix {text[-1]!r}")
        multiplier = Decimal(str(suffixes[suffix]))
        text = text[:-1].strip()
    try:
        amount = Decimal(text) * multiplier
    except InvalidOperation:
        raise ValueError(f"non-numeric cost {raw!r}")
    if not amount.is_finite():
        raise ValueError(f"non-finite cost {raw!r}")
    if amount < 0:
        raise ValueError(f"negative cost {raw!r}")
    return float(amount)


def parse_events(stream: Stream, schema: EventSchema) -> ParseResult:
    """
    Parse event rows.

    Rows whose date or cost cannot be parsed, or that carry more fields
    than the header, are reported with their line number and skipped; the
    rest of the file is still read.

    Args:
        stream: Delimiter-separated text with a header row, or a text file object
        schema: Column mapping, delimiter, date format and suffix table

    Returns:
        ParseResult: Records, per-row issues and the number of type-filtered rows

    Raises:
        SchemaError: If a mapped column is missing
        EmptyInputError: If no row parses successfully
    """
    frame, ragged = _read_table(stream, schema.delimiter, "events")
    required = [schema.date_column, schema.cost_column]
    required += [c for c in (schema.region_column, schema.event_type_column) if c]
    _require_columns(frame, required, "events")

    lines = _line_numbers(frame)
    skipped = 0
    if schema.event_type_column and schema.event_types is not None:
        wanted = {t.strip().lower() for t in schema.event_types}
        keep = frame[schema.event_type_column].str.strip().str.lower().isin(wanted).to_numpy()
        skipped = int((~keep).sum())
        frame = frame[keep]
        lines = lines[keep]

    dates = pd.to_datetime(
        frame[schema.date_column].str.strip(),
        format=schema.date_format or "ISO8601",
        errors="coerce",
    )

    records: List[EventRecord] = []
    issues: List[ParseIssue] = list(ragged)
    regions = frame[schema.region_column] if schema.region_column else None
    for pos, (line, stamp, raw_cost) in enumerate(zip(lines, dates, frame[schema.cost_column])):
        if pd.isna(stamp):
            issues.append(ParseIssue(line=int(line), message=f"unparseable date {frame[schema.date_column].iloc[pos]!r}"))
            continue
        try:
            cost = parse_cost(raw_cost, schema.suffixes, schema.blank_cost_as_zero)
        except ValueError as e:
            issues.append(ParseIssue(line=int(line), message=str(e)))
            continue
        region = regions.iloc[pos].strip() if regions is not None else ""
        records.append(EventRecord(timestamp=stamp.date(), damage_cost=cost, region_tag=region))

    issues.sort(key=lambda i: i.line)
    for issue in issues:
        logger.warning(f"events line {issue.line}: {issue.message}")
    track_rows("events", "parsed", len(records))
    track_rows("events", "failed", len(issues))
    track_rows("events", "filtered", skipped)

    if not records:
        raise EmptyInputError(
            "no event rows could be parsed",
            {"issues": [i.model_dump() for i in issues[:50]], "filtered": skipped},
        )
    logger.info(f"parsed {len(records)} events ({len(issues)} rejected, {skipped} filtered)")
    return ParseResult(records=records, issues=issues, skipped=skipped)


# ---------------------------------------------------------------------------
# Temperatures
# ---------------------------------------------------------------------------

def _year_month_columns(frame: pd.DataFrame, schema: TemperatureSchema) -> Tuple[pd.Series, pd.Series]:
    if schema.yearmonth_column:
        _require_columns(frame, [schema.yearmonth_column, schema.temp_column], "temperatures")
        stamp = frame[schema.yearmonth_column].str.strip()
        return stamp.str[:-2], stamp.str[-2:]
    _require_columns(frame, [schema.year_column, schema.month_column, schema.temp_column], "temperatures")
    return frame[schema.year_column].str.strip(), frame[schema.month_column].str.strip()


def parse_temperatures(stream: Stream, schema: TemperatureSchema, unit: TemperatureUnit) -> List[TemperatureRecord]:
    """
    Parse monthly mean temperatures.

    Args:
        stream: Delimiter-separated text with a header row
        schema: Column mapping
        unit: Unit of the temperature column

    Returns:
        list: One TemperatureRecord per row, in file order

    Raises:
        SchemaError: If a mapped column is missing
        EmptyInputError: If the file has no data rows
        TemperatureParseError: On duplicate (year, month), months outside
            1-12 or non-numeric values; every offending line is listed
    """
    unit = TemperatureUnit(unit)
    frame, ragged = _read_table(stream, schema.delimiter, "temperatures")
    years, months = _year_month_columns(frame, schema)
    if frame.empty and not ragged:
        raise EmptyInputError("temperature input has no data rows", {"source": "temperatures"})

    records: List[TemperatureRecord] = []
    problems: List[ParseIssue] = list(ragged)
    seen: Dict[Tuple[int, int], int] = {}
    for line, y, m, t in zip(_line_numbers(frame), years, months, frame[schema.temp_column]):
        line = int(line)
        try:
            year, month = int(y), int(m)
        except ValueError:
            problems.append(ParseIssue(line=line, message=f"non-integer year/month {y!r}/{m!r}"))
            continue
        if month not in MONTHS:
            problems.append(ParseIssue(line=line, message=f"month {month} outside 1-12"))
            continue
        try:
            temp = float(t)
        except ValueError:
            problems.append(ParseIssue(line=line, message=f"non-numeric temperature {t!r}"))
            continue
        if not np.isfinite(temp):
            problems.append(ParseIssue(line=line, message=f"non-finite temperature {t!r}"))
            continue
        key = (year, month)
        if key in seen:
            problems.append(ParseIssue(line=line, message=f"duplicate {year}-{month:02d} (first on line {seen[key]})"))
            continue
        seen[key] = line
        records.append(TemperatureRecord(year=year, month=month, mean_temp=temp, temp_unit=unit))

    track_rows("temperatures", "parsed", len(records))
    track_rows("temperatures", "failed", len(problems))
    if problems:
        problems.sort(key=lambda p: p.line)
        raise TemperatureParseError(
            f"{len(problems)} invalid temperature row(s); first: line {problems[0].line}: {problems[0].message}",
            {"issues": [p.model_dump() for p in problems]},
        )
    return records


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_monthly(
    events: Sequence[EventRecord],
    temps: Sequence[TemperatureRecord],
    window: YearWindow,
) -> List[MonthlyObservation]:
    """
    Count events per (year, month) and pair each month with its temperature.

    Months without events are kept with count 0. Events outside the
    window, in excluded years or (when ``window.regions`` is set) in other
    regions are ignored.

    Args:
        events: Parsed events
        temps: Parsed temperatures, one per (year, month)
        window: Inclusive year range with optional region and year filters

    Returns:
        list: One MonthlyObservation per in-window month, ordered by (year, month)

    Raises:
        CoverageError: If an in-window month has no temperature
        UnitMismatchError: If temperatures mix units
    """
    units = {t.temp_unit for t in temps}
    if len(units) > 1:
        raise UnitMismatchError("temperature records mix units", {"units": sorted(u.value for u in units)})

    temp_by_key = {(t.year, t.month): t for t in temps}
    keys = [(y, m) for y in window.years() for m in MONTHS]
    missing = [f"{y}-{m:02d}" for (y, m) in keys if (y, m) not in temp_by_key]
    if missing:
        raise CoverageError(
            f"no temperature for {len(missing)} in-window month(s): {', '.join(missing[:12])}",
            {"missing": missing},
        )

    regions = set(window.regions) if window.regions is not None else None
    counts: Counter = Counter()
    costs: Dict[Tuple[int, int], Decimal] = {}
    for event in events:
        year, month = event.timestamp.year, event.timestamp.month
        if not window.contains(year):
            continue
        if regions is not None and event.region_tag not in regions:
            continue
        key = (year, month)
        counts[key] += 1
        # exact decimal sums keep totals independent of event order
        costs[key] = costs.get(key, Decimal(0)) + Decimal(repr(event.damage_cost))

    series = []
    for key in keys:
        temp = temp_by_key[key]
        series.append(MonthlyObservation(
            year=key[0],
            month=key[1],
            count=counts.get(key, 0),
            mean_temp=temp.mean_temp,
            temp_unit=temp.temp_unit,
            total_cost=float(costs.get(key, Decimal(0))),
        ))
    logger.info(f"aggregated {sum(counts.values())} events into {len(series)} months")
    return series


# ---------------------------------------------------------------------------
# Baseline
# ---------------------------------------------------------------------------

def baseline_from_file(stream: Stream, unit: TemperatureUnit, schema: Optional[BaselineSchema] = None) -> MonthlyBaseline:
    """
    Parse the counterfactual temperature of each calendar month.

    Args:
        stream: 12 data rows of (month, T0) with a header row
        unit: Unit of the T0 column
        schema: Column mapping, defaults to ``month`` and ``temperature``

    Returns:
        MonthlyBaseline: Complete baseline

    Raises:
        BaselineError: On missing, duplicated, out-of-range or non-numeric rows
    """
    schema = schema or BaselineSchema()
    frame, ragged = _read_table(stream, schema.delimiter, "baseline")
    if ragged:
        raise BaselineError(f"baseline line {ragged[0].line}: {ragged[0].message}", {"line": ragged[0].line})
    _require_columns(frame, [schema.month_column, schema.temp_column], "baseline")

    temps: Dict[int, float] = {}
    duplicated: List[int] = []
    for line, m, t in zip(_line_numbers(frame), frame[schema.month_column], frame[schema.temp_column]):
        try:
            month, temp = int(m), float(t)
        except ValueError as e:
            raise BaselineError(f"baseline line {line}: cannot parse {m!r}, {t!r}", {"line": int(line)}) from e
        if month not in MONTHS:
            raise BaselineError(f"baseline line {line}: month {month} outside 1-12", {"line": int(line)})
        if month in temps:
            duplicated.append(month)
            continue
        temps[month] = temp

    track_rows("baseline", "parsed", len(frame))
    if duplicated:
        raise BaselineError(f"duplicated baseline month(s): {sorted(set(duplicated))}", {"duplicated": sorted(set(duplicated))})
    missing = [m for m in MONTHS if m not in temps]
    if missing:
        raise BaselineError(f"incomplete baseline, missing month(s): {missing}", {"missing": missing})
    return MonthlyBaseline(temps=temps, temp_unit=TemperatureUnit(unit))


def convert_baseline(baseline: MonthlyBaseline, unit: TemperatureUnit) -> MonthlyBaseline:
    """Express ``baseline`` in ``unit``."""
    unit = TemperatureUnit(unit)
    if baseline.temp_unit == unit:
        return baseline
    temps = {m: convert_unit(t, baseline.temp_unit, unit) for m, t in baseline.temps.items()}
    return MonthlyBaseline(temps=temps, temp_unit=unit)


# ---------------------------------------------------------------------------
# Series files
# ---------------------------------------------------------------------------

def write_series(path: Path, series: Sequence[MonthlyObservation]):
    """Write observations as a JSON array."""
    write_json(path, list(series))


def read_series(path: Path) -> List[MonthlyObservation]:
    """
    Read a JSON array of observations.

    Raises:
        InputFileError: If the file is missing or malformed
    """
    try:
        raw = read_json(path)
        return [MonthlyObservation.model_validate(item) for item in raw]
    except FileNotFoundError as e:
        raise InputFileError(f"series file not found: {path}", {"path": str(path)}) from e
    except (ValueError, TypeError) as e:
        raise InputFileError(f"malformed series file {path}: {e}", {"path": str(path)}) from e


def load_observations(events_path: Path, temps_path: Path, event_schema: EventSchema,
                      temp_schema: TemperatureSchema, unit: TemperatureUnit,
                      window: Optional[YearWindow] = None) -> Tuple[List[MonthlyObservation], ParseResult]:
    """
    Read both input files and aggregate them.

    Window bounds left unset (or no window at all) default to the range
    of years in the temperature file.

    Returns:
        tuple: (observations, event parse result)
    """
    parsed = parse_events(read_text(events_path), event_schema)
    temps = parse_temperatures(read_text(temps_path), temp_schema, unit)
    years = [t.year for t in temps]
    window = (window or YearWindow()).resolved(min(years), max(years))
    return aggregate_monthly(parsed.records, temps, window), parsed
