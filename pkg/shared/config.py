"""
Run configuration.

A run is described by one declarative TOML or JSON file plus command-line
overrides. Environment variables and ``.env`` files are not
settings sources: the same file and flags always give the same run.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import (
    BaseSettings,
    JsonConfigSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from shared.errors import ConfigError, InputFileError
from shared.models import SensitivityMode, TemperatureUnit, YearWindow


DEFAULT_SUFFIXES = {"K": 1e3, "M": 1e6, "B": 1e9}


class EventSchema(BaseModel):
    """
    Column mapping for event files.

    Attributes:
        date_column (str): Column holding the event date
        cost_column (str): Column holding the damage cost
        region_column (str): Optional column holding the region tag
        event_type_column (str): Optional column holding the event type
        event_types (list): Event types to keep when ``event_type_column`` is set
        delimiter (str): Field delimiter
        date_format (str): ``strftime`` format; ``None`` parses ISO dates
        suffixes (dict): Magnitude suffix table for costs, e.g. ``{"K": 1000}``
        blank_cost_as_zero (bool): Treat an empty cost field as zero
    """
    date_column: str = "DATE"
    cost_column: str = "DAMAGE"
    region_column: Optional[str] = None
    event_type_column: Optional[str] = None
    event_types: Optional[List[str]] = None
    delimiter: str = ","
    date_format: Optional[str] = None
    suffixes: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_SUFFIXES))
    blank_cost_as_zero: bool = True

    @field_validator("suffixes")
    @classmethod
    def _positive_multipliers(cls, suffixes: Dict[str, float]) -> Dict[str, float]:
        bad = [k for k, v in suffixes.items() if v <= 0 or len(k) != 1]
        if bad:
            raise ValueError(f"suffixes must be single characters with positive multipliers: {bad}")
        return {k.upper(): v for k, v in suffixes.items()}


class TemperatureSchema(BaseModel):
    """
    Column mapping for monthly temperature files.

    Either ``year_column`` and ``month_column`` or a single
    ``yearmonth_column`` holding ``YYYYMM`` values identifies the month.
    """
    year_column: str = "year"
    month_column: str = "month"
    temp_column: str = "temperature"
    yearmonth_column: Optional[str] = None
    delimiter: str = ","


class BaselineSchema(BaseModel):
    """Column mapping for the 12-row baseline file."""
    month_column: str = "month"
    temp_column: str = "temperature"
    delimiter: str = ","


class RunConfig(BaseSettings):
    """
    Everything a CLI run needs.

    Attributes:
        events_file (Path): Event records (one row per event)
        temperatures_file (Path): Monthly mean temperatures
        baseline_file (Path): Counterfactual temperature per calendar month
        models_file (Path): Fitted-models JSON (input of attribute/project)
        scenario_file (Path): Scenario JSON for ``simulate``
        event_schema (EventSchema): Column mapping for events
        temperature_schema (TemperatureSchema): Column mapping for temperatures
        baseline_schema (BaselineSchema): Column mapping for the baseline
        window (YearWindow): Years, regions and excluded years
        temperature_unit (TemperatureUnit): Unit of the temperature file
        baseline_unit (TemperatureUnit): Unit of the baseline file
        scheme_weight (float): Scheme C weight on Scheme A
        outlier_threshold (float): Residual multiple flagging a regime outlier
        sensitivity_mode (SensitivityMode): Percent-per-degree estimate used for costs
        count_weighted (bool): Weight the mean-of-monthly sensitivity by counts
        warming_rate (float): Future warming per decade
        warming_rate_unit (TemperatureUnit): Unit of ``warming_rate``
        avg_cost (float): Average cost per event
        horizon_years (int): Projection horizon
        counterfactual_annual (float): Override for the counterfactual annual count
        percent_per_degC (float): Override for the sensitivity
        warming_now_degC (float): Override for current warming above baseline
        output_dir (Path): Where outputs are written
        output_formats (list): Any of ``json``, ``csv``
        metrics_file (Path): Optional Prometheus text-format metrics output
        mc_samples (int): Samples per Monte Carlo identity check
        mc_checks (int): Number of randomized identity checks
        n_replicates (int): Replicate histories for the volatility study
    """
    model_config = SettingsConfigDict(extra="forbid", validate_default=True)

    events_file: Optional[Path] = None
    temperatures_file: Optional[Path] = None
    baseline_file: Optional[Path] = None
    models_file: Optional[Path] = None
    scenario_file: Optional[Path] = None

    event_schema: EventSchema = Field(default_factory=EventSchema)
    temperature_schema: TemperatureSchema = Field(default_factory=TemperatureSchema)
    baseline_schema: BaselineSchema = Field(default_factory=BaselineSchema)
    window: Optional[YearWindow] = None
    temperature_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT
    baseline_unit: Optional[TemperatureUnit] = None

    scheme_weight: float = Field(0.5, ge=0.0, le=1.0)
    outlier_threshold: float = Field(2.0, gt=0.0)
    sensitivity_mode: SensitivityMode = SensitivityMode.MEAN_OF_MONTHLY
    count_weighted: bool = False

    warming_rate: float = 0.19
    warming_rate_unit: TemperatureUnit = TemperatureUnit.CELSIUS
    avg_cost: Optional[float] = Field(None, ge=0.0)
    horizon_years: int = 10
    counterfactual_annual: Optional[float] = None
    percent_per_degC: Optional[float] = None
    warming_now_degC: Optional[float] = None

    output_dir: Path = Path("output")
    output_formats: List[str] = Field(default_factory=lambda: ["json", "csv"])
    metrics_file: Optional[Path] = None

    mc_samples: int = Field(100_000, ge=1_000)
    mc_checks: int = Field(20, ge=1)
    n_replicates: int = Field(30, ge=30)

    @field_validator("output_formats")
    @classmethod
    def _known_formats(cls, formats: List[str]) -> List[str]:
        unknown = sorted(set(formats) - {"json", "csv"})
        if unknown:
            raise ValueError(f"unknown output formats: {unknown}")
        return formats

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @property
    def effective_baseline_unit(self) -> TemperatureUnit:
        return self.baseline_unit or self.temperature_unit

    def check_paths(self, *names: str) -> None:
        """
        Verify that the named path fields are set and exist.

        Args:
            *names: Field names such as ``"events_file"``

        Raises:
            InputFileError: If a path is unset or missing on disk
        """
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise InputFileError(f"{name} is not configured", {"field": name})
            if not Path(path).is_file():
                raise InputFileError(f"{name} not found: {path}", {"field": name, "path": str(path)})


def read_config_file(path: Path) -> Dict[str, Any]:
    """
    Read a TOML or JSON configuration file into a dictionary.

    Args:
        path (Path): ``.toml`` or ``.json`` file

    Returns:
        dict: Raw settings values

    Raises:
        InputFileError: If the file does not exist
        ConfigError: If the extension is not supported
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"config file not found: {path}", {"path": str(path)})
    suffix = path.suffix.lower()
    if suffix == ".toml":
        source = TomlConfigSettingsSource(RunConfig, toml_file=path)
    elif suffix == ".json":
        source = JsonConfigSettingsSource(RunConfig, json_file=path)
    else:
        raise ConfigError(f"unsupported config format: {path.suffix}", {"path": str(path)})
    values = source()
    return _resolve_relative_paths(values, path.parent)


_PATH_FIELDS = ("events_file", "temperatures_file", "baseline_file", "models_file",
                "scenario_file", "output_dir", "metrics_file")


def _resolve_relative_paths(values: Dict[str, Any], base: Path) -> Dict[str, Any]:
    """Paths in a config file are relative to the file itself."""
    resolved = dict(values)
    for name in _PATH_FIELDS:
        value = resolved.get(name)
        if value is not None and not Path(value).is_absolute():
            resolved[name] = str(base / value)
    return resolved


def load_run_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """
    Build a :class:`RunConfig` from an optional file and flag overrides.

    Overrides whose value is ``None`` are ignored so that unset CLI flags
    do not mask file values.

    Args:
        path (Path): Optional TOML/JSON config file
        **overrides: Field values that take precedence over the file

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: If validation fails

    Example:
        >>> cfg = load_run_config(None, scheme_weight=0.25)
        >>> cfg.scheme_weight
        0.25
    """
    values: Dict[str, Any] = read_config_file(path) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError("invalid run configuration", {"errors": _validation_messages(e)}) from e


def _validation_messages(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in error.errors()]
