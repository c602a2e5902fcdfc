"""
Shared domain models for all services.

This module contains the pydantic models exchanged between the ingest,
stats, attribution and simulate services and serialized by the CLI.
All models are immutable once constructed.
"""

import enum
import math
from datetime import date
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


MONTHS = tuple(range(1, 13))

# Tolerance for |rho| approaching 1 and for zero variances.
DEGENERACY_TOL = 1e-12


class TemperatureUnit(str, enum.Enum):
    """Temperature unit enumeration."""
    FAHRENHEIT = "F"
    CELSIUS = "C"


class DomainModel(BaseModel):
    """Base class: frozen, no unknown fields."""
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

class EventRecord(DomainModel):
    """
    One recorded event (e.g. a lightning strike causing damage).

    Attributes:
        timestamp (date): Calendar date of the event
        damage_cost (float): Nonnegative cost, same currency unit throughout a dataset
        region_tag (str): Opaque region label used for filtering
    """
    timestamp: date
    damage_cost: float = Field(0.0, ge=0.0)
    region_tag: str = ""


class TemperatureRecord(DomainModel):
    """
    Mean temperature of one calendar month.

    Attributes:
        year (int): Calendar year
        month (int): Month 1-12
        mean_temp (float): Area-averaged mean temperature
        temp_unit (TemperatureUnit): Unit of ``mean_temp``
    """
    year: int
    month: int = Field(..., ge=1, le=12)
    mean_temp: float
    temp_unit: TemperatureUnit


class MonthlyObservation(DomainModel):
    """
    Event count and mean temperature for one (year, month).

    Attributes:
        year (int): Calendar year
        month (int): Month 1-12
        count (int): Number of events N in the month
        mean_temp (float): Mean temperature T of the month
        temp_unit (TemperatureUnit): Unit of ``mean_temp``
        total_cost (float): Sum of event costs in the month
    """
    year: int
    month: int = Field(..., ge=1, le=12)
    count: int = Field(..., ge=0)
    mean_temp: float
    temp_unit: TemperatureUnit
    total_cost: float = Field(0.0, ge=0.0)


class MonthlyBaseline(DomainModel):
    """
    Counterfactual temperature T0 for each calendar month.

    Attributes:
        temps (dict): Month (1-12) to T0
        temp_unit (TemperatureUnit): Unit of the T0 values
    """
    temps: Dict[int, float]
    temp_unit: TemperatureUnit

    @field_validator("temps")
    @classmethod
    def _all_months(cls, temps: Dict[int, float]) -> Dict[int, float]:
        missing = [m for m in MONTHS if m not in temps]
        extra = [m for m in temps if m not in MONTHS]
        if missing or extra:
            raise ValueError(f"baseline needs exactly months 1-12 (missing={missing}, invalid={extra})")
        return dict(sorted(temps.items()))

    def t0(self, month: int) -> float:
        """Return T0 for ``month``."""
        return self.temps[month]


class ParseIssue(DomainModel):
    """A data row that could not be parsed."""
    line: int
    message: str


class ParseResult(DomainModel):
    """
    Outcome of parsing an event file.

    Attributes:
        records (list): Successfully parsed events, in file order
        issues (list): Rows that failed, with their 1-based line numbers
        skipped (int): Rows dropped by the event-type filter
    """
    records: List[EventRecord]
    issues: List[ParseIssue] = Field(default_factory=list)
    skipped: int = 0


class YearWindow(DomainModel):
    """
    Inclusive year range plus optional region and year filters.

    An unset ``start`` or ``end`` is filled in from the data by
    :meth:`resolved` before the window is used.

    Attributes:
        start (int): First year
        end (int): Last year (inclusive)
        regions (list): Region tags to keep; ``None`` keeps every region
        exclude_years (list): Years dropped from the window
    """
    start: Optional[int] = None
    end: Optional[int] = None
    regions: Optional[List[str]] = None
    exclude_years: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _ordered(self) -> "YearWindow":
        if self.start is not None and self.end is not None and self.end < self.start:
            raise ValueError(f"window end {self.end} precedes start {self.start}")
        return self

    def resolved(self, first: int, last: int) -> "YearWindow":
        """Copy with an unset ``start`` or ``end`` replaced by ``first`` or ``last``."""
        return YearWindow(
            start=first if self.start is None else self.start,
            end=last if self.end is None else self.end,
            regions=self.regions,
            exclude_years=self.exclude_years,
        )

    def years(self) -> List[int]:
        """Years covered by the window, exclusions removed."""
        if self.start is None or self.end is None:
            raise ValueError("window bounds are not resolved")
        excluded = set(self.exclude_years)
        return [y for y in range(self.start, self.end + 1) if y not in excluded]

    def contains(self, year: int) -> bool:
        return self.start <= year <= self.end and year not in self.exclude_years


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

class BivariateParams(DomainModel):
    """
    Maximum-likelihood bivariate Gaussian fit for one calendar month.

    Attributes:
        mu_N (float): Mean events per month
        mu_T (float): Mean temperature
        sigma_N (float): Standard deviation of the count
        sigma_T (float): Standard deviation of the temperature
        rho (float): Correlation, strictly inside (-1, 1)
        n_points (int): Number of (N, T) pairs used
        month (int): Calendar month, if known
        temp_unit (TemperatureUnit): Unit of ``mu_T`` and ``sigma_T``
    """
    mu_N: float
    mu_T: float
    sigma_N: float = Field(..., gt=0.0)
    sigma_T: float = Field(..., gt=0.0)
    rho: float = Field(..., gt=-1.0, lt=1.0)
    n_points: int = Field(3, ge=3)
    month: Optional[int] = Field(None, ge=1, le=12)
    temp_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT


class ConditionalModel(DomainModel):
    """
    Gaussian model of N given T: mean ``a + b*T``, standard deviation ``sigma_cond``.

    Attributes:
        a (float): Intercept, events per month
        b (float): Slope, events per month per degree of ``temp_unit``
        sigma_cond (float): Residual standard deviation
        month (int): Calendar month
        temp_unit (TemperatureUnit): Unit the slope is expressed in
    """
    a: float
    b: float
    sigma_cond: float = Field(..., ge=0.0)
    month: int = Field(..., ge=1, le=12)
    temp_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT

    def mean(self, temp: float) -> float:
        """Conditional mean E[N|T]."""
        return self.a + self.b * temp


class MonthlyModel(DomainModel):
    """
    One entry of a fitted-models file: the bivariate fit and its conditional model.

    The same schema is used for scenario files, see :class:`ScenarioMonth`.
    """
    month: int = Field(..., ge=1, le=12)
    mu_N: float
    mu_T: float
    sigma_N: float = Field(..., gt=0.0)
    sigma_T: float = Field(..., gt=0.0)
    rho: float = Field(..., gt=-1.0, lt=1.0)
    a: float
    b: float
    sigma_cond: float = Field(..., ge=0.0)
    n_points: int = Field(..., ge=3)
    temp_unit: TemperatureUnit

    @classmethod
    def from_fit(cls, params: BivariateParams, model: ConditionalModel) -> "MonthlyModel":
        return cls(
            month=model.month,
            mu_N=params.mu_N,
            mu_T=params.mu_T,
            sigma_N=params.sigma_N,
            sigma_T=params.sigma_T,
            rho=params.rho,
            a=model.a,
            b=model.b,
            sigma_cond=model.sigma_cond,
            n_points=params.n_points,
            temp_unit=params.temp_unit,
        )

    def to_params(self) -> BivariateParams:
        return BivariateParams(
            mu_N=self.mu_N, mu_T=self.mu_T, sigma_N=self.sigma_N, sigma_T=self.sigma_T,
            rho=self.rho, n_points=self.n_points, month=self.month, temp_unit=self.temp_unit,
        )

    def to_conditional(self) -> ConditionalModel:
        return ConditionalModel(
            a=self.a, b=self.b, sigma_cond=self.sigma_cond,
            month=self.month, temp_unit=self.temp_unit,
        )


class OutlierYear(DomainModel):
    """A year departing from the yearly linear relation."""
    year: int
    standardized_residual: float


class YearlyFit(DomainModel):
    """
    Least-squares line through yearly (mean monthly count, yearly mean temperature) points.

    Attributes:
        slope (float): Events per month per degree of ``temp_unit``
        intercept (float): Events per month at zero temperature
        percent_per_degC (float): ``100 * slope / mean count``, per degree Celsius
        residual_sd (float): Residual standard deviation (n - 2 divisor)
        n_years (int): Number of years fitted
        temp_unit (TemperatureUnit): Unit of the temperature axis
    """
    slope: float
    intercept: float
    percent_per_degC: float
    residual_sd: float = Field(..., ge=0.0)
    n_years: int
    temp_unit: TemperatureUnit


class FitDiagnostics(DomainModel):
    """
    Diagnostics reported alongside a 12-month fit.

    Attributes:
        yearly_sd_fraction (float): Yearly fluctuation scale relative to the mean annual count
        jensen_gap (float): Mean over complete years of the averaging gap, events per year
        jensen_gap_by_year (dict): Gap for each complete year
        outlier_years (list): Years flagged by the regime outlier scan
    """
    yearly_sd_fraction: float = Field(..., ge=0.0)
    jensen_gap: float
    jensen_gap_by_year: Dict[int, float] = Field(default_factory=dict)
    outlier_years: List[OutlierYear] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Attribution
# ---------------------------------------------------------------------------

class Alpha(DomainModel):
    """
    Density ratio P(N|T0) / P(N|T).

    Attributes:
        value (float): The ratio, capped at ``exp(700)`` when saturated
        log_ratio (float): Natural log of the uncapped ratio
        saturated (bool): True if ``log_ratio`` exceeded the overflow guard
    """
    value: float = Field(..., ge=0.0)
    log_ratio: float
    saturated: bool = False


class AttributionRecord(DomainModel):
    """
    Attribution of one monthly observation.

    Attributes:
        year (int): Calendar year
        month (int): Month 1-12
        N_obs (float): Observed count
        T_obs (float): Observed temperature
        T0 (float): Counterfactual temperature
        temp_unit (TemperatureUnit): Unit of ``T_obs`` and ``T0``
        expected_N (float): E[N|T_obs]
        expected_natural (float): E[N|T0]
        delta_E (float): Scheme A expected extra events
        alpha (float): P(N|T0) / P(N|T_obs)
        alpha_saturated (bool): True if ``alpha`` hit the overflow guard
        attributed_B (float): Scheme B share attributed to climate, N*(1-alpha);
            None when alpha is saturated
        natural_B (float): Scheme B share attributed to chance, N*alpha; None when saturated
        blended (float): Scheme C blend of ``delta_E`` and ``attributed_B``; None when saturated
    """
    year: int
    month: int = Field(..., ge=1, le=12)
    N_obs: float = Field(..., ge=0.0)
    T_obs: float
    T0: float
    temp_unit: TemperatureUnit
    expected_N: float
    expected_natural: float
    delta_E: float
    alpha: float = Field(..., ge=0.0)
    alpha_saturated: bool = False
    attributed_B: Optional[float]
    natural_B: Optional[float]
    blended: Optional[float]


class AnnualRollup(DomainModel):
    """
    Calendar-year sums of attribution records.

    Scheme B and C sums leave out the ``saturated_months``.
    """
    year: int
    months: int
    N_obs: float
    expected_N: float
    expected_natural: float
    delta_E: float
    attributed_B: float
    natural_B: float
    blended: float
    saturated_months: int = 0


class MonthSensitivity(DomainModel):
    """
    Per-month sensitivity.

    ``percent_per_degC`` is ``None`` when the month's mean count is not positive.
    """
    month: int = Field(..., ge=1, le=12)
    percent_per_degC: Optional[float]
    mean_count: float


class SensitivityMode(str, enum.Enum):
    """Which percent-per-degree estimate a report leads with."""
    MEAN_OF_MONTHLY = "mean-of-monthly"
    BASELINE_COMPARISON = "baseline-comparison"


class SensitivityReport(DomainModel):
    """
    Percent change in event frequency per degree Celsius.

    Attributes:
        mode (SensitivityMode): Headline estimate
        weighting (str): ``"unweighted"`` or ``"count-weighted"`` mean over months
        per_month (list): 12 :class:`MonthSensitivity` entries
        average_percent_per_degC (float): Mean over months of ``100 * b / mu_N``
        baseline_percent_per_degC (float): Observed-vs-counterfactual percent per degree C of warming
        counterfactual_annual (float): Expected events per year at baseline temperatures
        observed_annual (float): Mean observed events per year
        percent_increase_vs_baseline (float): Percent increase of observed over counterfactual
        warming_degC (float): Mean observed temperature minus mean baseline, degrees C
        uniform_warming_percent (float): ``average_percent_per_degC * warming_degC``
    """
    mode: SensitivityMode
    weighting: str = "unweighted"
    per_month: List[MonthSensitivity]
    average_percent_per_degC: float
    baseline_percent_per_degC: Optional[float] = None
    counterfactual_annual: Optional[float] = None
    observed_annual: Optional[float] = None
    percent_increase_vs_baseline: Optional[float] = None
    warming_degC: Optional[float] = None
    uniform_warming_percent: Optional[float] = None

    @model_validator(mode="after")
    def _increase_consistent(self) -> "SensitivityReport":
        if None in (self.counterfactual_annual, self.observed_annual, self.percent_increase_vs_baseline):
            return self
        expected = 100.0 * (self.observed_annual - self.counterfactual_annual) / self.counterfactual_annual
        if not math.isclose(expected, self.percent_increase_vs_baseline, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("percent_increase_vs_baseline inconsistent with annual counts")
        return self

    @property
    def headline_percent_per_degC(self) -> float:
        """The percent per degree C selected by ``mode``."""
        if self.mode == SensitivityMode.BASELINE_COMPARISON and self.baseline_percent_per_degC is not None:
            return self.baseline_percent_per_degC
        return self.average_percent_per_degC


class CostProjection(DomainModel):
    """
    Attributed cost now and after ``horizon_years`` of further warming.

    No inflation adjustment is applied.
    """
    mode: SensitivityMode
    avg_cost_per_event: float = Field(..., ge=0.0)
    warming_rate: float
    warming_rate_unit: TemperatureUnit
    horizon_years: int = Field(..., ge=0)
    counterfactual_annual: float
    percent_per_degC: float
    warming_now_degC: float
    warming_future_degC: float
    current_attributed_cost: float
    projected_attributed_cost: float


class SchemeSummary(DomainModel):
    """Mean annual attribution of one scheme relative to the counterfactual."""
    scheme: str
    mean_annual: float
    percent_of_counterfactual: Optional[float] = None
    percent_per_degC: Optional[float] = None


class SeasonalWarming(DomainModel):
    """Mean warming above baseline, degrees C."""
    cold_season_degC: Optional[float]
    warm_season_degC: Optional[float]
    all_months_degC: float


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class ScenarioMonth(DomainModel):
    """
    True parameters of one calendar month in a synthetic scenario.

    Same fields as :class:`MonthlyModel`; zero noise is allowed and
    ``a``, ``b`` and ``sigma_cond`` are derived from the bivariate
    parameters when omitted.
    """
    month: int = Field(..., ge=1, le=12)
    mu_N: float
    mu_T: float
    sigma_N: float = Field(..., ge=0.0)
    sigma_T: float = Field(..., ge=0.0)
    rho: float = Field(0.0, ge=-1.0, le=1.0)
    a: Optional[float] = None
    b: Optional[float] = None
    sigma_cond: Optional[float] = Field(None, ge=0.0)
    n_points: Optional[int] = None
    temp_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT

    @model_validator(mode="before")
    @classmethod
    def _derive_conditional(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        rho = float(data.get("rho", 0.0))
        sigma_n = float(data.get("sigma_N", 0.0))
        sigma_t = float(data.get("sigma_T", 0.0))
        if data.get("b") is None:
            data["b"] = rho * sigma_n / sigma_t if sigma_t > 0 else 0.0
        if data.get("a") is None and "mu_N" in data and "mu_T" in data:
            data["a"] = float(data["mu_N"]) - data["b"] * float(data["mu_T"])
        if data.get("sigma_cond") is None:
            data["sigma_cond"] = sigma_n * math.sqrt(max(0.0, 1.0 - rho ** 2))
        return data

    def to_conditional(self) -> ConditionalModel:
        return ConditionalModel(a=self.a, b=self.b, sigma_cond=self.sigma_cond,
                                month=self.month, temp_unit=self.temp_unit)


class RegimeShift(DomainModel):
    """
    Change of the count-temperature relation from ``start_year`` on.

    ``delta_a`` and ``delta_b`` are added to every month's ``a`` and ``b``.
    """
    start_year: int
    delta_a: float = 0.0
    delta_b: float = 0.0


class SyntheticScenario(DomainModel):
    """
    A synthetic climate with known parameters.

    Attributes:
        months (list): 12 :class:`ScenarioMonth` entries
        drift_per_decade (float): Temperature drift, degrees of ``temp_unit`` per decade
        n_years (int): Number of simulated years
        seed (int): 64-bit seed
        start_year (int): First simulated calendar year
        temp_unit (TemperatureUnit): Unit of temperatures and drift
        regime_shift (RegimeShift): Optional change of (a, b)
    """
    months: List[ScenarioMonth]
    drift_per_decade: float = 0.0
    n_years: int = Field(..., ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    start_year: int = 2000
    temp_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT
    regime_shift: Optional[RegimeShift] = None

    @field_validator("months")
    @classmethod
    def _twelve_months(cls, months: List[ScenarioMonth]) -> List[ScenarioMonth]:
        found = sorted(m.month for m in months)
        if found != list(MONTHS):
            raise ValueError(f"scenario needs each month 1-12 exactly once, got {found}")
        return sorted(months, key=lambda m: m.month)

    @model_validator(mode="after")
    def _units_agree(self) -> "SyntheticScenario":
        units = {m.temp_unit for m in self.months}
        if units != {self.temp_unit}:
            raise ValueError(f"month units {sorted(u.value for u in units)} differ from scenario unit {self.temp_unit.value}")
        return self


class MCCheckResult(DomainModel):
    """Monte Carlo estimate of E[N(1-alpha)|T] against its closed form."""
    mc_mean: float
    closed_form: float
    std_error: float
    z_score: float
    n_samples: int
    inverted: bool = False
    passed: bool = True


class SchemeStats(DomainModel):
    """Spread of annual attributed totals under one scheme."""
    mean: float
    sd: float
    std_error: float


class VolatilityReport(DomainModel):
    """Scheme A against Scheme B across replicate synthetic histories."""
    scheme_A: SchemeStats
    scheme_B: SchemeStats
    n_replicates: int
    n_years: int


class SimulationReport(DomainModel):
    """
    Oracle results of a ``simulate`` run.

    Attributes:
        mc_checks (list): Expectation identity checks
        volatility (VolatilityReport): Scheme A against Scheme B spread
        failures (list): Human readable description of every failed check
    """
    mc_checks: List[MCCheckResult]
    volatility: VolatilityReport
    failures: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures
