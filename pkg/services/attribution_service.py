"""
Attribution Service

This service splits event counts (and their costs) between climate change
and natural variability.

Schemes:
    - A: expected extra events ``b*(T - T0)`` from the conditional model
    - B: exact split of the observed count, ``N = N*alpha + N*(1 - alpha)``
      with ``alpha = P(N|T0) / P(N|T)``
    - C: convex blend of A and B

Features:
    - Log-space density ratio with an explicit saturation signal
    - Counterfactual annual counts at baseline temperatures
    - Percent change per degree Celsius (mean of monthly slopes or
      observed-vs-counterfactual comparison)
    - Per-month attribution tables with calendar-year rollups
    - Attributed cost now and after further warming
"""

import logging
import math
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from services.ingest_service import DIFFERENCE, RATE, convert_unit
from services.stats_service import AnyModel, as_conditional, by_month, model_unit
from shared.errors import (
    DegenerateModelError,
    InsufficientDataError,
    UnitMismatchError,
    UsageError,
)
from shared.models import (
    MONTHS,
    Alpha,
    AnnualRollup,
    AttributionRecord,
    ConditionalModel,
    CostProjection,
    MonthlyBaseline,
    MonthlyModel,
    MonthlyObservation,
    MonthSensitivity,
    SchemeSummary,
    SeasonalWarming,
    SensitivityMode,
    SensitivityReport,
    TemperatureUnit,
)
from shared.monitoring import track_alpha_saturated

logger = logging.getLogger(__name__)

MAX_LOG_ALPHA = 700.0
DEFAULT_WEIGHT = 0.5
# Multiples of ulp(N) a float can hold exactly
EXACT_SPLIT_STEPS = 2.0 ** 53

COLD_SEASON = (11, 12, 1, 2, 3)
WARM_SEASON = (4, 5, 6, 7, 8, 9)


def _check_unit(model: ConditionalModel, unit: Optional[TemperatureUnit]):
    if unit is not None and TemperatureUnit(unit) != model.temp_unit:
        raise UnitMismatchError(
            f"temperatures in {TemperatureUnit(unit).value} but month {model.month} model is in {model.temp_unit.value}",
            {"month": model.month, "unit": TemperatureUnit(unit).value, "model_unit": model.temp_unit.value},
        )


def _require_scale(model: ConditionalModel):
    if model.sigma_cond <= 0:
        raise DegenerateModelError(f"month {model.month}: conditional scale is zero", {"month": model.month})


# ---------------------------------------------------------------------------
# Scheme A
# ---------------------------------------------------------------------------

def expected_extra(model: ConditionalModel, T: float, T0: float, unit: Optional[TemperatureUnit] = None) -> float:
    """
    Expected extra events at temperature T over baseline T0.

    Under the linear-mean Gaussian model this is ``b*(T - T0)``; it is
    negative when the slope and the warming have opposite signs.

    Args:
        model: Conditional model
        T: Observed temperature
        T0: Baseline temperature
        unit: Unit of T and T0; checked against the model when given

    Returns:
        float: Expected extra events per month

    Raises:
        UnitMismatchError: If ``unit`` differs from the model's unit

    Example:
        >>> m = ConditionalModel(a=0.0, b=2.0, sigma_cond=1.0, month=7)
        >>> expected_extra(m, 1.5, 0.0)
        3.0
    """
    _check_unit(model, unit)
    return model.b * (T - T0)


def expected_extra_truncated(model: ConditionalModel, T: float, T0: float, lower: float = 0.0) -> float:
    """
    Integrate ``N*[P(N|T) - P(N|T0)]`` over ``[lower, inf)`` numerically.

    Counts below zero carry Gaussian mass under the model, so this differs
    from :func:`expected_extra` when a conditional mean is within a few
    scales of ``lower``.

    Raises:
        DegenerateModelError: If ``sigma_cond`` is zero
    """
    _require_scale(model)
    mean, mean0 = model.mean(T), model.mean(T0)
    sigma = model.sigma_cond
    upper = max(mean, mean0) + 40.0 * sigma
    start = max(lower, min(mean, mean0) - 40.0 * sigma)
    if start >= upper:
        return 0.0

    def integrand(n: float) -> float:
        return n * (stats.norm.pdf(n, mean, sigma) - stats.norm.pdf(n, mean0, sigma))

    breaks = [p for p in (mean, mean0) if start < p < upper]
    value, _ = integrate.quad(integrand, start, upper, points=breaks or None, limit=200)
    return float(value)


# ---------------------------------------------------------------------------
# Scheme B
# ---------------------------------------------------------------------------

def log_alpha(model: ConditionalModel, N, T: float, T0: float):
    """
    Log of ``P(N|T0) / P(N|T)``; works on scalars and arrays.

    Uses ``(m0 - m)(2N - m - m0) / (2 sigma^2)`` with ``m = a + b*T`` and
    ``m0 = a + b*T0``, which is exactly zero when ``T == T0``.
    """
    _require_scale(model)
    mean, mean0 = model.mean(T), model.mean(T0)
    return (mean0 - mean) * (2.0 * np.asarray(N, dtype=float) - mean - mean0) / (2.0 * model.sigma_cond ** 2)


def attribution_alpha(model: ConditionalModel, N: float, T: float, T0: float) -> Alpha:
    """
    Ratio of the conditional densities of N at the baseline and at the observed temperature.

    Computed in log space. A log-ratio above 700 is not exponentiated:
    the result is capped at ``exp(700)`` and flagged as saturated.

    Args:
        model: Conditional model with ``sigma_cond > 0``
        N: Observed count
        T: Observed temperature
        T0: Baseline temperature

    Returns:
        Alpha: Ratio, its logarithm and the saturation flag

    Raises:
        DegenerateModelError: If ``sigma_cond`` is zero

    Example:
        >>> m = ConditionalModel(a=0.0, b=1.0, sigma_cond=1.0, month=1)
        >>> round(attribution_alpha(m, 1.0, 1.0, 0.0).value, 4)
        0.6065
    """
    log_ratio = float(log_alpha(model, N, T, T0))
    if log_ratio > MAX_LOG_ALPHA:
        logger.warning(f"month {model.month}: alpha saturated (log ratio {log_ratio:.6g}) at N={N}, T={T}, T0={T0}")
        return Alpha(value=math.exp(MAX_LOG_ALPHA), log_ratio=log_ratio, saturated=True)
    return Alpha(value=math.exp(log_ratio), log_ratio=log_ratio, saturated=False)


def _split_spacing(N: float, natural: float) -> float:
    """Grid the natural part is rounded to before subtracting it from N."""
    fine = math.ulp(N)
    if abs(natural) < EXACT_SPLIT_STEPS * fine:
        return fine
    return 2.0 * math.ulp(abs(natural))


def scheme_b_split(N: float, alpha: float) -> Tuple[float, float]:
    """
    Split an observed count into its natural and climate-attributed parts.

    The natural part ``N*alpha`` is rounded to a grid fine enough to hold
    N, natural and attributed exactly, so ``natural + attributed == N``
    holds bit for bit. While ``|natural| < 2**53 * ulp(N)`` (alpha below
    about 2) the grid is ``ulp(N)`` and every N qualifies. For larger
    ratios both parts outgrow N and the grid coarsens to
    ``2*ulp(natural)``; the split stays exact whenever N lies on that
    grid, which covers every integer count with ``N*alpha < 2**52``. A real
    N with finer bits has no exact split in doubles at all, and the sum
    then lands on the grid point nearest N.

    Args:
        N: Observed count, nonnegative
        alpha: Density ratio, nonnegative

    Returns:
        tuple: (natural, attributed); attributed is negative when alpha > 1

    Example:
        >>> scheme_b_split(100.0, 1.0)
        (100.0, 0.0)
        >>> scheme_b_split(7.0, 300.0)
        (2100.0, -2093.0)
    """
    if N == 0:
        return 0.0, 0.0
    natural = N * alpha
    if not math.isfinite(natural):
        return natural, N - natural
    spacing = _split_spacing(N, natural)
    natural = round(natural / spacing) * spacing
    return natural, N - natural


def scheme_b_split_array(N: np.ndarray, alpha: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`scheme_b_split`."""
    N = np.asarray(N, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    natural = N * alpha
    fine = np.spacing(np.abs(N))
    with np.errstate(over="ignore", invalid="ignore"):
        coarse = 2.0 * np.spacing(np.abs(natural))
        spacing = np.where(np.abs(natural) < EXACT_SPLIT_STEPS * fine, fine, coarse)
        quantized = np.rint(natural / spacing) * spacing
    exact = np.isfinite(natural) & (N != 0)
    natural = np.where(exact, quantized, natural)
    return natural, N - natural


# ---------------------------------------------------------------------------
# Scheme C
# ---------------------------------------------------------------------------

def scheme_c_blend(delta_E: float, attributed_B: float, weight: float = DEFAULT_WEIGHT) -> float:
    """
    Blend Scheme A and Scheme B.

    Args:
        delta_E: Scheme A expected extra events
        attributed_B: Scheme B attributed count
        weight: Weight on Scheme A, in [0, 1]

    Returns:
        float: ``weight*delta_E + (1 - weight)*attributed_B``

    Raises:
        UsageError: If ``weight`` is outside [0, 1]
    """
    if not 0.0 <= weight <= 1.0:
        raise UsageError(f"scheme weight {weight} outside [0, 1]", {"weight": weight})
    return weight * delta_E + (1.0 - weight) * attributed_B


# ---------------------------------------------------------------------------
# Baselines and sensitivity
# ---------------------------------------------------------------------------

def _aligned(models: Sequence[AnyModel], baseline: MonthlyBaseline) -> Dict[int, ConditionalModel]:
    indexed = by_month([as_conditional(m) for m in models])
    unit = model_unit(indexed.values())
    if baseline.temp_unit != unit:
        raise UnitMismatchError(
            f"baseline in {baseline.temp_unit.value} but models in {unit.value}",
            {"baseline_unit": baseline.temp_unit.value, "model_unit": unit.value},
        )
    return indexed


def counterfactual_annual(models: Sequence[AnyModel], baseline: MonthlyBaseline) -> float:
    """
    Expected events per year at baseline temperatures.

    Args:
        models: 12 conditional or fitted models
        baseline: Baseline temperature per month, in the models' unit

    Returns:
        float: ``sum_i (a_i + b_i*T0_i)``

    Raises:
        MissingMonthError: If a month is missing
        UnitMismatchError: If baseline and models disagree on units
    """
    indexed = _aligned(models, baseline)
    return math.fsum(indexed[m].mean(baseline.t0(m)) for m in baseline.temps)


def _complete_years(series: Sequence[MonthlyObservation]) -> Dict[int, List[MonthlyObservation]]:
    grouped: Dict[int, List[MonthlyObservation]] = defaultdict(list)
    for obs in series:
        grouped[obs.year].append(obs)
    return {y: grouped[y] for y in sorted(grouped) if len({o.month for o in grouped[y]}) == 12}


def _series_unit(series: Sequence[MonthlyObservation], unit: TemperatureUnit):
    units = {o.temp_unit for o in series}
    if units and units != {unit}:
        raise UnitMismatchError(
            f"observations in {sorted(u.value for u in units)} but models in {unit.value}",
            {"observation_units": sorted(u.value for u in units), "model_unit": unit.value},
        )


def observed_annual(series: Sequence[MonthlyObservation]) -> float:
    """
    Mean events per complete calendar year.

    Raises:
        InsufficientDataError: If no year has all 12 months
    """
    years = _complete_years(series)
    if not years:
        raise InsufficientDataError("no complete year in the observation series", {"n_obs": len(series)})
    return math.fsum(math.fsum(o.count for o in obs) for obs in years.values()) / len(years)


def mean_warming(series: Sequence[MonthlyObservation], baseline: MonthlyBaseline,
                 months: Sequence[int] = MONTHS) -> Optional[float]:
    """
    Mean of ``T_obs - T0`` over the observations in ``months``, in degrees Celsius.

    Returns ``None`` when no observation falls in ``months``.
    """
    diffs = [o.mean_temp - baseline.t0(o.month) for o in series if o.month in months]
    if not diffs:
        return None
    return convert_unit(math.fsum(diffs) / len(diffs), baseline.temp_unit, TemperatureUnit.CELSIUS, DIFFERENCE)


def seasonal_warming(series: Sequence[MonthlyObservation], baseline: MonthlyBaseline) -> SeasonalWarming:
    """
    Warming above baseline for the cold season (Nov-Mar), the warm season (Apr-Sep) and all months.

    Raises:
        UnitMismatchError: If observations and baseline disagree on units
        InsufficientDataError: If the series is empty
    """
    _series_unit(series, baseline.temp_unit)
    overall = mean_warming(series, baseline)
    if overall is None:
        raise InsufficientDataError("empty observation series", {})
    return SeasonalWarming(
        cold_season_degC=mean_warming(series, baseline, COLD_SEASON),
        warm_season_degC=mean_warming(series, baseline, WARM_SEASON),
        all_months_degC=overall,
    )


def percent_per_degree(
    models: Sequence[MonthlyModel],
    mode: SensitivityMode = SensitivityMode.MEAN_OF_MONTHLY,
    baseline: Optional[MonthlyBaseline] = None,
    observed: Optional[Sequence[MonthlyObservation]] = None,
    count_weighted: bool = False,
) -> SensitivityReport:
    """
    Percent change in event frequency per degree Celsius.

    The mean-of-monthly estimate averages ``100*b_i/mu_N_i`` over months
    (optionally weighting by count, which gives ``100*sum(b)/sum(mu_N)``).
    Months whose mean count is not positive are left out with a warning.

    The baseline comparison divides the percent increase of the observed
    annual count over the counterfactual one by the mean warming. It is
    filled in whenever ``baseline`` and ``observed`` are both given.

    Args:
        models: 12 fitted models
        mode: Headline estimate
        baseline: Baseline temperatures in the models' unit
        observed: Observation series in the models' unit
        count_weighted: Weight the monthly average by mean counts

    Returns:
        SensitivityReport: Per-month and aggregate sensitivities

    Raises:
        UsageError: Baseline comparison requested without baseline and observations
        InsufficientDataError: No month has a positive mean count
    """
    mode = SensitivityMode(mode)
    indexed = by_month(models)
    unit = model_unit(indexed.values())

    per_month = []
    for month, m in indexed.items():
        if m.mu_N <= 0:
            logger.warning(f"month {month}: mean count {m.mu_N:g} is not positive, left out of the sensitivity average")
            per_month.append(MonthSensitivity(month=month, percent_per_degC=None, mean_count=m.mu_N))
            continue
        pct = convert_unit(100.0 * m.b / m.mu_N, unit, TemperatureUnit.CELSIUS, RATE)
        per_month.append(MonthSensitivity(month=month, percent_per_degC=pct, mean_count=m.mu_N))

    valid = [indexed[s.month] for s in per_month if s.percent_per_degC is not None]
    if not valid:
        raise InsufficientDataError("no month has a positive mean count", {})
    if count_weighted:
        average = convert_unit(100.0 * math.fsum(m.b for m in valid) / math.fsum(m.mu_N for m in valid),
                               unit, TemperatureUnit.CELSIUS, RATE)
    else:
        average = math.fsum(s.percent_per_degC for s in per_month if s.percent_per_degC is not None) / len(valid)

    fields = {}
    if baseline is not None and observed is not None:
        _series_unit(observed, unit)
        cf = counterfactual_annual(models, baseline)
        obs_annual = observed_annual(observed)
        increase = 100.0 * (obs_annual - cf) / cf
        complete = [o for obs in _complete_years(observed).values() for o in obs]
        warming = mean_warming(complete, baseline)
        comparison = increase / warming if warming else None
        if comparison is None:
            logger.warning("no warming above baseline, baseline comparison undefined")
        fields = {
            "baseline_percent_per_degC": comparison,
            "counterfactual_annual": cf,
            "observed_annual": obs_annual,
            "percent_increase_vs_baseline": increase,
            "warming_degC": warming,
            "uniform_warming_percent": average * warming if warming is not None else None,
        }
    elif mode == SensitivityMode.BASELINE_COMPARISON:
        raise UsageError("baseline comparison needs a baseline and an observation series", {"mode": mode.value})
    elif baseline is not None:
        fields = {"counterfactual_annual": counterfactual_annual(models, baseline)}

    return SensitivityReport(
        mode=mode,
        weighting="count-weighted" if count_weighted else "unweighted",
        per_month=per_month,
        average_percent_per_degC=average,
        **fields,
    )


# ---------------------------------------------------------------------------
# Series attribution
# ---------------------------------------------------------------------------

def attribute_observation(model: ConditionalModel, obs: MonthlyObservation, T0: float,
                          weight: float = DEFAULT_WEIGHT) -> AttributionRecord:
    """
    Attribute one monthly observation under Schemes A, B and C.

    A saturated alpha leaves the Scheme B and C fields empty.
    """
    delta_e = expected_extra(model, obs.mean_temp, T0, obs.temp_unit)
    alpha = attribution_alpha(model, obs.count, obs.mean_temp, T0)
    natural = attributed = blended = None
    if not alpha.saturated:
        natural, attributed = scheme_b_split(float(obs.count), alpha.value)
        blended = scheme_c_blend(delta_e, attributed, weight)
    return AttributionRecord(
        year=obs.year,
        month=obs.month,
        N_obs=obs.count,
        T_obs=obs.mean_temp,
        T0=T0,
        temp_unit=obs.temp_unit,
        expected_N=model.mean(obs.mean_temp),
        expected_natural=model.mean(T0),
        delta_E=delta_e,
        alpha=alpha.value,
        alpha_saturated=alpha.saturated,
        attributed_B=attributed,
        natural_B=natural,
        blended=blended,
    )


def rollup(records: Sequence[AttributionRecord]) -> List[AnnualRollup]:
    """
    Sum attribution records per calendar year.

    Sums are exactly rounded, so they do not depend on record order.
    Months with a saturated alpha count towards ``saturated_months`` and
    are left out of the Scheme B and C sums.
    """
    grouped: Dict[int, List[AttributionRecord]] = defaultdict(list)
    for r in records:
        grouped[r.year].append(r)
    rollups = []
    for year in sorted(grouped):
        rs = grouped[year]
        split = [r for r in rs if not r.alpha_saturated]
        rollups.append(AnnualRollup(
            year=year,
            months=len(rs),
            N_obs=math.fsum(r.N_obs for r in rs),
            expected_N=math.fsum(r.expected_N for r in rs),
            expected_natural=math.fsum(r.expected_natural for r in rs),
            delta_E=math.fsum(r.delta_E for r in rs),
            attributed_B=math.fsum(r.attributed_B for r in split),
            natural_B=math.fsum(r.natural_B for r in split),
            blended=math.fsum(r.blended for r in split),
            saturated_months=len(rs) - len(split),
        ))
    return rollups


def attribute_series(
    series: Sequence[MonthlyObservation],
    models: Sequence[AnyModel],
    baseline: MonthlyBaseline,
    weight: float = DEFAULT_WEIGHT,
) -> Tuple[List[AttributionRecord], List[AnnualRollup]]:
    """
    Attribute every observation of a series.

    Args:
        series: Monthly observations in the models' unit
        models: 12 conditional or fitted models
        baseline: Baseline temperatures in the models' unit
        weight: Scheme C weight on Scheme A

    Returns:
        tuple: (records ordered by (year, month), annual rollups ordered by year)

    Raises:
        MissingMonthError: If a model or baseline month is missing
        UnitMismatchError: If series, models and baseline disagree on units
        UsageError: If ``weight`` is outside [0, 1]
    """
    if not 0.0 <= weight <= 1.0:
        raise UsageError(f"scheme weight {weight} outside [0, 1]", {"weight": weight})
    indexed = _aligned(models, baseline)
    unit = baseline.temp_unit
    _series_unit(series, unit)

    records = [
        attribute_observation(indexed[obs.month], obs, baseline.t0(obs.month), weight)
        for obs in sorted(series, key=lambda o: (o.year, o.month))
    ]
    saturated = sum(r.alpha_saturated for r in records)
    track_alpha_saturated(saturated)
    if saturated:
        logger.warning(f"{saturated} month(s) with saturated alpha")
    logger.info(f"attributed {len(records)} monthly observations")
    return records, rollup(records)


def summarize_schemes(
    rollups: Sequence[AnnualRollup],
    counterfactual: float,
    warming_degC: Optional[float] = None,
) -> List[SchemeSummary]:
    """
    Mean annual attribution of Schemes A, B and C over complete years.

    Args:
        rollups: Annual rollups; years with fewer than 12 months are skipped
        counterfactual: Counterfactual annual count
        warming_degC: Mean warming above baseline, for the per-degree figure

    Returns:
        list: One SchemeSummary per scheme
    """
    complete = [r for r in rollups if r.months == 12]
    if not complete:
        raise InsufficientDataError("no complete year to summarize", {"n_years": len(rollups)})
    summaries = []
    for scheme, field in (("A", "delta_E"), ("B", "attributed_B"), ("C", "blended")):
        mean = math.fsum(getattr(r, field) for r in complete) / len(complete)
        pct = 100.0 * mean / counterfactual if counterfactual else None
        per_deg = pct / warming_degC if pct is not None and warming_degC else None
        summaries.append(SchemeSummary(scheme=scheme, mean_annual=mean,
                                       percent_of_counterfactual=pct, percent_per_degC=per_deg))
    return summaries


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

def project_costs(
    counterfactual: float,
    percent_per_degC: float,
    warming_now_degC: float,
    avg_cost: float,
    warming_rate: float,
    horizon_years: int,
    warming_rate_unit: TemperatureUnit = TemperatureUnit.CELSIUS,
    mode: SensitivityMode = SensitivityMode.MEAN_OF_MONTHLY,
) -> CostProjection:
    """
    Attributed annual cost now and after ``horizon_years`` more warming.

    ``current = counterfactual * percent/100 * warming_now * avg_cost``; the
    projection uses ``warming_now + rate*horizon/10``. Costs are not
    adjusted for inflation.

    Raises:
        UsageError: Negative horizon or average cost

    Example:
        >>> p = project_costs(758, 5.6, 0.67, 57800, 0.19, 10)
        >>> round(p.current_attributed_cost / 1e6, 2), round(p.projected_attributed_cost / 1e6, 2)
        (1.64, 2.11)
    """
    if horizon_years < 0:
        raise UsageError(f"horizon_years must be nonnegative, got {horizon_years}", {"horizon_years": horizon_years})
    if avg_cost < 0:
        raise UsageError(f"average cost must be nonnegative, got {avg_cost}", {"avg_cost": avg_cost})
    rate_c = convert_unit(warming_rate, warming_rate_unit, TemperatureUnit.CELSIUS, DIFFERENCE)
    future = warming_now_degC + rate_c * horizon_years / 10.0
    per_degree_events = counterfactual * percent_per_degC / 100.0
    return CostProjection(
        mode=SensitivityMode(mode),
        avg_cost_per_event=avg_cost,
        warming_rate=warming_rate,
        warming_rate_unit=TemperatureUnit(warming_rate_unit),
        horizon_years=horizon_years,
        counterfactual_annual=counterfactual,
        percent_per_degC=percent_per_degC,
        warming_now_degC=warming_now_degC,
        warming_future_degC=future,
        current_attributed_cost=per_degree_events * warming_now_degC * avg_cost,
        projected_attributed_cost=per_degree_events * future * avg_cost,
    )


def cost_projection(
    report: SensitivityReport,
    avg_cost: float,
    warming_rate: float,
    horizon_years: int,
    warming_rate_unit: TemperatureUnit = TemperatureUnit.CELSIUS,
    warming_now_degC: Optional[float] = None,
) -> CostProjection:
    """
    Cost projection from a sensitivity report.

    Uses the report's headline percent per degree, its counterfactual
    annual count and (unless overridden) its mean warming.

    Raises:
        UsageError: If the report lacks the counterfactual count or the warming
    """
    warming = warming_now_degC if warming_now_degC is not None else report.warming_degC
    missing = [name for name, value in (("counterfactual_annual", report.counterfactual_annual),
                                        ("warming_degC", warming)) if value is None]
    if missing:
        raise UsageError(f"sensitivity report lacks {', '.join(missing)} for a cost projection", {"missing": missing})
    return project_costs(
        counterfactual=report.counterfactual_annual,
        percent_per_degC=report.headline_percent_per_degC,
        warming_now_degC=warming,
        avg_cost=avg_cost,
        warming_rate=warming_rate,
        horizon_years=horizon_years,
        warming_rate_unit=warming_rate_unit,
        mode=report.mode,
    )
