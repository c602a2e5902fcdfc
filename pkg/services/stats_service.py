"""
Stats Service

This service fits the per-calendar-month bivariate Gaussian model linking
event counts N to temperature T and derives the conditional model P(N|T).

Operations:
    - fit_bivariate: Maximum-likelihood fit of one month's (N, T) pairs
    - conditional_from_bivariate: Intercept, slope and residual scale of N given T
    - conditional_pdf / bivariate_pdf: Density evaluation
    - yearly_sd_fraction: Yearly fluctuation scale relative to the mean annual count
    - yearly_linear_fit: Least-squares line through yearly averages
    - jensen_gap: Bias of evaluating the month-averaged model at averaged temperatures
    - regime_outlier_scan: Years departing from the yearly linear relation
"""

import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import stats

from services.ingest_service import RATE, convert_unit
from shared.errors import (
    DegenerateFitError,
    DegenerateModelError,
    InputFileError,
    InsufficientDataError,
    MissingMonthError,
    UnitMismatchError,
)
from shared.models import (
    DEGENERACY_TOL,
    MONTHS,
    BivariateParams,
    ConditionalModel,
    FitDiagnostics,
    MonthlyModel,
    MonthlyObservation,
    OutlierYear,
    TemperatureUnit,
    YearlyFit,
)
from shared.monitoring import track_fit
from shared.serialization import read_json, write_json

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 3
MIN_OUTLIER_YEARS = 5
DEFAULT_OUTLIER_THRESHOLD = 2.0

AnyModel = Union[ConditionalModel, MonthlyModel]


def as_conditional(model: AnyModel) -> ConditionalModel:
    """Return the conditional part of a fitted-model entry."""
    return model.to_conditional() if isinstance(model, MonthlyModel) else model


def by_month(models: Iterable, what: str = "models") -> Dict[int, object]:
    """
    Index per-month objects by calendar month.

    Raises:
        MissingMonthError: Unless every month 1-12 appears exactly once
    """
    indexed: Dict[int, object] = {}
    for model in models:
        if model.month in indexed:
            raise MissingMonthError(f"month {model.month} appears twice in {what}", {"month": model.month})
        indexed[model.month] = model
    missing = [m for m in MONTHS if m not in indexed]
    if missing:
        raise MissingMonthError(f"{what} lack month(s) {missing}", {"missing": missing})
    return indexed


def model_unit(models: Iterable) -> TemperatureUnit:
    """
    Return the common temperature unit of ``models``.

    Raises:
        UnitMismatchError: If the models mix units
    """
    units = {m.temp_unit for m in models}
    if len(units) != 1:
        raise UnitMismatchError("models mix temperature units", {"units": sorted(u.value for u in units)})
    return units.pop()


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit_bivariate(
    points: Sequence[Tuple[float, float]],
    month: Optional[int] = None,
    temp_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT,
) -> BivariateParams:
    """
    Fit a bivariate Gaussian to (N, T) pairs by maximum likelihood.

    The estimates are the sample moments with divisor n, which maximize
    the bivariate Gaussian likelihood.

    Args:
        points: (N, T) pairs of one calendar month
        month: Calendar month, carried into the result and error details
        temp_unit: Unit of the T values

    Returns:
        BivariateParams: Fitted parameters

    Raises:
        InsufficientDataError: Fewer than 3 points
        DegenerateFitError: Constant N or T, or |rho| within 1e-12 of 1

    Example:
        >>> p = fit_bivariate([(0, -1), (0, 1), (2, -1), (2, 1)])
        >>> (p.mu_N, p.sigma_N, p.rho)
        (1.0, 1.0, 0.0)
    """
    data = np.asarray(points, dtype=float).reshape(-1, 2)
    label = f"month {month}" if month is not None else "data"
    details = {"month": month, "n_points": int(len(data))}
    if len(data) < MIN_FIT_POINTS:
        raise InsufficientDataError(f"{label}: {len(data)} point(s), need at least {MIN_FIT_POINTS}", details)

    counts, temps = data[:, 0], data[:, 1]
    if np.ptp(counts) == 0:
        raise DegenerateFitError(f"{label}: event count is constant", details)
    if np.ptp(temps) == 0:
        raise DegenerateFitError(f"{label}: temperature is constant", details)

    mu_n, mu_t = counts.mean(), temps.mean()
    dn, dt = counts - mu_n, temps - mu_t
    var_n, var_t = np.mean(dn * dn), np.mean(dt * dt)
    sigma_n, sigma_t = math.sqrt(var_n), math.sqrt(var_t)
    if sigma_n == 0 or sigma_t == 0:
        raise DegenerateFitError(f"{label}: zero variance", details)
    rho = float(np.mean(dn * dt) / (sigma_n * sigma_t))
    if abs(rho) >= 1.0 - DEGENERACY_TOL:
        raise DegenerateFitError(f"{label}: count and temperature are perfectly correlated (rho={rho:.12g})",
                                 {**details, "rho": rho})

    return BivariateParams(
        mu_N=float(mu_n), mu_T=float(mu_t), sigma_N=sigma_n, sigma_T=sigma_t, rho=rho,
        n_points=len(data), month=month, temp_unit=temp_unit,
    )


def conditional_from_bivariate(params: BivariateParams) -> ConditionalModel:
    """
    Derive the Gaussian model of N given T.

    Args:
        params: Bivariate fit; the model is tagged month 1 when ``params.month`` is unset

    Returns:
        ConditionalModel: ``b = rho*sigma_N/sigma_T``, ``a = mu_N - b*mu_T``,
        ``sigma_cond = sigma_N*sqrt(1 - rho**2)``

    Example:
        >>> m = conditional_from_bivariate(BivariateParams(mu_N=10, mu_T=5, sigma_N=2, sigma_T=1, rho=0.5, month=1))
        >>> (m.a, m.b)
        (5.0, 1.0)
    """
    b = params.rho * params.sigma_N / params.sigma_T
    a = params.mu_N - b * params.mu_T
    sigma_cond = params.sigma_N * math.sqrt(1.0 - params.rho ** 2)
    return ConditionalModel(a=a, b=b, sigma_cond=sigma_cond, month=params.month or 1, temp_unit=params.temp_unit)


def conditional_pdf(model: ConditionalModel, N, T):
    """
    Density of N given T.

    Args:
        model: Conditional model with ``sigma_cond > 0``
        N: Count(s)
        T: Temperature(s) in the model's unit

    Returns:
        Gaussian density with mean ``a + b*T`` and scale ``sigma_cond``

    Raises:
        DegenerateModelError: If ``sigma_cond`` is zero
    """
    if model.sigma_cond <= 0:
        raise DegenerateModelError(f"month {model.month}: conditional scale is zero", {"month": model.month})
    return stats.norm.pdf(N, loc=model.a + model.b * np.asarray(T, dtype=float), scale=model.sigma_cond)


def bivariate_pdf(params: BivariateParams, N, T):
    """
    Bivariate Gaussian density of (N, T).

    Evaluated directly from the five parameters so it can be checked
    against the product of the conditional and marginal densities.
    """
    one_minus_rho2 = 1.0 - params.rho ** 2
    zn = (np.asarray(N, dtype=float) - params.mu_N) / params.sigma_N
    zt = (np.asarray(T, dtype=float) - params.mu_T) / params.sigma_T
    quad = (zn * zn - 2.0 * params.rho * zn * zt + zt * zt) / one_minus_rho2
    norm = 2.0 * math.pi * params.sigma_N * params.sigma_T * math.sqrt(one_minus_rho2)
    return np.exp(-0.5 * quad) / norm


def fit_month(series: Sequence[MonthlyObservation], month: int) -> MonthlyModel:
    """Fit one calendar month of an observation series."""
    points = [(o.count, o.mean_temp) for o in series if o.month == month]
    unit = series[0].temp_unit if series else TemperatureUnit.FAHRENHEIT
    try:
        params = fit_bivariate(points, month=month, temp_unit=unit)
    except (InsufficientDataError, DegenerateFitError):
        track_fit(False)
        raise
    track_fit(True)
    return MonthlyModel.from_fit(params, conditional_from_bivariate(params))


def fit_all_months(series: Sequence[MonthlyObservation]) -> List[MonthlyModel]:
    """
    Fit every calendar month of an observation series.

    Months are independent, so the result does not depend on the order
    of ``series``.

    Args:
        series: Monthly observations in a single temperature unit

    Returns:
        list: 12 MonthlyModel entries ordered by month

    Raises:
        UnitMismatchError: If observations mix units
        InsufficientDataError: If a month has fewer than 3 observations
        DegenerateFitError: If a month's data is degenerate
    """
    if series:
        model_unit(series)
    models = [fit_month(series, month) for month in MONTHS]
    logger.info(f"fitted 12 monthly models from {len(series)} observations")
    return models


def convert_models(models: Sequence[MonthlyModel], unit: TemperatureUnit) -> List[MonthlyModel]:
    """
    Express fitted models in another temperature unit.

    Means are converted as absolute temperatures, spreads as differences
    and slopes as per-degree rates; ``rho`` is unit-free.
    """
    unit = TemperatureUnit(unit)
    converted = []
    for m in models:
        if m.temp_unit == unit:
            converted.append(m)
            continue
        b = convert_unit(m.b, m.temp_unit, unit, RATE)
        mu_t = convert_unit(m.mu_T, m.temp_unit, unit)
        converted.append(m.model_copy(update={
            "mu_T": mu_t,
            "sigma_T": convert_unit(m.sigma_T, m.temp_unit, unit, "difference"),
            "b": b,
            "a": m.mu_N - b * mu_t,
            "temp_unit": unit,
        }))
    return converted


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def yearly_sd_fraction(models: Sequence[AnyModel], fits: Sequence[BivariateParams]) -> float:
    """
    Yearly fluctuation scale relative to the mean annual count.

    Sums the monthly residual scales ``sigma_N*sqrt(1 - rho**2)`` and
    divides by the sum of monthly mean counts.

    Args:
        models: 12 conditional models
        fits: The 12 bivariate fits they came from

    Returns:
        float: Nonnegative fraction

    Raises:
        MissingMonthError: If either input lacks a month
    """
    by_month(models, "models")
    fit_by_month = by_month(fits, "fits")
    spread = math.fsum(f.sigma_N * math.sqrt(1.0 - f.rho ** 2) for f in fit_by_month.values())
    total = math.fsum(f.mu_N for f in fit_by_month.values())
    if total <= 0:
        raise InsufficientDataError("mean annual count is zero", {"total": total})
    return spread / total


def yearly_points(series: Sequence[MonthlyObservation]) -> List[Tuple[int, float, float]]:
    """
    Average each complete year of a series.

    Returns:
        list: (year, mean monthly count, yearly mean temperature), ordered by year
    """
    grouped: Dict[int, List[MonthlyObservation]] = defaultdict(list)
    for obs in series:
        grouped[obs.year].append(obs)
    points = []
    for year in sorted(grouped):
        months = grouped[year]
        if len({o.month for o in months}) != 12:
            logger.debug(f"year {year} is incomplete, left out of yearly averages")
            continue
        points.append((year, math.fsum(o.count for o in months) / 12.0, math.fsum(o.mean_temp for o in months) / 12.0))
    return points


def _linregress(counts: np.ndarray, temps: np.ndarray):
    if len(counts) < MIN_FIT_POINTS:
        raise InsufficientDataError(f"{len(counts)} year(s), need at least {MIN_FIT_POINTS}", {"n_years": int(len(counts))})
    if np.ptp(temps) == 0:
        raise DegenerateFitError("yearly mean temperature is constant", {"n_years": int(len(counts))})
    fit = stats.linregress(temps, counts)
    residuals = counts - (fit.intercept + fit.slope * temps)
    residual_sd = math.sqrt(float(np.sum(residuals ** 2)) / (len(counts) - 2)) if len(counts) > 2 else 0.0
    return fit, residuals, residual_sd


def yearly_linear_fit(
    yearly: Sequence[Tuple[float, float]],
    temp_unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT,
) -> YearlyFit:
    """
    Ordinary least-squares line of mean monthly count on yearly mean temperature.

    Args:
        yearly: (mean monthly count, yearly mean temperature) per year
        temp_unit: Unit of the temperatures

    Returns:
        YearlyFit: Slope, intercept and percent change per degree Celsius

    Raises:
        InsufficientDataError: Fewer than 3 years
        DegenerateFitError: All temperatures equal
    """
    data = np.asarray(yearly, dtype=float).reshape(-1, 2)
    counts, temps = data[:, 0], data[:, 1]
    fit, _, residual_sd = _linregress(counts, temps)
    mean_count = float(counts.mean())
    if mean_count == 0:
        raise DegenerateFitError("mean yearly count is zero", {"n_years": int(len(counts))})
    percent = convert_unit(100.0 * fit.slope / mean_count, temp_unit, TemperatureUnit.CELSIUS, RATE)
    return YearlyFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        percent_per_degC=percent,
        residual_sd=residual_sd,
        n_years=len(counts),
        temp_unit=temp_unit,
    )


def jensen_gap(models: Sequence[AnyModel], temps: Sequence[float]) -> float:
    """
    Gap between summing monthly model means and evaluating the averaged model.

    Returns ``sum_i (a_i + b_i*T_i) - 12*(mean(a) + mean(b)*mean(T))``.
    It is zero when every month shares the same linear model.

    Args:
        models: 12 conditional models
        temps: Temperatures of months 1-12 of one year

    Returns:
        float: Gap in events per year
    """
    indexed = by_month([as_conditional(m) for m in models])
    if len(temps) != 12:
        raise MissingMonthError(f"need 12 monthly temperatures, got {len(temps)}", {"n_temps": len(temps)})
    a = np.array([indexed[m].a for m in MONTHS])
    b = np.array([indexed[m].b for m in MONTHS])
    t = np.asarray(temps, dtype=float)
    return float(np.sum(a + b * t) - 12.0 * (a.mean() + b.mean() * t.mean()))


def regime_outlier_scan(
    yearly: Sequence[Tuple[int, float, float]],
    threshold: float = DEFAULT_OUTLIER_THRESHOLD,
) -> List[OutlierYear]:
    """
    Flag years whose residual from the yearly linear fit exceeds ``threshold`` residual SDs.

    Each residual is studentized against the residual SD of the fit
    without its own year (externally studentized residuals).

    Args:
        yearly: (year, mean monthly count, yearly mean temperature)
        threshold: Positive multiple k of the residual standard deviation

    Returns:
        list: Flagged years with their standardized residuals, ordered by year

    Raises:
        InsufficientDataError: Fewer than 5 years
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(yearly) < MIN_OUTLIER_YEARS:
        raise InsufficientDataError(
            f"{len(yearly)} year(s), need at least {MIN_OUTLIER_YEARS} for the outlier scan",
            {"n_years": len(yearly)},
        )
    data = sorted(yearly)
    years = [int(y) for y, _, _ in data]
    counts = np.array([c for _, c, _ in data], dtype=float)
    temps = np.array([t for _, _, t in data], dtype=float)
    _, residuals, residual_sd = _linregress(counts, temps)
    # residual noise at rounding level means the points are collinear
    floor = 1e-9 * max(1.0, abs(float(counts.mean())))
    if residual_sd <= floor:
        return []

    n = len(counts)
    centered = temps - temps.mean()
    leverage = 1.0 / n + centered ** 2 / float(np.sum(centered ** 2))
    sse = float(np.sum(residuals ** 2))
    flagged = []
    for year, r, h in zip(years, residuals, leverage):
        if 1.0 - h <= 1e-12:
            continue
        deleted_var = max(sse - r ** 2 / (1.0 - h), 0.0) / (n - 3)
        deleted_sd = max(math.sqrt(deleted_var), floor)
        z = float(r / (deleted_sd * math.sqrt(1.0 - h)))
        if abs(z) > threshold:
            flagged.append(OutlierYear(year=year, standardized_residual=z))
    return flagged


def diagnostics(
    models: Sequence[MonthlyModel],
    series: Sequence[MonthlyObservation],
    threshold: float = DEFAULT_OUTLIER_THRESHOLD,
) -> FitDiagnostics:
    """
    Collect the fit diagnostics of a 12-month fit.

    The outlier scan is skipped (empty list) when fewer than 5 complete
    years are available.
    """
    fits = [m.to_params() for m in models]
    gaps: Dict[int, float] = {}
    grouped: Dict[int, Dict[int, float]] = defaultdict(dict)
    for obs in series:
        grouped[obs.year][obs.month] = obs.mean_temp
    for year in sorted(grouped):
        if len(grouped[year]) == 12:
            gaps[year] = jensen_gap(models, [grouped[year][m] for m in MONTHS])

    points = yearly_points(series)
    outliers: List[OutlierYear] = []
    if len(points) >= MIN_OUTLIER_YEARS:
        outliers = regime_outlier_scan(points, threshold)
    else:
        logger.warning(f"only {len(points)} complete year(s), regime outlier scan skipped")

    return FitDiagnostics(
        yearly_sd_fraction=yearly_sd_fraction(models, fits),
        jensen_gap=math.fsum(gaps.values()) / len(gaps) if gaps else 0.0,
        jensen_gap_by_year=gaps,
        outlier_years=outliers,
    )


# ---------------------------------------------------------------------------
# Models file
# ---------------------------------------------------------------------------

def write_models(path: Path, models: Sequence[MonthlyModel]):
    """Write the 12 fitted models as a JSON array ordered by month."""
    write_json(path, sorted(models, key=lambda m: m.month))


def read_models(path: Path) -> List[MonthlyModel]:
    """
    Read a fitted-models file.

    Raises:
        InputFileError: If the file is missing, malformed or incomplete
    """
    path = Path(path)
    try:
        raw = read_json(path)
    except FileNotFoundError as e:
        raise InputFileError(f"models file not found: {path}", {"path": str(path)}) from e
    except ValueError as e:
        raise InputFileError(f"models file is not valid JSON: {path}", {"path": str(path)}) from e
    if not isinstance(raw, list):
        raise InputFileError(f"models file must hold a JSON array: {path}", {"path": str(path)})
    try:
        models = [MonthlyModel.model_validate(item) for item in raw]
    except ValidationError as e:
        raise InputFileError(f"malformed models file {path}", {"path": str(path), "errors": [err["msg"] for err in e.errors()]}) from e
    try:
        by_month(models)
        model_unit(models)
    except (MissingMonthError, UnitMismatchError) as e:
        raise InputFileError(f"{path}: {e.message}", {"path": str(path), **e.details}) from e
    return sorted(models, key=lambda m: m.month)
