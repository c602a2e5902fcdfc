"""
Simulate Service

This service generates synthetic climates with known parameters and runs
the Monte Carlo checks that verify the attribution identities.

Operations:
    - generate_series: Monthly (N, T) series from a SyntheticScenario
    - mc_expectation_check: Monte Carlo mean of N*(1 - alpha) against b*(T - T0)
    - scheme_volatility: Spread of annual Scheme A and Scheme B totals across replicates
    - run_oracles: Both checks with pass/fail verdicts

Every (year, month) draws from its own random stream derived from the
scenario seed, so a series does not depend on generation order.
"""

import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from services.attribution_service import MAX_LOG_ALPHA, log_alpha, scheme_b_split_array
from services.stats_service import by_month, model_unit
from shared.errors import ConfigError, DegenerateModelError, InputFileError, UsageError
from shared.models import (
    MONTHS,
    ConditionalModel,
    MCCheckResult,
    MonthlyBaseline,
    MonthlyObservation,
    SchemeStats,
    SimulationReport,
    SyntheticScenario,
    TemperatureUnit,
    VolatilityReport,
)
from shared.monitoring import track_mc_check
from shared.serialization import read_json

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO_PATH = Path(__file__).resolve().parent.parent / "configs" / "default_scenario.json"

MIN_MC_SAMPLES = 1_000
MIN_REPLICATES = 30
MC_TOLERANCE = 4.0
VOLATILITY_TOLERANCE = 3.0


def month_stream(seed: int, year_index: int, month: int) -> np.random.Generator:
    """Independent generator for one (year, month) of a scenario."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(year_index, month)))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed derived from ``seed`` and ``keys``."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def load_scenario(path: Path) -> SyntheticScenario:
    """
    Read a scenario JSON file.

    Raises:
        InputFileError: If the file is missing or not JSON
        ConfigError: If the scenario is invalid
    """
    path = Path(path)
    try:
        raw = read_json(path)
    except FileNotFoundError as e:
        raise InputFileError(f"scenario file not found: {path}", {"path": str(path)}) from e
    except ValueError as e:
        raise InputFileError(f"scenario file is not valid JSON: {path}", {"path": str(path)}) from e
    try:
        return SyntheticScenario.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(
            f"invalid scenario {path}",
            {"path": str(path), "errors": [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]},
        ) from e


def default_scenario() -> SyntheticScenario:
    """The bundled warming scenario."""
    return load_scenario(DEFAULT_SCENARIO_PATH)


def true_models(scenario: SyntheticScenario) -> List[ConditionalModel]:
    """Conditional models a scenario draws its counts from (before any regime shift)."""
    return [m.to_conditional() for m in scenario.months]


def mean_baseline(scenario: SyntheticScenario) -> MonthlyBaseline:
    """Baseline at each month's mean temperature."""
    return MonthlyBaseline(temps={m.month: m.mu_T for m in scenario.months}, temp_unit=scenario.temp_unit)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_series(scenario: SyntheticScenario) -> List[MonthlyObservation]:
    """
    Generate a monthly observation series.

    For each (year, month) T is drawn around the month's mean temperature
    plus the accumulated drift, then N is drawn from the conditional
    model at T and rounded to the nearest nonnegative integer. Zero
    spreads are evaluated directly.

    Args:
        scenario: Parameters, drift, length and seed

    Returns:
        list: ``12 * n_years`` observations ordered by (year, month)

    Example:
        >>> series = generate_series(default_scenario())
        >>> len(series) == 12 * default_scenario().n_years
        True
    """
    shift = scenario.regime_shift
    series = []
    for year_index in range(scenario.n_years):
        year = scenario.start_year + year_index
        drift = scenario.drift_per_decade * year_index / 10.0
        shifted = shift is not None and year >= shift.start_year
        for m in scenario.months:
            rng = month_stream(scenario.seed, year_index, m.month)
            temp = m.mu_T + drift
            if m.sigma_T > 0:
                temp = float(rng.normal(temp, m.sigma_T))
            a, b = m.a, m.b
            if shifted:
                a, b = a + shift.delta_a, b + shift.delta_b
            count = a + b * temp
            if m.sigma_cond > 0:
                count = float(rng.normal(count, m.sigma_cond))
            series.append(MonthlyObservation(
                year=year,
                month=m.month,
                count=max(0, int(np.rint(count))),
                mean_temp=temp,
                temp_unit=scenario.temp_unit,
            ))
    return series


# ---------------------------------------------------------------------------
# Expectation identity
# ---------------------------------------------------------------------------

def mc_expectation_check(
    model: ConditionalModel,
    T: float,
    T0: float,
    n_samples: int = 100_000,
    seed: int = 0,
    inverted: bool = False,
    tolerance: float = MC_TOLERANCE,
) -> MCCheckResult:
    """
    Check ``E[N(1 - alpha) | T] = b*(T - T0)`` by Monte Carlo.

    Samples N from the continuous conditional Gaussian at T (no rounding)
    and averages the Scheme B attributed share.

    Args:
        model: Conditional model with ``sigma_cond > 0``
        T: Observed temperature
        T0: Baseline temperature
        n_samples: Number of draws, at least 1000
        seed: Random seed
        inverted: Use ``P(N|T) / P(N|T0)`` instead of alpha (negative control)
        tolerance: Largest |z| counted as a pass

    Returns:
        MCCheckResult: Estimate, closed form, standard error and z-score

    Raises:
        UsageError: If ``n_samples`` is below 1000
        DegenerateModelError: If ``sigma_cond`` is zero
    """
    if n_samples < MIN_MC_SAMPLES:
        raise UsageError(f"n_samples must be at least {MIN_MC_SAMPLES}, got {n_samples}", {"n_samples": n_samples})
    if model.sigma_cond <= 0:
        raise DegenerateModelError(f"month {model.month}: conditional scale is zero", {"month": model.month})

    rng = np.random.default_rng(seed)
    samples = rng.normal(model.mean(T), model.sigma_cond, n_samples)
    log_ratio = log_alpha(model, samples, T, T0)
    if inverted:
        log_ratio = -log_ratio
    alpha = np.exp(np.minimum(log_ratio, MAX_LOG_ALPHA))
    _, attributed = scheme_b_split_array(samples, alpha)

    mc_mean = float(attributed.mean())
    std_error = float(attributed.std(ddof=1) / math.sqrt(n_samples))
    closed_form = model.b * (T - T0)
    if std_error > 0:
        z = (mc_mean - closed_form) / std_error
    else:
        z = 0.0 if mc_mean == closed_form else math.copysign(sys.float_info.max, mc_mean - closed_form)
    passed = abs(z) <= tolerance
    track_mc_check(passed)
    return MCCheckResult(
        mc_mean=mc_mean,
        closed_form=closed_form,
        std_error=std_error,
        z_score=float(z),
        n_samples=n_samples,
        inverted=inverted,
        passed=passed,
    )


def random_check_cases(n_checks: int, seed: int,
                       unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT) -> List[Tuple[ConditionalModel, float, float]]:
    """
    Randomized (model, T, T0) configurations for the identity check.

    Intercepts lie in [50, 150], slopes in +-[1, 5], scales in [5, 20] and
    temperature differences in +-[0.5, 2].
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    cases = []
    for i in range(n_checks):
        model = ConditionalModel(
            a=float(rng.uniform(50.0, 150.0)),
            b=float(rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 5.0)),
            sigma_cond=float(rng.uniform(5.0, 20.0)),
            month=int(MONTHS[i % 12]),
            temp_unit=unit,
        )
        T0 = float(rng.uniform(30.0, 80.0))
        T = T0 + float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0))
        cases.append((model, T, T0))
    return cases


def run_mc_checks(n_checks: int, n_samples: int, seed: int, inverted: bool = False,
                  unit: TemperatureUnit = TemperatureUnit.FAHRENHEIT) -> List[MCCheckResult]:
    """Run :func:`mc_expectation_check` on ``n_checks`` randomized configurations."""
    return [
        mc_expectation_check(model, T, T0, n_samples, seed=derive_seed(seed, 1, i), inverted=inverted)
        for i, (model, T, T0) in enumerate(random_check_cases(n_checks, seed, unit))
    ]


# ---------------------------------------------------------------------------
# Scheme volatility
# ---------------------------------------------------------------------------

def _annual_totals(series: Sequence[MonthlyObservation], models: Dict[int, ConditionalModel],
                   baseline: MonthlyBaseline) -> Tuple[np.ndarray, np.ndarray]:
    counts = np.array([o.count for o in series], dtype=float)
    temps = np.array([o.mean_temp for o in series])
    months = [o.month for o in series]
    b = np.array([models[m].b for m in months])
    t0 = np.array([baseline.t0(m) for m in months])
    delta_e = b * (temps - t0)

    attributed = delta_e.copy()
    for month, model in models.items():
        idx = np.array([i for i, m in enumerate(months) if m == month], dtype=int)
        # a noise-free model gives no split; Scheme B falls back to the expected value
        if model.sigma_cond <= 0 or idx.size == 0:
            continue
        log_ratio = log_alpha(model, counts[idx], temps[idx], t0[idx])
        alpha = np.exp(np.minimum(log_ratio, MAX_LOG_ALPHA))
        attributed[idx] = scheme_b_split_array(counts[idx], alpha)[1]

    years = len(series) // 12
    return delta_e.reshape(years, 12).sum(axis=1), attributed.reshape(years, 12).sum(axis=1)


def _scheme_stats(totals: np.ndarray) -> SchemeStats:
    replicate_means = totals.mean(axis=1)
    return SchemeStats(
        mean=float(totals.mean()),
        sd=float(totals.std(ddof=1)),
        std_error=float(replicate_means.std(ddof=1) / math.sqrt(len(replicate_means))),
    )


def scheme_volatility(
    scenario: SyntheticScenario,
    models: Optional[Sequence[ConditionalModel]] = None,
    baseline: Optional[MonthlyBaseline] = None,
    n_replicates: int = MIN_REPLICATES,
    seed: Optional[int] = None,
) -> VolatilityReport:
    """
    Compare annual Scheme A and Scheme B totals across replicate histories.

    Each replicate is the scenario regenerated with a seed derived from
    ``seed`` and the replicate index. Statistics pool every replicate-year;
    ``std_error`` is the spread of replicate means over ``sqrt(n_replicates)``.

    Args:
        scenario: Synthetic climate
        models: Models used for attribution; defaults to the scenario's true models
        baseline: Baseline temperatures; defaults to each month's mean temperature
        n_replicates: Number of replicate histories, at least 30
        seed: Master seed; defaults to the scenario seed

    Returns:
        VolatilityReport: Mean, SD and standard error of both schemes

    Raises:
        UsageError: If ``n_replicates`` is below 30
    """
    if n_replicates < MIN_REPLICATES:
        raise UsageError(f"n_replicates must be at least {MIN_REPLICATES}, got {n_replicates}",
                         {"n_replicates": n_replicates})
    seed = scenario.seed if seed is None else seed
    indexed = by_month(models if models is not None else true_models(scenario))
    baseline = baseline or mean_baseline(scenario)
    if model_unit(indexed.values()) != scenario.temp_unit or baseline.temp_unit != scenario.temp_unit:
        raise ConfigError("scenario, models and baseline must share a temperature unit",
                          {"scenario_unit": scenario.temp_unit.value})

    totals_a, totals_b = [], []
    for r in range(n_replicates):
        replicate = scenario.model_copy(update={"seed": derive_seed(seed, r)})
        a, b = _annual_totals(generate_series(replicate), indexed, baseline)
        totals_a.append(a)
        totals_b.append(b)

    report = VolatilityReport(
        scheme_A=_scheme_stats(np.array(totals_a)),
        scheme_B=_scheme_stats(np.array(totals_b)),
        n_replicates=n_replicates,
        n_years=scenario.n_years,
    )
    logger.info(f"volatility over {n_replicates} replicates: sd A={report.scheme_A.sd:.4g}, sd B={report.scheme_B.sd:.4g}")
    return report


def volatility_failures(report: VolatilityReport, noisy: bool = True) -> List[str]:
    """
    Check that both schemes agree on average and that Scheme B is the more volatile.

    Args:
        report: Volatility statistics
        noisy: Whether the scenario has count noise; without it the SD comparison is skipped

    Returns:
        list: Failure descriptions, empty when the checks pass
    """
    failures = []
    a, b = report.scheme_A, report.scheme_B
    combined = math.hypot(a.std_error, b.std_error)
    gap = abs(a.mean - b.mean)
    if gap > VOLATILITY_TOLERANCE * combined:
        failures.append(f"scheme means differ by {gap:.6g}, more than {VOLATILITY_TOLERANCE} combined standard errors ({combined:.6g})")
    if noisy and not b.sd > a.sd:
        failures.append(f"scheme B sd {b.sd:.6g} does not exceed scheme A sd {a.sd:.6g}")
    return failures


def run_oracles(
    scenario: SyntheticScenario,
    n_checks: int = 20,
    n_samples: int = 100_000,
    n_replicates: int = MIN_REPLICATES,
    inverted: bool = False,
) -> SimulationReport:
    """
    Run the expectation identity checks and the volatility comparison.

    Args:
        scenario: Synthetic climate; its seed drives every check
        n_checks: Number of randomized identity checks
        n_samples: Samples per identity check
        n_replicates: Replicate histories for the volatility comparison
        inverted: Use the inverted density ratio in the identity checks

    Returns:
        SimulationReport: Results and the list of failed checks
    """
    checks = run_mc_checks(n_checks, n_samples, scenario.seed, inverted, scenario.temp_unit)
    failures = [
        f"identity check {i}: z={c.z_score:.4g} (mc {c.mc_mean:.6g} vs closed form {c.closed_form:.6g})"
        for i, c in enumerate(checks) if not c.passed
    ]
    volatility = scheme_volatility(scenario, n_replicates=n_replicates)
    noisy = any(m.sigma_cond > 0 for m in scenario.months)
    failures += volatility_failures(volatility, noisy)
    for failure in failures:
        logger.error(failure)
    return SimulationReport(mc_checks=checks, volatility=volatility, failures=failures)
