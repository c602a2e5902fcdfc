"""
Unit tests for Simulate Service.
"""

import json

import numpy as np
import pytest
from scipy import stats

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from conftest import small_scenario
from services.simulate_service import (
    default_scenario,
    derive_seed,
    generate_series,
    load_scenario,
    mc_expectation_check,
    run_mc_checks,
    run_oracles,
    scheme_volatility,
    volatility_failures,
)
from shared.errors import ConfigError, DegenerateModelError, InputFileError, UsageError
from shared.models import (
    ConditionalModel,
    RegimeShift,
    ScenarioMonth,
    SchemeStats,
    SyntheticScenario,
    TemperatureUnit,
    VolatilityReport,
)


def noiseless_scenario(n_years=5, regime_shift=None):
    months = [ScenarioMonth(month=m, mu_N=0.0, mu_T=50.0 + m, sigma_N=0.0, sigma_T=0.0, a=10.0, b=2.0)
              for m in range(1, 13)]
    return SyntheticScenario(months=months, n_years=n_years, seed=1, start_year=2000, regime_shift=regime_shift)


# Generation

def test_generate_is_deterministic(scenario):
    """Test that a seed fixes the series."""
    assert generate_series(scenario) == generate_series(scenario)
    other = generate_series(scenario.model_copy(update={"seed": scenario.seed + 1}))
    assert other != generate_series(scenario)


def test_generate_shape(scenario):
    series = generate_series(scenario)
    assert len(series) == 12 * scenario.n_years
    assert [(o.year, o.month) for o in series[:13]] == [(1996, m) for m in range(1, 13)] + [(1997, 1)]
    assert all(o.count >= 0 for o in series)


def test_generate_prefix_is_stable(scenario):
    """Test that extending a scenario keeps its earlier years."""
    longer = scenario.model_copy(update={"n_years": scenario.n_years + 5})
    assert generate_series(longer)[:12 * scenario.n_years] == generate_series(scenario)


def test_generate_without_noise():
    """Test that zero spreads reproduce the model means every year."""
    series = generate_series(noiseless_scenario())
    for obs in series:
        assert obs.mean_temp == 50.0 + obs.month
        assert obs.count == int(np.rint(10.0 + 2.0 * (50.0 + obs.month)))


def test_generate_regime_shift():
    """Test the intercept shift from the change-point year on."""
    series = generate_series(noiseless_scenario(regime_shift=RegimeShift(start_year=2003, delta_a=-20.0)))
    before = {o.month: o.count for o in series if o.year == 2002}
    after = {o.month: o.count for o in series if o.year == 2003}
    assert all(after[m] == before[m] - 20 for m in range(1, 13))


def test_generate_drift_raises_counts():
    """Test positive annual-count trends under warming drift with positive slopes."""
    slopes = []
    for seed in range(100):
        scenario = small_scenario(n_years=30, seed=seed, drift=2.0)
        series = generate_series(scenario)
        annual = np.array([sum(o.count for o in series[12 * i:12 * (i + 1)]) for i in range(30)])
        slopes.append(stats.linregress(np.arange(30), annual).slope)
    assert all(s > 0 for s in slopes)


def test_derive_seed_is_stable():
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)


# Scenario files

def test_default_scenario():
    scenario = default_scenario()
    assert [m.month for m in scenario.months] == list(range(1, 13))
    assert scenario.temp_unit == TemperatureUnit.FAHRENHEIT
    assert all(m.b > 0 for m in scenario.months)


def test_load_scenario_invalid(tmp_path):
    raw = json.loads(default_scenario().model_dump_json())
    raw["months"] = raw["months"][:11]
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_load_scenario_missing(tmp_path):
    with pytest.raises(InputFileError):
        load_scenario(tmp_path / "nope.json")


# Expectation identity

def test_mc_check_at_baseline(unit_model):
    """Test a zero estimate when T equals T0."""
    result = mc_expectation_check(unit_model, 2.0, 2.0, n_samples=10_000)
    assert result.mc_mean == 0.0
    assert result.closed_form == 0.0
    assert result.passed


def test_mc_check_unit_model(unit_model):
    """Test the estimate for a=0, b=1, sigma=1 at T=1, T0=0."""
    result = mc_expectation_check(unit_model, 1.0, 0.0, n_samples=1_000_000, seed=3)
    assert result.closed_form == 1.0
    assert abs(result.z_score) <= 3.0
    assert result.mc_mean == pytest.approx(1.0, abs=3 * result.std_error)


def test_mc_check_limits():
    with pytest.raises(UsageError):
        mc_expectation_check(ConditionalModel(a=0.0, b=1.0, sigma_cond=1.0, month=1), 1.0, 0.0, n_samples=999)
    with pytest.raises(DegenerateModelError):
        mc_expectation_check(ConditionalModel(a=0.0, b=1.0, sigma_cond=0.0, month=1), 1.0, 0.0)


def test_mc_checks_randomized():
    """Test twenty randomized configurations within four standard errors."""
    checks = run_mc_checks(20, 100_000, seed=20150101)
    assert len(checks) == 20
    assert all(abs(c.z_score) <= 4.0 for c in checks)
    assert all(c.passed for c in checks)


def test_mc_checks_inverted_ratio_fails():
    """Test that the inverted density ratio misses the closed form by a wide margin."""
    checks = run_mc_checks(20, 100_000, seed=20150101, inverted=True)
    assert sum(abs(c.z_score) > 10.0 for c in checks) >= 18
    assert not all(c.passed for c in checks)


# Volatility

@pytest.mark.slow
def test_volatility_default_scenario():
    """Test equal scheme means and a more volatile Scheme B over 30 replicate centuries."""
    scenario = default_scenario().model_copy(update={"n_years": 100})
    report = scheme_volatility(scenario, n_replicates=30)
    a, b = report.scheme_A, report.scheme_B
    assert abs(a.mean - b.mean) <= 3.0 * np.hypot(a.std_error, b.std_error)
    assert b.sd > a.sd
    assert volatility_failures(report) == []


def test_volatility_without_count_noise():
    """Test that Scheme B equals Scheme A when the conditional scale is zero."""
    months = [ScenarioMonth(month=m, mu_N=0.0, mu_T=50.0, sigma_N=0.0, sigma_T=2.0, a=10.0, b=2.0)
              for m in range(1, 13)]
    scenario = SyntheticScenario(months=months, n_years=5, seed=3, start_year=2000)
    report = scheme_volatility(scenario, n_replicates=30)
    assert report.scheme_B.sd == report.scheme_A.sd
    assert report.scheme_B.mean == report.scheme_A.mean
    assert volatility_failures(report, noisy=False) == []


def test_volatility_needs_replicates(scenario):
    with pytest.raises(UsageError):
        scheme_volatility(scenario, n_replicates=29)


def test_volatility_unit_mismatch(scenario):
    celsius = [ConditionalModel(a=1.0, b=1.0, sigma_cond=1.0, month=m, temp_unit=TemperatureUnit.CELSIUS)
               for m in range(1, 13)]
    with pytest.raises(ConfigError):
        scheme_volatility(scenario, models=celsius)


def test_volatility_failures_report_gap():
    report = VolatilityReport(
        scheme_A=SchemeStats(mean=10.0, sd=5.0, std_error=0.1),
        scheme_B=SchemeStats(mean=12.0, sd=4.0, std_error=0.1),
        n_replicates=30, n_years=10,
    )
    failures = volatility_failures(report)
    assert len(failures) == 2
    assert "means differ" in failures[0]


# Oracles

def test_run_oracles_pass():
    report = run_oracles(small_scenario(rho=0.45), n_checks=5, n_samples=20_000, n_replicates=30)
    assert report.passed
    assert report.failures == []
    assert len(report.mc_checks) == 5


def test_run_oracles_inverted_fails():
    report = run_oracles(small_scenario(rho=0.45), n_checks=5, n_samples=20_000, n_replicates=30, inverted=True)
    assert not report.passed
    assert any(f.startswith("identity check") for f in report.failures)
