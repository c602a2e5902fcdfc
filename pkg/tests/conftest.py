"""
Pytest configuration and fixtures shared by all service tests.
"""

import logging
import math

import pytest

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared.models import (
    ConditionalModel,
    MonthlyBaseline,
    MonthlyModel,
    ScenarioMonth,
    SyntheticScenario,
    TemperatureUnit,
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo or large synthetic runs")


@pytest.fixture(autouse=True)
def _restore_root_logger():
    """Undo the CLI's logging.basicConfig(force=True) so log levels do not leak between tests."""
    root = logging.getLogger()
    level, handlers = root.level, root.handlers[:]
    yield
    root.setLevel(level)
    root.handlers[:] = handlers


def make_monthly_model(month, mu_N=100.0, mu_T=50.0, sigma_N=20.0, sigma_T=4.0, rho=0.5,
                       temp_unit=TemperatureUnit.FAHRENHEIT, n_points=19):
    """Fitted-model entry with a, b and sigma_cond consistent with the bivariate parameters."""
    b = rho * sigma_N / sigma_T
    return MonthlyModel(
        month=month, mu_N=mu_N, mu_T=mu_T, sigma_N=sigma_N, sigma_T=sigma_T, rho=rho,
        a=mu_N - b * mu_T, b=b, sigma_cond=sigma_N * math.sqrt(1.0 - rho ** 2),
        n_points=n_points, temp_unit=temp_unit,
    )


def small_scenario(n_years=10, seed=7, drift=0.5, unit=TemperatureUnit.FAHRENHEIT, rho=0.8):
    """Twelve months with about 20 events each, cheap enough for end-to-end runs."""
    months = [
        ScenarioMonth(month=m, mu_N=20.0 + m, mu_T=40.0 + 3.0 * m, sigma_N=5.0, sigma_T=2.0,
                      rho=rho, temp_unit=unit)
        for m in range(1, 13)
    ]
    return SyntheticScenario(months=months, drift_per_decade=drift, n_years=n_years,
                             seed=seed, start_year=1996, temp_unit=unit)


@pytest.fixture
def monthly_models():
    """Twelve fitted models in Fahrenheit."""
    return [make_monthly_model(m, mu_T=30.0 + 4.0 * m) for m in range(1, 13)]


@pytest.fixture
def unit_model():
    """Conditional model with a=0, b=1, sigma=1."""
    return ConditionalModel(a=0.0, b=1.0, sigma_cond=1.0, month=1)


@pytest.fixture
def mean_baseline(monthly_models):
    """Baseline at each model's mean temperature."""
    return MonthlyBaseline(temps={m.month: m.mu_T for m in monthly_models},
                           temp_unit=TemperatureUnit.FAHRENHEIT)


@pytest.fixture
def scenario():
    """Small synthetic scenario."""
    return small_scenario()
