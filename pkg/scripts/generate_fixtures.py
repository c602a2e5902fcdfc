"""
Demo fixture generator.

Writes input files for the whole pipeline from a synthetic scenario:
- Event file, one row per event, costs with K/M suffixes, mixed event types
- Monthly temperature file
- Baseline file at each month's mean temperature
- Run configuration (run.toml) pointing at the three files

Run with: python scripts/generate_fixtures.py --out data --years 19
"""

import argparse
import sys
import os
from pathlib import Path
from typing import Dict, Optional

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd

from services.simulate_service import default_scenario, generate_series, load_scenario, mean_baseline
from shared.models import SyntheticScenario
from shared.serialization import atomic_write_text

REGIONS = ("TX", "FL", "CO", "KS")
OTHER_EVENT_TYPES = ("Hail", "Thunderstorm Wind")


def format_cost(cost: float) -> str:
    """Render a cost the way storm-event files do: ``57.8K``, ``1.25M`` or a plain number."""
    if cost >= 1e6:
        return f"{cost / 1e6:.2f}M"
    if cost >= 1e3:
        return f"{cost / 1e3:.1f}K"
    return f"{cost:.0f}"


def events_frame(scenario: SyntheticScenario, seed: int, other_per_month: int = 2) -> pd.DataFrame:
    """
    One row per event of the scenario's series, plus rows of other event types.

    Args:
        scenario: Synthetic climate
        seed: Seed for event days, costs and regions
        other_per_month: Non-matching rows added per month

    Returns:
        pd.DataFrame: Columns BEGIN_DATE, EVENT_TYPE, STATE, DAMAGE_PROPERTY
    """
    rng = np.random.default_rng(seed)
    rows = []
    for obs in generate_series(scenario):
        days = rng.integers(1, 29, size=obs.count + other_per_month)
        costs = rng.lognormal(mean=np.log(40000.0), sigma=0.8, size=obs.count + other_per_month)
        for i, (day, cost) in enumerate(zip(days, costs)):
            rows.append({
                "BEGIN_DATE": f"{obs.year:04d}-{obs.month:02d}-{int(day):02d}",
                "EVENT_TYPE": "Lightning" if i < obs.count else OTHER_EVENT_TYPES[i % len(OTHER_EVENT_TYPES)],
                "STATE": REGIONS[int(rng.integers(len(REGIONS)))],
                "DAMAGE_PROPERTY": format_cost(float(cost)),
            })
    return pd.DataFrame(rows, columns=["BEGIN_DATE", "EVENT_TYPE", "STATE", "DAMAGE_PROPERTY"])


def temperatures_frame(scenario: SyntheticScenario) -> pd.DataFrame:
    """Monthly temperatures of the scenario's series."""
    return pd.DataFrame(
        [{"year": o.year, "month": o.month, "temperature": round(o.mean_temp, 3)} for o in generate_series(scenario)],
        columns=["year", "month", "temperature"],
    )


def baseline_frame(scenario: SyntheticScenario) -> pd.DataFrame:
    """Baseline at each month's mean temperature."""
    baseline = mean_baseline(scenario)
    return pd.DataFrame([{"month": m, "temperature": t} for m, t in baseline.temps.items()],
                        columns=["month", "temperature"])


RUN_CONFIG_TEMPLATE = """\
# Written by scripts/generate_fixtures.py; paths are relative to this file.
events_file = "events.csv"
temperatures_file = "temperatures.csv"
baseline_file = "baseline.csv"
output_dir = "output"
temperature_unit = "{unit}"

[event_schema]
date_column = "BEGIN_DATE"
cost_column = "DAMAGE_PROPERTY"
region_column = "STATE"
event_type_column = "EVENT_TYPE"
event_types = ["Lightning"]

[window]
start = {start}
end = {end}
"""


def run_config_text(scenario: SyntheticScenario) -> str:
    """Run configuration matching the files written by :func:`write_fixtures`."""
    return RUN_CONFIG_TEMPLATE.format(
        unit=scenario.temp_unit.value,
        start=scenario.start_year,
        end=scenario.start_year + scenario.n_years - 1,
    )


def write_fixtures(scenario: SyntheticScenario, out_dir: Path, seed: Optional[int] = None) -> Dict[str, Path]:
    """
    Write the three input files and a run configuration next to them.

    Args:
        scenario: Synthetic climate
        out_dir: Destination directory
        seed: Seed for event details; defaults to the scenario seed

    Returns:
        dict: ``events``, ``temperatures``, ``baseline`` and ``run_config`` paths
    """
    out_dir = Path(out_dir)
    seed = scenario.seed if seed is None else seed
    paths = {
        "events": out_dir / "events.csv",
        "temperatures": out_dir / "temperatures.csv",
        "baseline": out_dir / "baseline.csv",
        "run_config": out_dir / "run.toml",
    }
    atomic_write_text(paths["events"], events_frame(scenario, seed).to_csv(index=False, lineterminator="\n"))
    atomic_write_text(paths["temperatures"], temperatures_frame(scenario).to_csv(index=False, lineterminator="\n"))
    atomic_write_text(paths["baseline"], baseline_frame(scenario).to_csv(index=False, lineterminator="\n"))
    atomic_write_text(paths["run_config"], run_config_text(scenario))
    return paths


def main():
    """Generate the demo fixtures."""
    parser = argparse.ArgumentParser(description="Write demo input files from a synthetic scenario.")
    parser.add_argument("--scenario", type=Path, help="Scenario JSON (default: the bundled scenario).")
    parser.add_argument("--out", type=Path, default=Path("data"), help="Output directory (default: data).")
    parser.add_argument("--years", type=int, default=19, help="Number of years (default: 19, 1996-2014).")
    parser.add_argument("--seed", type=int, help="Override the scenario seed.")
    args = parser.parse_args()

    scenario = load_scenario(args.scenario) if args.scenario else default_scenario()
    updates = {"n_years": args.years}
    if args.seed is not None:
        updates["seed"] = args.seed
    scenario = SyntheticScenario.model_validate({**scenario.model_dump(), **updates})

    print("Generating demo fixtures...")
    paths = write_fixtures(scenario, args.out)
    for name, path in paths.items():
        print(f"  {name}: {path}")
    print(f"Done. Run: python services/cli.py --config {paths['run_config']} fit")


if __name__ == "__main__":
    main()
