"""
Command-line front end

Routes subcommands to the services, the way a gateway routes paths:

    fit        ingest events and temperatures, fit the 12 monthly models
    attribute  split observed counts under Schemes A, B and C
    project    attributed cost now and after further warming
    simulate   synthetic series plus the Monte Carlo oracle checks
    report     concatenated summary of the stages run so far

Every run is described by one TOML/JSON config file (``--config``) plus
flag overrides. Errors are printed to stderr as a JSON object and the
process exits with the error's code (1 oracle failure, 2 input or usage
error, 3 degenerate or insufficient data).

Example:
    python services/cli.py --config configs/example_run.toml fit
"""

import argparse
import json
import logging
import sys
import os
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pydantic import ValidationError

from services import attribution_service, ingest_service, simulate_service, stats_service
from shared.config import RunConfig, load_run_config, read_config_file
from shared.errors import (
    AttributionToolError,
    ConfigError,
    InputFileError,
    OracleFailure,
    UsageError,
    UnexpectedError,
    UnitMismatchError,
)
from shared.models import (
    CostProjection,
    MonthlyBaseline,
    MonthlyModel,
    MonthlyObservation,
    SensitivityMode,
    SensitivityReport,
    SyntheticScenario,
    TemperatureUnit,
)
from shared.monitoring import StageTimer, write_metrics
from shared.serialization import dumps, models_to_frame, read_json, write_csv, write_json

logger = logging.getLogger(__name__)

PROG = "attribution"
SUMMARY_FILES = {
    "fit": "fit_summary.json",
    "attribute": "attribution_summary.json",
    "project": "projection.json",
    "simulate": "simulation.json",
}


class ToolArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as :class:`UsageError`."""

    def error(self, message: str):
        raise UsageError(message, {"usage": self.format_usage().strip()})


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_input_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--events", dest="events_file", type=Path, help="Event file, one row per event.")
    parser.add_argument("--temperatures", dest="temperatures_file", type=Path, help="Monthly mean temperature file.")
    parser.add_argument("--unit", dest="temperature_unit", choices=["F", "C"], help="Unit of the temperature file.")
    parser.add_argument("--start", type=int, help="First year of the window.")
    parser.add_argument("--end", type=int, help="Last year of the window (inclusive).")
    parser.add_argument("--exclude-years", type=int, nargs="+", help="Years left out of the window.")
    parser.add_argument("--regions", nargs="+", help="Region tags to keep.")


def _add_baseline_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--baseline", dest="baseline_file", type=Path, help="Baseline file: month, temperature.")
    parser.add_argument("--baseline-unit", dest="baseline_unit", choices=["F", "C"],
                        help="Unit of the baseline file (default: the temperature unit).")


def _add_models_flag(parser: argparse.ArgumentParser):
    parser.add_argument("--models", dest="models_file", type=Path, help="Fitted-models JSON written by 'fit'.")


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per stage."""
    parser = ToolArgumentParser(
        prog=PROG,
        description="Attribute event counts and costs between climate change and natural variability.",
    )
    parser.add_argument("--config", type=Path, help="TOML or JSON run configuration.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level (default: INFO).")
    parser.add_argument("--output-dir", dest="output_dir", type=Path, help="Directory for output files.")
    parser.add_argument("--formats", dest="output_formats", nargs="+", choices=["json", "csv"],
                        help="Output formats (default: json csv).")
    parser.add_argument("--metrics-file", dest="metrics_file", type=Path,
                        help="Write run metrics in the Prometheus text format.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit = subparsers.add_parser("fit", help="Fit the 12 monthly count-temperature models.")
    _add_input_flags(fit)
    fit.add_argument("--models-out", dest="models_file", type=Path, help="Where to write the fitted models.")
    fit.add_argument("--outlier-threshold", dest="outlier_threshold", type=float,
                     help="Residual SDs flagging a regime outlier year (default: 2).")

    attribute = subparsers.add_parser("attribute", help="Attribute observed counts under Schemes A, B and C.")
    _add_input_flags(attribute)
    _add_baseline_flags(attribute)
    _add_models_flag(attribute)
    attribute.add_argument("--scheme-weight", dest="scheme_weight", type=float,
                           help="Scheme C weight on Scheme A, in [0, 1] (default: 0.5).")

    project = subparsers.add_parser("project", help="Project attributed costs.")
    _add_input_flags(project)
    _add_baseline_flags(project)
    _add_models_flag(project)
    project.add_argument("--mode", dest="sensitivity_mode", choices=[m.value for m in SensitivityMode],
                         help="Percent-per-degree estimate used for the headline projection.")
    project.add_argument("--count-weighted", dest="count_weighted", action="store_const", const=True,
                         help="Weight the monthly sensitivity average by mean counts.")
    project.add_argument("--avg-cost", dest="avg_cost", type=float, help="Average cost per event.")
    project.add_argument("--warming-rate", dest="warming_rate", type=float, help="Warming per decade.")
    project.add_argument("--warming-rate-unit", dest="warming_rate_unit", choices=["F", "C"],
                         help="Unit of the warming rate (default: C).")
    project.add_argument("--horizon", dest="horizon_years", type=int, help="Projection horizon in years.")
    project.add_argument("--counterfactual-annual", dest="counterfactual_annual", type=float,
                         help="Override: counterfactual events per year.")
    project.add_argument("--percent-per-degC", dest="percent_per_degC", type=float,
                         help="Override: percent change per degree C.")
    project.add_argument("--warming-now", dest="warming_now_degC", type=float,
                         help="Override: current warming above baseline, degrees C.")

    simulate = subparsers.add_parser("simulate", help="Generate a synthetic series and run the oracle checks.")
    simulate.add_argument("--scenario", dest="scenario_file", type=Path,
                          help="Scenario JSON (default: the bundled warming scenario).")
    simulate.add_argument("--seed", type=int, help="Override the scenario seed.")
    simulate.add_argument("--years", dest="n_years", type=int, help="Override the scenario length.")
    simulate.add_argument("--mc-samples", dest="mc_samples", type=int, help="Samples per identity check.")
    simulate.add_argument("--mc-checks", dest="mc_checks", type=int, help="Number of identity checks.")
    simulate.add_argument("--replicates", dest="n_replicates", type=int, help="Replicate histories (>= 30).")
    simulate.add_argument("--invert-alpha", action="store_true",
                          help="Debug: use the inverted density ratio; the identity checks must fail.")

    subparsers.add_parser("report", help="Concatenate the summaries of the stages run so far.")
    return parser


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Merge the config file with the flags that were given.

    Raises:
        ConfigError: If the merged configuration is invalid
    """
    overrides: Dict[str, Any] = {name: getattr(args, name, None) for name in RunConfig.model_fields}
    window_flags = {
        "start": getattr(args, "start", None),
        "end": getattr(args, "end", None),
        "exclude_years": getattr(args, "exclude_years", None),
        "regions": getattr(args, "regions", None),
    }
    window_flags = {k: v for k, v in window_flags.items() if v is not None}
    if window_flags:
        base = read_config_file(args.config) if args.config else {}
        window = dict(base.get("window") or {})
        window.update(window_flags)
        overrides["window"] = window
    return load_run_config(args.config, **overrides)


# ---------------------------------------------------------------------------
# Stage helpers
# ---------------------------------------------------------------------------

def _observations(cfg: RunConfig) -> Tuple[List[MonthlyObservation], Dict[str, int]]:
    cfg.check_paths("events_file", "temperatures_file")
    series, parsed = ingest_service.load_observations(
        cfg.events_file, cfg.temperatures_file, cfg.event_schema,
        cfg.temperature_schema, cfg.temperature_unit, cfg.window,
    )
    counts = {
        "events_parsed": len(parsed.records),
        "rows_rejected": len(parsed.issues),
        "rows_filtered": parsed.skipped,
        "months": len(series),
    }
    return series, counts


def _baseline(cfg: RunConfig, unit: TemperatureUnit) -> MonthlyBaseline:
    cfg.check_paths("baseline_file")
    baseline = ingest_service.baseline_from_file(
        ingest_service.read_text(cfg.baseline_file), cfg.effective_baseline_unit, cfg.baseline_schema,
    )
    return ingest_service.convert_baseline(baseline, unit)


def _models_path(cfg: RunConfig) -> Path:
    return Path(cfg.models_file) if cfg.models_file else Path(cfg.output_dir) / "models.json"


def _models(cfg: RunConfig) -> List[MonthlyModel]:
    return stats_service.read_models(_models_path(cfg))


def _require_model_unit(models: Sequence[MonthlyModel], unit: TemperatureUnit):
    model_unit = stats_service.model_unit(models)
    if model_unit != unit:
        raise UnitMismatchError(
            f"temperatures are in {unit.value} but the models were fitted in {model_unit.value}",
            {"temperature_unit": unit.value, "model_unit": model_unit.value},
        )


def _write_table(cfg: RunConfig, stem: str, rows: Sequence, json_obj: Any = None):
    out = Path(cfg.output_dir)
    if "json" in cfg.output_formats:
        write_json(out / f"{stem}.json", rows if json_obj is None else json_obj)
    if "csv" in cfg.output_formats:
        write_csv(out / f"{stem}.csv", models_to_frame(rows))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    """Ingest, fit the 12 monthly models and compute the fit diagnostics."""
    with StageTimer("ingest"):
        series, counts = _observations(cfg)
    with StageTimer("fit"):
        models = stats_service.fit_all_months(series)
        diag = stats_service.diagnostics(models, series, cfg.outlier_threshold)
        yearly = stats_service.yearly_points(series)
        try:
            yearly_fit = stats_service.yearly_linear_fit([(c, t) for _, c, t in yearly], cfg.temperature_unit)
        except AttributionToolError as e:
            logger.warning(f"yearly linear fit skipped: {e.message}")
            yearly_fit = None

    summary = {
        "ingest": counts,
        "models_file": str(_models_path(cfg)),
        "diagnostics": diag,
        "yearly_fit": yearly_fit,
        "yearly_points": [{"year": y, "mean_count": c, "mean_temp": t} for y, c, t in yearly],
    }
    stats_service.write_models(_models_path(cfg), models)
    _write_table(cfg, "series", series)
    if "csv" in cfg.output_formats:
        write_csv(Path(cfg.output_dir) / "models.csv", models_to_frame(models))
    write_json(Path(cfg.output_dir) / SUMMARY_FILES["fit"], summary)
    logger.info(f"fit complete: models written to {_models_path(cfg)}")
    return summary


def cmd_attribute(cfg: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    """Attribute the observation series under Schemes A, B and C."""
    models = _models(cfg)
    _require_model_unit(models, cfg.temperature_unit)
    with StageTimer("ingest"):
        series, counts = _observations(cfg)
        baseline = _baseline(cfg, cfg.temperature_unit)
    with StageTimer("attribute"):
        records, rollups = attribution_service.attribute_series(series, models, baseline, cfg.scheme_weight)
        report = attribution_service.percent_per_degree(
            models, SensitivityMode.MEAN_OF_MONTHLY, baseline, series, cfg.count_weighted,
        )
        seasons = attribution_service.seasonal_warming(series, baseline)
        schemes = attribution_service.summarize_schemes(rollups, report.counterfactual_annual, seasons.all_months_degC)

    summary = {
        "ingest": counts,
        "scheme_weight": cfg.scheme_weight,
        "sensitivity": report,
        "seasonal_warming": seasons,
        "schemes": schemes,
        "saturated_months": sum(r.alpha_saturated for r in records),
    }
    _write_table(cfg, "attribution_monthly", records)
    _write_table(cfg, "attribution_annual", rollups)
    write_json(Path(cfg.output_dir) / SUMMARY_FILES["attribute"], summary)
    logger.info(f"attribution complete: {len(records)} months, {len(rollups)} years")
    return summary


def _sensitivity(cfg: RunConfig) -> Optional[SensitivityReport]:
    """Sensitivity report from the models, baseline and (if configured) observations."""
    models = _models(cfg)
    unit = stats_service.model_unit(models)
    baseline = _baseline(cfg, unit) if cfg.baseline_file else None
    observed = None
    if cfg.events_file and cfg.temperatures_file:
        _require_model_unit(models, cfg.temperature_unit)
        observed, _ = _observations(cfg)
    return attribution_service.percent_per_degree(models, cfg.sensitivity_mode, baseline, observed, cfg.count_weighted)


def cmd_project(cfg: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    """Project attributed costs, reporting every intermediate factor."""
    if cfg.avg_cost is None:
        raise UsageError("avg_cost is required for a cost projection", {"missing": ["avg_cost"]})
    overrides = (cfg.counterfactual_annual, cfg.percent_per_degC, cfg.warming_now_degC)

    with StageTimer("project"):
        report = None if None not in overrides else _sensitivity(cfg)
        modes = [cfg.sensitivity_mode]
        if report is not None and report.baseline_percent_per_degC is not None:
            modes += [m for m in SensitivityMode if m != cfg.sensitivity_mode]

        projections: List[CostProjection] = []
        for mode in modes:
            if report is not None:
                mode_report = report.model_copy(update={"mode": mode})
                counterfactual = cfg.counterfactual_annual if cfg.counterfactual_annual is not None else mode_report.counterfactual_annual
                percent = cfg.percent_per_degC if cfg.percent_per_degC is not None else mode_report.headline_percent_per_degC
                warming = cfg.warming_now_degC if cfg.warming_now_degC is not None else mode_report.warming_degC
            else:
                counterfactual, percent, warming = overrides
            missing = [n for n, v in (("counterfactual_annual", counterfactual), ("percent_per_degC", percent),
                                      ("warming_now_degC", warming)) if v is None]
            if missing:
                raise UsageError(f"missing sensitivity inputs: {', '.join(missing)}", {"missing": missing})
            projections.append(attribution_service.project_costs(
                counterfactual, percent, warming, cfg.avg_cost, cfg.warming_rate,
                cfg.horizon_years, cfg.warming_rate_unit, mode,
            ))

    summary = {"projections": projections, "sensitivity": report}
    _write_table(cfg, "projection_table", projections)
    write_json(Path(cfg.output_dir) / SUMMARY_FILES["project"], summary)
    sys.stdout.write(dumps(projections))
    return summary


def _scenario(cfg: RunConfig, args: argparse.Namespace) -> SyntheticScenario:
    scenario = (simulate_service.load_scenario(cfg.scenario_file) if cfg.scenario_file
                else simulate_service.default_scenario())
    updates = {k: v for k, v in (("seed", args.seed), ("n_years", args.n_years)) if v is not None}
    if not updates:
        return scenario
    try:
        return SyntheticScenario.model_validate({**scenario.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigError("invalid scenario override", {"errors": [err["msg"] for err in e.errors()]}) from e


def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    """Generate a synthetic series and run the oracle checks."""
    scenario = _scenario(cfg, args)
    with StageTimer("simulate"):
        series = simulate_service.generate_series(scenario)
        report = simulate_service.run_oracles(
            scenario, cfg.mc_checks, cfg.mc_samples, cfg.n_replicates, inverted=args.invert_alpha,
        )
    summary = {"scenario": {"seed": scenario.seed, "n_years": scenario.n_years,
                            "drift_per_decade": scenario.drift_per_decade,
                            "temp_unit": scenario.temp_unit},
               "passed": report.passed,
               "oracles": report}
    _write_table(cfg, "simulated_series", series)
    write_json(Path(cfg.output_dir) / SUMMARY_FILES["simulate"], summary)
    if not report.passed:
        raise OracleFailure(f"{len(report.failures)} oracle check(s) failed", {"failures": report.failures})
    logger.info("simulation complete: all oracle checks passed")
    return summary


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    """Concatenate the stage summaries found in the output directory."""
    out = Path(cfg.output_dir)
    report = {}
    for stage, name in SUMMARY_FILES.items():
        path = out / name
        if path.is_file():
            report[stage] = read_json(path)
    if not report:
        raise InputFileError(f"no stage summaries in {out}; run fit, attribute, project or simulate first",
                             {"output_dir": str(out)})
    write_json(out / "report.json", report)
    sys.stdout.write(dumps(report))
    return report


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], Dict[str, Any]]] = {
    "fit": cmd_fit,
    "attribute": cmd_attribute,
    "project": cmd_project,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv: Arguments without the program name; defaults to ``sys.argv[1:]``

    Returns:
        int: Process exit code
    """
    cfg = None
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level), force=True)
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg, args)
        return 0
    except AttributionToolError as e:
        if isinstance(e, OracleFailure):
            logger.error(e.message)
        sys.stderr.write(json.dumps(e.to_dict(), default=str) + "\n")
        return e.exit_code
    except Exception as e:
        logger.exception(f"unexpected failure: {e}")
        error = UnexpectedError.wrap(e)
        sys.stderr.write(json.dumps(error.to_dict(), default=str) + "\n")
        return error.exit_code
    finally:
        if cfg is not None and cfg.metrics_file:
            write_metrics(cfg.metrics_file)


if __name__ == "__main__":
    sys.exit(main())
