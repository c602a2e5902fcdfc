"""
Prometheus Monitoring & Metrics

This module collects run metrics for the attribution pipeline.

Features:
- Ingested row counters (parsed, failed, filtered)
- Fit outcome counters
- Saturated attribution ratio counter
- Monte Carlo oracle outcome counters
- Stage latency tracking

Metrics live in a dedicated registry so a run can dump exactly its own
metrics to a text file in the Prometheus exposition format.
"""

import time
from pathlib import Path
from typing import Dict, Optional

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

REGISTRY = CollectorRegistry()

ingest_rows_total = Counter(
    'ingest_rows_total',
    'Data rows seen by the ingest service',
    ['source', 'result'],
    registry=REGISTRY,
)

fits_total = Counter(
    'fits_total',
    'Monthly bivariate fits attempted',
    ['result'],
    registry=REGISTRY,
)

alpha_saturated_total = Counter(
    'alpha_saturated_total',
    'Attribution ratios clipped by the overflow guard',
    registry=REGISTRY,
)

mc_checks_total = Counter(
    'mc_checks_total',
    'Monte Carlo expectation identity checks',
    ['result'],
    registry=REGISTRY,
)

stage_duration_seconds = Histogram(
    'stage_duration_seconds',
    'Pipeline stage duration',
    ['stage'],
    registry=REGISTRY,
)


def track_rows(source: str, result: str, count: int = 1):
    """
    Track ingested rows.

    Args:
        source: Input kind (events, temperatures, baseline)
        result: Row outcome (parsed, failed, filtered)
        count: Number of rows
    """
    if count:
        ingest_rows_total.labels(source=source, result=result).inc(count)


def track_fit(success: bool):
    """
    Track a monthly fit.

    Args:
        success: Whether the fit produced valid parameters
    """
    fits_total.labels(result="success" if success else "degenerate").inc()


def track_alpha_saturated(count: int = 1):
    """Track attribution ratios that hit the overflow guard."""
    if count:
        alpha_saturated_total.inc(count)


def track_mc_check(passed: bool):
    """
    Track a Monte Carlo identity check.

    Args:
        passed: Whether the estimate matched its closed form
    """
    mc_checks_total.labels(result="pass" if passed else "fail").inc()


class StageTimer:
    """
    Context manager recording how long a pipeline stage takes.

    Example:
        with StageTimer("fit"):
            models = fit_all_months(series)
    """

    def __init__(self, stage: str):
        """
        Initialize stage timer.

        Args:
            stage: Stage name used as the metric label
        """
        self.stage = stage
        self.start_time = None
        self.duration: Optional[float] = None

    def __enter__(self):
        """Start timing."""
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Record duration."""
        if self.start_time is not None:
            self.duration = time.perf_counter() - self.start_time
            stage_duration_seconds.labels(stage=self.stage).observe(self.duration)


def write_metrics(path: Path):
    """
    Write the registry to ``path`` in the Prometheus text format.

    Args:
        path: Destination file; parent directories are created
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)


def get_metrics_summary() -> Dict[str, float]:
    """
    Get a flat summary of the counters.

    Returns:
        dict: Sample name (with labels) to value
    """
    summary: Dict[str, float] = {}
    for metric in REGISTRY.collect():
        for sample in metric.samples:
            if sample.name.endswith("_created"):
                continue
            labels = ",".join(f"{k}={v}" for k, v in sorted(sample.labels.items()))
            key = f"{sample.name}{{{labels}}}" if labels else sample.name
            summary[key] = sample.value
    return summary
