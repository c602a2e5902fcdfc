"""
Tests for run metrics.
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared.monitoring import (
    REGISTRY,
    StageTimer,
    get_metrics_summary,
    track_alpha_saturated,
    track_fit,
    track_mc_check,
    track_rows,
    write_metrics,
)


def sample(name, **labels):
    return REGISTRY.get_sample_value(name, labels) or 0.0


def test_track_rows():
    """Test row counters by source and outcome."""
    before = sample("ingest_rows_total", source="events", result="failed")
    track_rows("events", "failed", 3)
    track_rows("events", "failed", 0)
    assert sample("ingest_rows_total", source="events", result="failed") == before + 3


def test_track_fit():
    ok = sample("fits_total", result="success")
    bad = sample("fits_total", result="degenerate")
    track_fit(True)
    track_fit(False)
    track_fit(False)
    assert sample("fits_total", result="success") == ok + 1
    assert sample("fits_total", result="degenerate") == bad + 2


def test_track_alpha_saturated():
    before = sample("alpha_saturated_total")
    track_alpha_saturated(4)
    track_alpha_saturated(0)
    assert sample("alpha_saturated_total") == before + 4


def test_track_mc_check():
    before = sample("mc_checks_total", result="fail")
    track_mc_check(False)
    assert sample("mc_checks_total", result="fail") == before + 1


def test_stage_timer():
    """Test duration recording for a stage."""
    count = sample("stage_duration_seconds_count", stage="unit-test")
    with StageTimer("unit-test") as timer:
        sum(range(1000))
    assert timer.duration is not None and timer.duration >= 0.0
    assert sample("stage_duration_seconds_count", stage="unit-test") == count + 1


def test_stage_timer_records_on_error():
    count = sample("stage_duration_seconds_count", stage="failing")
    try:
        with StageTimer("failing"):
            raise RuntimeError("boom")
    except RuntimeError:
        pass
    assert sample("stage_duration_seconds_count", stage="failing") == count + 1


def test_get_metrics_summary():
    track_fit(True)
    summary = get_metrics_summary()
    assert "fits_total{result=success}" in summary
    assert "alpha_saturated_total" in summary
    assert not any(key.endswith("_created") for key in summary)


def test_write_metrics(tmp_path):
    track_rows("temperatures", "parsed", 12)
    path = tmp_path / "nested" / "metrics.prom"
    write_metrics(path)
    text = path.read_text()
    assert any(line.startswith("ingest_rows_total{") and 'source="temperatures"' in line and 'result="parsed"' in line
               for line in text.splitlines())
    assert "# TYPE stage_duration_seconds histogram" in text
