"""
Batch summaries over run reports
"""

import json

import pandas as pd
import pytest

from cocarry.analytics import SUMMARY_COLUMNS, CoCarryAnalytics
from cocarry.models import RunReport


def _scores(overall):
    return {
        "left": overall, "right": overall - 1.0, "overall": overall, "worst_side": "left",
        "left_shoulder": overall - 1.0, "left_elbow": 1.0, "right_shoulder": overall - 2.0, "right_elbow": 1.0,
    }


def _capacity(left, right):
    return {"direction": [0.0, 0.0, 1.0], "left": left, "right": right}


def _cost(total):
    return {"total": total, "ergonomic": total, "manipulability": 0.0, "deviation": 0.0}


def _pose(position):
    return {"position": position, "orientation": [1.0, 0.0, 0.0, 0.0]}


def _report(scenario, subject, before, after, capacity_before=(10.0, 12.0), capacity_after=(12.0, 13.0), terminal=1e-4):
    """Smallest complete run report with the fields the summary reads"""
    q = [0.0, 1.0, 0.0, -0.5] * 2
    wrists = [[0.2, 0.4, -0.1], [-0.2, 0.4, -0.1]]
    return {
        "scenario": scenario,
        "subject": subject,
        "seed": 0,
        "config_hash": "0" * 64,
        "version": "test",
        "ik": {
            "frames_total": 5, "frames_solved": 5, "frames_flagged": 0, "max_residual": 1e-9,
            "mean_residual": 1e-10, "selected_time": 0.16, "q_init": q, "calibrated": False,
            "geometry": {"upper_arm": 0.3, "forearm": 0.25, "shoulder_left": [0.18, 0, 0], "shoulder_right": [-0.18, 0, 0]},
        },
        "posture": {
            "q_init": q, "q_opt": q, "m_0": 1.0,
            "cost_before": _cost(before), "cost_after": _cost(after),
            "scores_before": _scores(before), "scores_after": _scores(after),
            "capacity_before": _capacity(*capacity_before), "capacity_after": _capacity(*capacity_after),
            "wrists_before": wrists, "wrists_after": wrists,
            "constraint_residual": 0.0, "no_improvement": before == after, "start_index": 0, "start_costs": [after],
        },
        "poses": {
            "object_before": _pose([0.8, 0, 1.3]), "object_after": _pose([0.8, 0, 1.3]),
            "ee_left_before": _pose([0.4, 0.2, 1.3]), "ee_left_after": _pose([0.4, 0.2, 1.3]),
            "ee_right_before": _pose([0.4, -0.2, 1.3]), "ee_right_after": _pose([0.4, -0.2, 1.3]),
            "wrists_before": wrists, "wrists_after": wrists,
            "rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "angle": 0.0, "antiparallel": False,
        },
        "trajectory": {
            "duration": 2.0, "samples": 201, "rate": 100.0,
            "start_left": _pose([0.4, 0.2, 1.3]), "end_left": _pose([0.4, 0.2, 1.3]),
            "start_right": _pose([0.4, -0.2, 1.3]), "end_right": _pose([0.4, -0.2, 1.3]),
            "peak_speed_left": 0.0, "peak_speed_right": 0.0,
            "path_length_left": 0.0, "path_length_right": 0.0, "rotation_angle": 0.0,
        },
        "simulation": {
            "steps": 300, "disturbance_events": 0, "terminal_error": terminal,
            "max_tracking_error": 1e-3, "rms_tracking_error": 5e-4, "max_relative_error": 1e-4,
            "rms_relative_error": 5e-5, "fallback_steps": 0, "saturated_steps": 0,
            "max_state_violation": 0.0, "peak_force": 30.0, "diverged": False,
        },
    }


def _ok(report):
    return {"path": f"batch/{report['scenario']}.yaml", "status": "ok", "report": report}


@pytest.fixture
def analytics():
    return CoCarryAnalytics()


def test_scenario_row(analytics):
    row = analytics.scenario_row(_report("table", "s01", before=4.0, after=3.0))
    assert row["status"] == "ok"
    assert row["score_drop"] == pytest.approx(1.0)
    assert row["score_drop_pct"] == pytest.approx(25.0)
    # weaker arm: 10 -> 12
    assert row["capacity_before"] == 10.0
    assert row["capacity_after"] == 12.0
    assert row["capacity_change_pct"] == pytest.approx(20.0)
    assert set(row) == set(SUMMARY_COLUMNS)

    model = RunReport.model_validate(_report("table", "s01", before=4.0, after=3.0))
    assert analytics.scenario_row(model) == row
    assert model.score_drop == pytest.approx(1.0)


def test_diverged_run_has_no_terminal_error(analytics):
    row = analytics.scenario_row(_report("table", "s01", 4.0, 3.0, terminal=float("nan")))
    assert row["terminal_error"] != row["terminal_error"]


def test_subject_summary(analytics):
    rows = pd.DataFrame(
        [
            analytics.scenario_row(_report("a", "s01", 4.0, 3.0)),
            analytics.scenario_row(_report("b", "s01", 5.0, 3.0)),
            analytics.scenario_row(_report("c", "s02", 3.0, 3.0)),
        ]
    )
    summary = {entry["subject"]: entry for entry in analytics.subject_summary(rows)}
    assert list(summary) == ["s01", "s02"]
    assert summary["s01"]["runs"] == 2
    assert summary["s01"]["score_drop_mean"] == pytest.approx(1.5)
    assert 0.0 < summary["s01"]["p_value"] < 0.5
    assert summary["s02"]["score_drop_std"] == 0.0
    assert "p_value" not in summary["s02"]


def test_summarize_batch_counts_failures(analytics):
    results = [
        _ok(_report("table", "s01", 4.0, 3.0)),
        _ok(_report("box", "s02", 5.0, 5.0)),
        {"path": "batch/broken.yaml", "status": "error", "error": {"error_message": "stage ik failed"}},
    ]
    summary = analytics.summarize_batch(results)
    overall = summary["overall"]
    assert (overall["runs"], overall["succeeded"], overall["failed"]) == (3, 2, 1)
    assert overall["improved"] == 1
    assert overall["score_drop"]["mean"] == pytest.approx(0.5)

    broken = summary["scenarios"][2]
    assert broken["scenario"] == "broken"
    assert broken["status"] == "error"
    assert broken["error"] == "stage ik failed"


def test_unreadable_report_becomes_error_row(analytics):
    summary = analytics.summarize_batch([{"path": "batch/odd.yaml", "status": "ok", "report": {"scenario": "odd"}}])
    assert summary["overall"]["failed"] == 1
    assert summary["overall"]["score_drop"] == {}


def test_write_summary(analytics, tmp_path):
    summary = analytics.summarize_batch([_ok(_report("table", "s01", 4.0, 3.0))])
    paths = analytics.write_summary(summary, tmp_path / "out")
    assert [p.name for p in paths] == ["batch_summary.csv", "batch_summary.json"]

    table = pd.read_csv(paths[0])
    assert list(table.columns) == SUMMARY_COLUMNS
    assert table.loc[0, "score_drop"] == pytest.approx(1.0)
    assert json.loads(paths[1].read_text())["overall"]["runs"] == 1
