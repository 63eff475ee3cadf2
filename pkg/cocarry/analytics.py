"""
Batch analytics over pipeline run reports

Per-scenario ergonomic score drop, capacity change and tracking statistics,
plus per-subject aggregates of the score drop.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

from .models import RunReport
from .utils import calculate_series_stats, export_to_csv, export_to_json

logger = logging.getLogger(__name__)

try:
    from scipy import stats
    SCIPY_AVAILABLE = True
except ImportError:
    SCIPY_AVAILABLE = False
    logger.warning("SciPy not available - significance tests disabled")

SUMMARY_COLUMNS = [
    "scenario",
    "subject",
    "status",
    "score_before",
    "score_after",
    "score_drop",
    "score_drop_pct",
    "capacity_before",
    "capacity_after",
    "capacity_change_pct",
    "terminal_error",
    "rms_tracking_error",
    "max_relative_error",
    "fallback_steps",
    "diverged",
    "error",
]


def _percent(before: float, after: float) -> float:
    return float("nan") if before == 0 else 100.0 * (before - after) / before


class CoCarryAnalytics:
    """
    Analytics engine for batches of co-carrying runs

    Works on the result entries of ``pipeline.run_batch``: each has a
    ``status`` and either a serialized ``report`` or an ``error``.
    """

    def scenario_row(self, report: Union[RunReport, Dict[str, Any]]) -> Dict[str, Any]:
        """Flat summary of one run"""
        if not isinstance(report, RunReport):
            report = RunReport.model_validate(report)
        posture, sim = report.posture, report.simulation
        before, after = posture.scores_before.overall, posture.scores_after.overall
        cap_before = min(posture.capacity_before.left, posture.capacity_before.right)
        cap_after = min(posture.capacity_after.left, posture.capacity_after.right)
        return {
            "scenario": report.scenario,
            "subject": report.subject,
            "status": "ok",
            "score_before": before,
            "score_after": after,
            "score_drop": before - after,
            "score_drop_pct": _percent(before, after),
            "capacity_before": cap_before,
            "capacity_after": cap_after,
            # weaker arm; positive means the optimized posture is stronger
            "capacity_change_pct": -_percent(cap_before, cap_after),
            "terminal_error": sim.terminal_error if sim.terminal_error is not None else float("nan"),
            "rms_tracking_error": sim.rms_tracking_error,
            "max_relative_error": sim.max_relative_error,
            "fallback_steps": sim.fallback_steps,
            "diverged": sim.diverged,
            "error": "",
        }

    def subject_summary(self, rows: pd.DataFrame) -> List[Dict[str, Any]]:
        """
        Mean and standard deviation of the score drop per subject

        With SciPy available and at least two runs, a one-sided one-sample
        t-test of "score drop > 0" is added.
        """
        summary = []
        ok = rows[rows["status"] == "ok"]
        for subject, group in ok.groupby("subject", sort=True):
            drops = group["score_drop"].to_numpy(dtype=float)
            entry: Dict[str, Any] = {
                "subject": subject,
                "runs": int(len(drops)),
                "score_drop_mean": float(np.mean(drops)),
                "score_drop_std": float(np.std(drops, ddof=1)) if len(drops) > 1 else 0.0,
                "score_drop_pct_mean": float(group["score_drop_pct"].mean()),
            }
            if SCIPY_AVAILABLE and len(drops) > 1 and np.ptp(drops) > 0:
                try:
                    result = stats.ttest_1samp(drops, 0.0, alternative="greater")
                    entry["p_value"] = float(result.pvalue)
                except Exception as e:
                    logger.error(f"❌ Significance test failed for subject '{subject}': {e}")
            summary.append(entry)
        return summary

    def summarize_batch(self, results: List[Dict[str, Any]]) -> Dict[str, Any]:
        """
        Aggregate batch results

        Returns:
            Dictionary with ``scenarios`` (one row per run), ``subjects``
            and ``overall`` statistics
        """
        rows = []
        for result in results:
            if result["status"] == "ok":
                try:
                    rows.append(self.scenario_row(result["report"]))
                    continue
                except Exception as e:
                    logger.error(f"❌ Unreadable report for {result.get('path')}: {e}")
                    error = str(e)
            else:
                error = result["error"]["error_message"]
            rows.append({"scenario": Path(result["path"]).stem, "subject": "", "status": "error", "error": error})

        frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
        ok = frame[frame["status"] == "ok"]
        overall = {
            "runs": int(len(frame)),
            "succeeded": int(len(ok)),
            "failed": int(len(frame) - len(ok)),
            "score_drop": calculate_series_stats(ok["score_drop"].tolist()),
            "score_drop_pct": calculate_series_stats(ok["score_drop_pct"].tolist()),
            "capacity_change_pct": calculate_series_stats(ok["capacity_change_pct"].tolist()),
            "terminal_error": calculate_series_stats(ok["terminal_error"].tolist()),
            "improved": int((ok["score_drop"] > 0).sum()),
        }
        logger.info(f"✅ Batch summary: {overall['succeeded']}/{overall['runs']} runs, {overall['improved']} improved")
        return {
            "scenarios": frame.to_dict(orient="records"),
            "subjects": self.subject_summary(frame),
            "overall": overall,
        }

    def write_summary(self, summary: Dict[str, Any], output_dir: Union[str, Path]) -> List[Path]:
        """Write batch_summary.csv and batch_summary.json"""
        output_dir = Path(output_dir)
        csv_path = export_to_csv(pd.DataFrame(summary["scenarios"], columns=SUMMARY_COLUMNS), output_dir / "batch_summary.csv")
        json_path = output_dir / "batch_summary.json"
        export_to_json(summary, json_path)
        return [csv_path, json_path]
