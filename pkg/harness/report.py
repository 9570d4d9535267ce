"""Plot-ready CSV tables for box plots, per-round series and radar charts.

Column sets are fixed; any plotting tool can draw the figures from them.
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd

from errors import HarnessError, InsufficientDataError
from game_logic import total_payoffs
from metrics import METRICS, analyze_records, build_tensor, pair_label, per_round_series
from orchestrator import load_results
from schemas import ExperimentConfig, MetricsReport, RunRecord

logger = logging.getLogger(__name__)

BOXPLOT_COLUMNS = [
    "model_id",
    "game_id",
    "language",
    "personality_pair",
    "info_condition",
    "repetition",
    "status",
    "total_agent1",
    "total_agent2",
]
ROUNDS_COLUMNS = ["model_id", "game_id", "round", "mean", "ci_low", "ci_high"]
RADAR_COLUMNS = ["model_id", "game_id", "metric", "raw", "normalized"]


def boxplot_frame(records: List[RunRecord]) -> pd.DataFrame:
    """One row per run; totals are blank for runs that did not complete."""
    rows = []
    for record in sorted(records, key=lambda r: r.instance.position):
        inst = record.instance
        complete = record.status.value == "complete"
        totals = total_payoffs(record.transcript) if complete else (None, None)
        rows.append(
            {
                "model_id": inst.model_id,
                "game_id": inst.game_id,
                "language": inst.language,
                "personality_pair": pair_label(inst.personalities),
                "info_condition": inst.info_condition,
                "repetition": inst.repetition,
                "status": record.status.value,
                "total_agent1": totals[0],
                "total_agent2": totals[1],
            }
        )
    return pd.DataFrame(rows, columns=BOXPLOT_COLUMNS)


def rounds_frame(cfg: ExperimentConfig, records: List[RunRecord]) -> pd.DataFrame:
    """Per-round mean outcome with its percentile band, repeated games only."""
    rows = []
    model_ids = list(dict.fromkeys(r.instance.model_id for r in records))
    for game in cfg.games:
        if not game.is_repeated:
            continue
        for model_id in model_ids:
            tensor = build_tensor(cfg, records, model_id, game.id)
            if not tensor.languages:
                continue
            try:
                series = per_round_series(tensor, cfg.outcome_selector)
            except HarnessError as e:
                logger.warning(f"No round series for {model_id} on {game.id}: {e}")
                continue
            for point in series:
                rows.append(
                    {
                        "model_id": model_id,
                        "game_id": game.id,
                        "round": point.round,
                        "mean": point.mean,
                        "ci_low": point.low,
                        "ci_high": point.high,
                    }
                )
    return pd.DataFrame(rows, columns=ROUNDS_COLUMNS)


def radar_frame(reports: List[MetricsReport]) -> pd.DataFrame:
    """Raw and cross-model normalized score of every metric; blank when undefined."""
    rows = [
        {
            "model_id": model_id,
            "game_id": report.game_id,
            "metric": metric,
            "raw": report.raw[model_id].get(metric),
            "normalized": report.normalized[model_id].get(metric),
        }
        for report in reports
        for model_id in report.raw
        for metric in METRICS
    ]
    return pd.DataFrame(rows, columns=RADAR_COLUMNS)


def write_report(
    results_dir: Union[str, Path], out_dir: Optional[Union[str, Path]] = None
) -> List[Path]:
    """Write boxplot.csv, rounds.csv and radar.csv; returns the written paths."""
    cfg, records = load_results(results_dir)
    if not records:
        raise InsufficientDataError(f"insufficient data: {results_dir} has no runs")
    out_dir = Path(out_dir) if out_dir else Path(results_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    frames = {
        "boxplot.csv": boxplot_frame(records),
        "rounds.csv": rounds_frame(cfg, records),
        "radar.csv": radar_frame(analyze_records(cfg, records)),
    }
    paths = []
    for name, frame in frames.items():
        path = out_dir / name
        frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
        logger.info(f"Wrote {len(frame)} rows to {path}")
        paths.append(path)
    return paths
