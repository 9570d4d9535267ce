"""Behavioral-consistency metrics over a model's result tensor.

Tensor axes are language (a), personality combination (b), information
condition (c), round (d) and repetition (r), with a trailing agent axis for
the raw per-round payoffs. All variances are population variances.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, NamedTuple, Optional, Union

import numpy as np

from errors import HarnessError, InsufficientDataError, NotApplicableError
from game_logic import normalize_outcome
from schemas import (
    ExperimentConfig,
    GameKind,
    GameSpec,
    MetricsReport,
    RunRecord,
    RunStatus,
)

logger = logging.getLogger(__name__)

Selector = Literal["mean", "agent1", "agent2"]
METRICS = ("IV", "CI", "VR")
INTERVAL = (2.5, 97.5)

AXIS_LANGUAGE, AXIS_SCENARIO, AXIS_CONDITION, AXIS_ROUND, AXIS_REPETITION = range(5)


def _quiet(func, *args, **kwargs):
    # nan-aware reductions warn on all-NaN slices; those slices stay NaN
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return func(*args, **kwargs)


def default_selector(game: GameSpec) -> Selector:
    return "agent1" if game.kind == GameKind.ZERO_SUM else "mean"


@dataclass
class ResultTensor:
    """Raw per-round payoffs of one model on one game; NaN marks a missing cell."""

    model_id: str
    game: GameSpec
    languages: List[str]
    scenarios: List[str]
    conditions: List[str]
    payoffs: np.ndarray  # shape (A, B, C, D, R, 2)
    normalization: Literal["per_agent", "joint"] = "per_agent"
    excluded_runs: int = 0
    status_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return self.payoffs.shape[AXIS_ROUND]

    @property
    def missing_cells(self) -> int:
        return int(np.isnan(self.payoffs[..., 0]).sum())

    def outcomes(self, selector: Optional[Selector] = None) -> np.ndarray:
        """Normalized per-round outcomes in [-1, 1], shape (A, B, C, D, R)."""
        selector = selector or default_selector(self.game)

        def normalized(values: np.ndarray, mode: str, agent: int) -> np.ndarray:
            scale = np.vectorize(
                lambda v: normalize_outcome(v, self.game, mode, agent), otypes=[float]
            )
            return scale(values) if values.size else values.astype(float)

        if selector == "agent1":
            return normalized(self.payoffs[..., 0], "per_agent", 1)
        if selector == "agent2":
            return normalized(self.payoffs[..., 1], "per_agent", 2)
        if self.normalization == "joint":
            return normalized(self.payoffs.mean(axis=-1), "joint", 1)
        return (
            normalized(self.payoffs[..., 0], "per_agent", 1)
            + normalized(self.payoffs[..., 1], "per_agent", 2)
        ) / 2


def pair_label(personalities) -> str:
    return "|".join(personalities)


def build_tensor(
    cfg: ExperimentConfig, records: List[RunRecord], model_id: str, game_id: str
) -> ResultTensor:
    """Arrange complete runs of one (model, game) into a dense tensor.

    Runs that did not complete are left out and counted; their cells stay NaN.
    """
    game = cfg.game(game_id)
    selected = [
        r
        for r in records
        if r.instance.model_id == model_id and r.instance.game_id == game_id
    ]
    present = {r.instance.language for r in selected}
    languages = [lang for lang in cfg.languages if lang in present]
    scenarios = list(
        dict.fromkeys(pair_label(r.instance.personalities) for r in selected)
    )
    conditions = list(dict.fromkeys(r.instance.info_condition for r in selected))

    shape = (
        len(languages),
        len(scenarios),
        len(conditions),
        game.n_rounds,
        cfg.repetitions,
        2,
    )
    payoffs = np.full(shape, np.nan)
    counts = {status.value: 0 for status in RunStatus}
    excluded = 0
    for record in selected:
        counts[record.status.value] += 1
        if record.status != RunStatus.COMPLETE:
            excluded += 1
            continue
        inst = record.instance
        a = languages.index(inst.language)
        b = scenarios.index(pair_label(inst.personalities))
        c = conditions.index(inst.info_condition)
        for d, round_record in enumerate(record.transcript.rounds):
            payoffs[a, b, c, d, inst.repetition] = (
                round_record.payoff_p1,
                round_record.payoff_p2,
            )

    return ResultTensor(
        model_id=model_id,
        game=game,
        languages=languages,
        scenarios=scenarios,
        conditions=conditions,
        payoffs=payoffs,
        normalization=cfg.normalization,
        excluded_runs=excluded,
        status_counts=counts,
    )


def _finite(value: float, what: str) -> float:
    if np.isnan(value):
        raise InsufficientDataError(f"insufficient data: no observed values for {what}")
    return float(value)


def internal_variability_raw(values: np.ndarray) -> float:
    """Population variance over the whole result set, every repetition included."""
    observed = values[~np.isnan(values)]
    if observed.size < 2:
        raise InsufficientDataError(
            f"insufficient data: {observed.size} values, need at least 2"
        )
    return float(np.var(observed))


def internal_variability_per_scenario_raw(values: np.ndarray) -> float:
    """Mean over (a, b, c, d) cells of the variance across repetitions."""
    if values.shape[AXIS_REPETITION] < 2:
        raise InsufficientDataError("insufficient data: need at least 2 repetitions")
    per_cell = _quiet(np.nanvar, values, axis=AXIS_REPETITION)
    return _finite(_quiet(np.nanmean, per_cell), "per-scenario variability")


def cross_language_inconsistency_raw(values: np.ndarray) -> float:
    """Mean over (b, c) of the variance across languages of round-mean outcomes."""
    if values.shape[AXIS_LANGUAGE] < 2:
        raise InsufficientDataError(
            f"insufficient languages: {values.shape[AXIS_LANGUAGE]}, need at least 2"
        )
    by_round = _quiet(np.nanmean, values, axis=AXIS_REPETITION)
    by_language = _quiet(np.nanmean, by_round, axis=AXIS_ROUND)
    spread = _quiet(np.nanvar, by_language, axis=AXIS_LANGUAGE)
    return _finite(_quiet(np.nanmean, spread), "cross-language inconsistency")


def variability_over_rounds_raw(values: np.ndarray) -> float:
    """Mean over (a, b, c) variants of the variance across rounds."""
    if values.shape[AXIS_ROUND] < 2:
        raise NotApplicableError("not applicable: one-shot game has a single round")
    by_round = _quiet(np.nanmean, values, axis=AXIS_REPETITION)
    spread = _quiet(np.nanvar, by_round, axis=AXIS_ROUND)
    return _finite(_quiet(np.nanmean, spread), "variability over rounds")


def normalize_across_models(raw: Dict[str, float]) -> Dict[str, float]:
    """Divide by the largest score; an all-zero map stays zero."""
    if not raw:
        return {}
    top = max(raw.values())
    if top == 0:
        return {model: 0.0 for model in raw}
    return {model: value / top for model, value in raw.items()}


class RoundPoint(NamedTuple):
    round: int
    mean: float
    low: float
    high: float


def per_round_series(
    t: ResultTensor, aggregation: Optional[Selector] = None
) -> List[RoundPoint]:
    """Per-round mean over variants and repetitions with a percentile band."""
    if t.n_rounds < 2:
        raise NotApplicableError("not applicable: one-shot game has no round series")
    values = np.moveaxis(t.outcomes(aggregation), AXIS_ROUND, 0)
    series = []
    for d, round_values in enumerate(values, start=1):
        observed = round_values[~np.isnan(round_values)]
        if observed.size == 0:
            series.append(RoundPoint(d, float("nan"), float("nan"), float("nan")))
            continue
        low, high = np.percentile(observed, INTERVAL)
        series.append(RoundPoint(d, float(observed.mean()), float(low), float(high)))
    return series


METRIC_FUNCTIONS = {
    "IV": internal_variability_raw,
    "CI": cross_language_inconsistency_raw,
    "VR": variability_over_rounds_raw,
}


def analyze_records(
    cfg: ExperimentConfig,
    records: List[RunRecord],
    selector: Optional[Selector] = None,
    iv_per_scenario: bool = False,
) -> List[MetricsReport]:
    """One MetricsReport per game, comparing every model that played it."""
    if not records:
        raise InsufficientDataError("insufficient data: no run records")
    model_ids = list(dict.fromkeys(r.instance.model_id for r in records))
    reports = []
    for game in cfg.games:
        if not any(r.instance.game_id == game.id for r in records):
            continue
        game_selector = selector or cfg.outcome_selector or default_selector(game)
        functions = dict(METRIC_FUNCTIONS)
        if iv_per_scenario:
            functions["IV"] = internal_variability_per_scenario_raw

        raw: Dict[str, Dict[str, Optional[float]]] = {}
        errors: Dict[str, Dict[str, str]] = {}
        excluded: Dict[str, int] = {}
        quality: Dict[str, Dict[str, int]] = {}
        for model_id in model_ids:
            tensor = build_tensor(cfg, records, model_id, game.id)
            excluded[model_id] = tensor.missing_cells
            quality[model_id] = {
                **tensor.status_counts,
                "excluded_runs": tensor.excluded_runs,
            }
            raw[model_id] = {}
            try:
                values = tensor.outcomes(game_selector)
            except HarnessError as e:
                raw[model_id] = {metric: None for metric in functions}
                errors[model_id] = {metric: str(e) for metric in functions}
                continue
            for metric, function in functions.items():
                try:
                    raw[model_id][metric] = function(values)
                except HarnessError as e:
                    raw[model_id][metric] = None
                    errors.setdefault(model_id, {})[metric] = str(e)

        normalized: Dict[str, Dict[str, Optional[float]]] = {m: {} for m in model_ids}
        z_factors: Dict[str, float] = {}
        for metric in METRICS:
            scored = {
                m: raw[m][metric] for m in model_ids if raw[m][metric] is not None
            }
            z_factors[metric] = max(scored.values()) if scored else 0.0
            scaled = normalize_across_models(scored)
            for model_id in model_ids:
                normalized[model_id][metric] = scaled.get(model_id)

        reports.append(
            MetricsReport(
                game_id=game.id,
                iv_variant="per_scenario" if iv_per_scenario else "whole_set",
                selector=game_selector,
                raw=raw,
                normalized=normalized,
                z_factors=z_factors,
                errors=errors,
                excluded_cells=excluded,
                data_quality=quality,
            )
        )
        logger.info(f"Computed metrics for {game.id} over {len(model_ids)} models")
    return reports


def write_metrics(reports: List[MetricsReport], path: Union[str, Path]) -> None:
    payload = {
        "variance": "population",
        "games": [report.model_dump(mode="json") for report in reports],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
