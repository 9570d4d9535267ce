"""Game rules for 2x2 bimatrix games: validation, payoffs, transcripts, scaling."""

import logging
import math
from typing import List, Literal, Tuple

from errors import DegenerateRangeError, GameValidationError, TranscriptFullError
from schemas import (
    GameSpec,
    PayoffMatrix,
    RoundRecord,
    StrategyId,
    Transcript,
    ValidationReport,
)

logger = logging.getLogger(__name__)

ROW_NAMES = "AB"


def normalize_label(label: str) -> str:
    """Collapse whitespace and case-fold a strategy label."""
    return " ".join(label.split()).casefold()


def validate_game(spec: GameSpec) -> ValidationReport:
    """Check a game definition and compute its zero-sum flag.

    Every violation is collected; callers that need a hard failure use
    require_valid_game instead.
    """
    violations: List[str] = []

    strategy_count_ok = len(spec.strategies) == 2
    if not strategy_count_ok:
        violations.append(f"expected 2 strategies, got {len(spec.strategies)}")

    labels = [normalize_label(s.label) for s in spec.strategies]
    labels_distinct = len(set(labels)) == len(labels)
    if not labels_distinct:
        violations.append("strategy labels are not distinct")
    if sorted(s.index for s in spec.strategies) != list(range(len(spec.strategies))):
        violations.append("strategy indices must be 0 and 1 in order")

    cells_complete = True
    finite = True
    zero_sum = True
    rows = spec.matrix.cells
    if len(rows) > 2:
        violations.append(f"matrix has {len(rows)} rows")
    for i in range(2):
        row = rows[i] if i < len(rows) else []
        if len(row) > 2:
            violations.append(f"matrix row {ROW_NAMES[i]} has {len(row)} cells")
        for j in range(2):
            cell = row[j] if j < len(row) else None
            if cell is None:
                cells_complete = False
                zero_sum = False
                violations.append(f"missing cell ({ROW_NAMES[i]},{ROW_NAMES[j]})")
                continue
            if not all(math.isfinite(v) for v in cell):
                finite = False
                zero_sum = False
                violations.append(
                    f"non-finite payoff in cell ({ROW_NAMES[i]},{ROW_NAMES[j]})"
                )
                continue
            if cell[0] + cell[1] != 0:
                zero_sum = False

    return ValidationReport(
        game_id=spec.id,
        strategy_count_ok=strategy_count_ok,
        labels_distinct=labels_distinct,
        cells_complete=cells_complete,
        finite=finite,
        zero_sum=zero_sum,
        objective=spec.objective,
        violations=violations,
    )


def require_valid_game(spec: GameSpec) -> None:
    report = validate_game(spec)
    if not report.valid:
        raise GameValidationError(report.violations)


def payoff_for(
    matrix: PayoffMatrix, choice_p1: StrategyId, choice_p2: StrategyId
) -> Tuple[float, float]:
    """Look up the payoff pair for a strategy profile."""
    cell = matrix.cells[choice_p1.index][choice_p2.index]
    return cell[0], cell[1]


def apply_round(
    t: Transcript, choice_p1: StrategyId, choice_p2: StrategyId
) -> Transcript:
    """Return a new transcript with one more round; the input is left as is."""
    if len(t.rounds) >= t.game.n_rounds:
        raise TranscriptFullError(t.game.n_rounds)
    payoff_p1, payoff_p2 = payoff_for(t.game.matrix, choice_p1, choice_p2)
    record = RoundRecord(
        round_index=len(t.rounds) + 1,
        choice_p1=choice_p1,
        choice_p2=choice_p2,
        payoff_p1=payoff_p1,
        payoff_p2=payoff_p2,
    )
    return t.model_copy(update={"rounds": t.rounds + (record,)})


def total_payoffs(t: Transcript) -> Tuple[float, float]:
    return (
        sum(r.payoff_p1 for r in t.rounds),
        sum(r.payoff_p2 for r in t.rounds),
    )


def incoherent_rounds(t: Transcript) -> List[int]:
    """Indices of rounds whose stored payoffs disagree with the matrix.

    Also flags gaps in the 1..k round numbering.
    """
    bad = []
    for expected_index, record in enumerate(t.rounds, start=1):
        expected = payoff_for(t.game.matrix, record.choice_p1, record.choice_p2)
        if (
            record.round_index != expected_index
            or (record.payoff_p1, record.payoff_p2) != expected
        ):
            bad.append(record.round_index)
    return bad


NormalizationMode = Literal["per_agent", "joint"]


def attainable_range(
    spec: GameSpec, mode: NormalizationMode = "per_agent", agent: int = 1
) -> Tuple[float, float]:
    """Minimum and maximum per-round value over the matrix cells.

    per_agent uses the given agent's payoffs; joint uses the two-agent mean.
    """
    cells = [cell for row in spec.matrix.cells for cell in row]
    if mode == "joint":
        values = [(p1 + p2) / 2 for p1, p2 in cells]
    else:
        values = [cell[agent - 1] for cell in cells]
    return min(values), max(values)


def normalize_outcome(
    value: float,
    spec: GameSpec,
    mode: NormalizationMode = "per_agent",
    agent: int = 1,
) -> float:
    """Affinely map a per-round value onto [-1, 1] over the attainable range."""
    low, high = attainable_range(spec, mode, agent)
    if high == low:
        raise DegenerateRangeError(low)
    return 2 * (value - low) / (high - low) - 1
