"""Exact equilibrium analysis of 2x2 games.

All comparisons are made on utilities, i.e. payoffs with the sign flipped for
games whose objective is to minimize, so one code path serves both senses.
"""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from config import config
from errors import DegenerateGameError, DominanceError, NotZeroSumError
from game_logic import require_valid_game, validate_game
from schemas import (
    EquilibriumReport,
    GameSpec,
    MixedProfile,
    Objective,
    StrategyId,
)

logger = logging.getLogger(__name__)

Profile = Tuple[StrategyId, StrategyId]


def sense_sign(spec: GameSpec) -> float:
    return 1.0 if spec.objective == Objective.MAXIMIZE else -1.0


def utilities(spec: GameSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-player 2x2 utility arrays indexed [row, column]."""
    cells = np.array(spec.matrix.cells, dtype=float)
    sign = sense_sign(spec)
    return sign * cells[:, :, 0], sign * cells[:, :, 1]


def pure_nash(spec: GameSpec, tol: Optional[float] = None) -> List[Profile]:
    """Profiles with no profitable unilateral deviation, in row-major order."""
    tol = config.TOLERANCE if tol is None else tol
    u1, u2 = utilities(spec)
    equilibria = []
    for i in (0, 1):
        for j in (0, 1):
            if u1[i, j] >= u1[1 - i, j] - tol and u2[i, j] >= u2[i, 1 - j] - tol:
                equilibria.append((spec.strategy(i), spec.strategy(j)))
    return equilibria


def _dominant_indices(
    u1: np.ndarray, u2: np.ndarray, tol: float
) -> Tuple[Optional[int], Optional[int]]:
    row = next(
        (i for i in (0, 1) if all(u1[i, j] > u1[1 - i, j] + tol for j in (0, 1))),
        None,
    )
    col = next(
        (j for j in (0, 1) if all(u2[i, j] > u2[i, 1 - j] + tol for i in (0, 1))),
        None,
    )
    return row, col


def dominant_strategies(
    spec: GameSpec, tol: Optional[float] = None
) -> Tuple[Optional[StrategyId], Optional[StrategyId]]:
    """Strictly dominant strategy of each player, if any."""
    tol = config.TOLERANCE if tol is None else tol
    row, col = _dominant_indices(*utilities(spec), tol)
    return (
        spec.strategy(row) if row is not None else None,
        spec.strategy(col) if col is not None else None,
    )


def mixed_nash_2x2(spec: GameSpec, tol: Optional[float] = None) -> MixedProfile:
    """Fully mixed equilibrium from the indifference conditions.

    Player 1 mixes so that player 2 is indifferent between columns and vice
    versa. Raises DominanceError when either player has a strictly dominant
    strategy and DegenerateGameError when an indifference equation has no
    unique solution.
    """
    tol = config.TOLERANCE if tol is None else tol
    u1, u2 = utilities(spec)
    if any(index is not None for index in _dominant_indices(u1, u2, tol)):
        raise DominanceError()

    denominator_p = u2[0, 0] - u2[0, 1] - u2[1, 0] + u2[1, 1]
    denominator_q = u1[0, 0] - u1[1, 0] - u1[0, 1] + u1[1, 1]
    if abs(denominator_p) <= tol or abs(denominator_q) <= tol:
        raise DegenerateGameError()

    p = (u2[1, 1] - u2[1, 0]) / denominator_p
    q = (u1[1, 1] - u1[0, 1]) / denominator_q
    return MixedProfile(
        p1_prob_strategy0=float(np.clip(p, 0.0, 1.0)),
        p2_prob_strategy0=float(np.clip(q, 0.0, 1.0)),
    )


def expected_payoffs(
    spec: GameSpec, profile: MixedProfile
) -> Tuple[float, float]:
    """Expected (player 1, player 2) payoffs, in payoff units, of a mixed profile."""
    cells = np.array(spec.matrix.cells, dtype=float)
    x = np.array([profile.p1_prob_strategy0, 1 - profile.p1_prob_strategy0])
    y = np.array([profile.p2_prob_strategy0, 1 - profile.p2_prob_strategy0])
    return float(x @ cells[:, :, 0] @ y), float(x @ cells[:, :, 1] @ y)


def zero_sum_value(spec: GameSpec, tol: Optional[float] = None) -> float:
    """Value of a zero-sum game to player 1, in payoff units.

    Uses the pure saddle point when maximin equals minimax, otherwise the value
    at the mixed equilibrium.
    """
    tol = config.TOLERANCE if tol is None else tol
    if not validate_game(spec).zero_sum:
        raise NotZeroSumError(spec.id)
    u1, _ = utilities(spec)
    maximin = max(u1[i, :].min() for i in (0, 1))
    minimax = min(u1[:, j].max() for j in (0, 1))
    if abs(maximin - minimax) <= tol:
        value = sense_sign(spec) * maximin
    else:
        value, _ = expected_payoffs(spec, mixed_nash_2x2(spec, tol))
    # +0.0 folds a negative zero into 0.0
    return float(value) + 0.0


def is_prisoners_dilemma(
    spec: GameSpec, cooperate: Union[StrategyId, int, None] = None
) -> bool:
    """Whether T > R > P > S and 2R > T + S hold for both players.

    Orderings are checked on utilities, so a matrix that is a dilemma when
    read as rewards is not one when read as penalties.
    """
    if cooperate is None:
        c = spec.cooperate_index
    elif isinstance(cooperate, StrategyId):
        c = cooperate.index
    else:
        c = cooperate
    d = 1 - c
    u1, u2 = utilities(spec)
    for reward, temptation, sucker, punishment in (
        (u1[c, c], u1[d, c], u1[c, d], u1[d, d]),
        (u2[c, c], u2[c, d], u2[d, c], u2[d, d]),
    ):
        if not temptation > reward > punishment > sucker:
            return False
        if not 2 * reward > temptation + sucker:
            return False
    return True


def equilibrium_report(spec: GameSpec) -> EquilibriumReport:
    """Collect the full analysis of a validated game."""
    require_valid_game(spec)
    dominant_p1, dominant_p2 = dominant_strategies(spec)

    mixed = None
    mixed_note = None
    mixed_payoffs = None
    try:
        mixed = mixed_nash_2x2(spec)
        mixed_payoffs = expected_payoffs(spec, mixed)
    except (DominanceError, DegenerateGameError) as e:
        mixed_note = str(e)

    value = None
    if validate_game(spec).zero_sum:
        value = zero_sum_value(spec)

    report = EquilibriumReport(
        game_id=spec.id,
        objective=spec.objective,
        pure_equilibria=pure_nash(spec),
        mixed_equilibrium=mixed,
        mixed_note=mixed_note,
        mixed_payoffs=mixed_payoffs,
        dominant_p1=dominant_p1,
        dominant_p2=dominant_p2,
        zero_sum_value=value,
        pd_ordering_ok=is_prisoners_dilemma(spec),
    )
    logger.info(
        f"Solved {spec.id}: {len(report.pure_equilibria)} pure equilibria, "
        f"mixed={mixed is not None}, zero_sum_value={value}"
    )
    return report
