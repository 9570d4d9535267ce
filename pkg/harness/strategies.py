"""Scripted policies used as baseline opponents and as pipeline oracles."""

import hashlib
import logging
from typing import Optional

import numpy as np

from equilibrium import mixed_nash_2x2, pure_nash
from errors import DegenerateGameError, DominanceError, SequenceExhaustedError
from schemas import PolicyKind, PolicyView, ScriptedPolicy, StrategyId

logger = logging.getLogger(__name__)


def policy_rng(
    policy_seed: int, run_seed: int, game_id: str, own_index: int, round_index: int
) -> np.random.Generator:
    """Counter-based generator keyed by the decision coordinates.

    Philox streams are addressed by key, so the draw for a given round does not
    depend on how many draws happened before it or in which thread.
    """
    material = f"{policy_seed}:{run_seed}:{game_id}:{own_index}:{round_index}"
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "big")
    return np.random.Generator(np.random.Philox(key=key))


def _draw(p_first: float, rng: np.random.Generator) -> int:
    return 0 if rng.random() < p_first else 1


def _nash_probability(view: PolicyView) -> Optional[float]:
    """Probability of strategy 0 for the deciding player, None under dominance."""
    try:
        profile = mixed_nash_2x2(view.game)
    except DominanceError:
        return None
    except DegenerateGameError:
        logger.debug(f"Degenerate game {view.game.id}, nash_mixed plays uniformly")
        return 0.5
    if view.own_index == 1:
        return profile.p1_prob_strategy0
    return profile.p2_prob_strategy0


def decide(
    policy: ScriptedPolicy, view: PolicyView, seed: Optional[int] = None
) -> StrategyId:
    """Choose a strategy for the agent described by view.

    Deterministic in (policy, seed, view). Reciprocal policies open with the
    game's cooperate-designated strategy.
    """
    game = view.game
    cooperate = game.cooperate_index
    defect = 1 - cooperate
    kind = policy.kind

    if kind == PolicyKind.ALWAYS_FIRST:
        choice = 0
    elif kind == PolicyKind.ALWAYS_SECOND:
        choice = 1
    elif kind == PolicyKind.TIT_FOR_TAT:
        choice = view.history[-1][1] if view.history else cooperate
    elif kind == PolicyKind.GRIM_TRIGGER:
        triggered = any(opponent == defect for _, opponent in view.history)
        choice = defect if triggered else cooperate
    elif kind == PolicyKind.FIXED_SEQUENCE:
        if view.round_index > len(policy.sequence):
            raise SequenceExhaustedError(len(policy.sequence))
        choice = policy.sequence[view.round_index - 1]
    else:
        rng = policy_rng(
            policy.seed, seed or 0, game.id, view.own_index, view.round_index
        )
        if kind == PolicyKind.RANDOM_MIXED:
            choice = _draw(policy.p, rng)
        else:
            p_first = _nash_probability(view)
            if p_first is None:
                # Some player has a dominant strategy, so a pure equilibrium exists
                choice = pure_nash(game)[0][view.own_index - 1].index
            else:
                choice = _draw(p_first, rng)

    return game.strategy(choice)
