import math

import pytest

from errors import DegenerateRangeError, GameValidationError, TranscriptFullError
from game_logic import (
    apply_round,
    attainable_range,
    incoherent_rounds,
    normalize_outcome,
    payoff_for,
    require_valid_game,
    total_payoffs,
    validate_game,
)
from schemas import GameKind, PayoffMatrix, RoundRecord, StrategyId, Transcript
from tests.factories import make_game


def play(game, *profiles):
    transcript = Transcript(game=game)
    for i, j in profiles:
        transcript = apply_round(transcript, game.strategy(i), game.strategy(j))
    return transcript


@pytest.mark.game_logic
class TestValidateGame:
    def test_zero_sum_matrix_is_valid_and_zero_sum(self, zero_sum_game):
        """Test that matching pennies validates as zero-sum."""
        report = validate_game(zero_sum_game)
        assert report.valid
        assert report.zero_sum

    def test_pd_matrix_is_valid_but_not_zero_sum(self, pd_reward_game):
        """Test that the dilemma validates without being zero-sum."""
        report = validate_game(pd_reward_game)
        assert report.valid
        assert not report.zero_sum
        assert report.objective == pd_reward_game.objective

    def test_every_violation_is_listed(self):
        """Missing cells, non-finite payoffs and duplicate labels all show up."""
        game = make_game(
            cells=[[(1, 1), None], [(math.inf, 0)]],
            labels=("Cooperate", " cooperate "),
        )
        report = validate_game(game)
        assert not report.labels_distinct
        assert not report.cells_complete
        assert not report.finite
        assert "missing cell (A,B)" in report.violations
        assert "missing cell (B,B)" in report.violations
        assert "non-finite payoff in cell (B,A)" in report.violations
        assert "strategy labels are not distinct" in report.violations

    def test_single_strategy_rejected(self):
        """Test that a game with one strategy is rejected."""
        game = make_game(cells=[[(0, 0), (0, 0)], [(0, 0), (0, 0)]], labels=("A",))
        report = validate_game(game)
        assert not report.strategy_count_ok
        assert any("expected 2 strategies" in v for v in report.violations)

    def test_require_valid_game_raises_with_violations(self):
        """Test that the raised error carries every violation."""
        game = make_game(cells=[[(1, 1), (1, 1)], [(1, 1)]])
        with pytest.raises(GameValidationError) as exc:
            require_valid_game(game)
        assert exc.value.violations == ["missing cell (B,B)"]


@pytest.mark.game_logic
class TestPayoffs:
    def test_cells_are_read_row_then_column(self, zero_sum_game, pd_reward_game):
        """Test that player 1 picks the row and player 2 the column."""
        zs, pd = zero_sum_game, pd_reward_game
        assert payoff_for(zs.matrix, zs.strategy(0), zs.strategy(0)) == (2, -2)
        assert payoff_for(zs.matrix, zs.strategy(1), zs.strategy(1)) == (2, -2)
        assert payoff_for(pd.matrix, pd.strategy(0), pd.strategy(1)) == (0, 10)

    def test_zero_sum_conservation(self, zero_sum_game):
        """Test that every zero-sum cell sums to zero."""
        for i in (0, 1):
            for j in (0, 1):
                p1, p2 = payoff_for(
                    zero_sum_game.matrix,
                    zero_sum_game.strategy(i),
                    zero_sum_game.strategy(j),
                )
                assert p1 + p2 == 0


@pytest.mark.game_logic
class TestTranscript:
    def test_apply_round_returns_new_transcript(self, pd_reward_game):
        """Test that applying a round leaves the old transcript untouched."""
        empty = Transcript(game=pd_reward_game)
        cooperate = pd_reward_game.strategy(0)
        after = apply_round(empty, cooperate, cooperate)
        assert empty.rounds == ()
        assert len(after.rounds) == 1
        assert (after.rounds[0].payoff_p1, after.rounds[0].payoff_p2) == (6, 6)
        assert after.rounds[0].round_index == 1

    def test_zero_sum_round(self, zero_sum_game):
        """Test that a one-round game completes after one round."""
        transcript = play(zero_sum_game, (0, 1))
        assert total_payoffs(transcript) == (-2, 2)
        assert transcript.is_complete

    def test_full_transcript_rejects_another_round(self, zero_sum_game):
        """Test that a full transcript refuses another round."""
        with pytest.raises(TranscriptFullError, match="transcript full"):
            play(zero_sum_game, (0, 0), (0, 0))

    def test_ten_rounds_of_mutual_cooperation(self, pd_reward_game):
        """Test that ten cooperative rounds pay 60 each."""
        transcript = play(pd_reward_game, *[(0, 0)] * 10)
        assert total_payoffs(transcript) == (60, 60)

    def test_totals_add_over_concatenated_plays(self, pd_reward_game):
        """Test that the total of a whole play is the sum of its two halves."""
        profiles = [(0, 0), (0, 1), (1, 0), (1, 1), (0, 0), (1, 1), (0, 1)]
        whole = total_payoffs(play(pd_reward_game, *profiles))
        head = total_payoffs(play(pd_reward_game, *profiles[:3]))
        tail = total_payoffs(play(pd_reward_game, *profiles[3:]))
        assert whole == (head[0] + tail[0], head[1] + tail[1])

    def test_incoherent_rounds_flags_tampered_payoffs(self, pd_reward_game):
        """Test that stored payoffs are re-checked against the matrix."""
        transcript = play(pd_reward_game, (0, 0), (1, 1))
        tampered = RoundRecord(
            round_index=2,
            choice_p1=pd_reward_game.strategy(1),
            choice_p2=pd_reward_game.strategy(1),
            payoff_p1=5,
            payoff_p2=2,
        )
        broken = transcript.model_copy(
            update={"rounds": (transcript.rounds[0], tampered)}
        )
        assert incoherent_rounds(transcript) == []
        assert incoherent_rounds(broken) == [2]


@pytest.mark.game_logic
class TestNormalization:
    def test_bounds_map_to_minus_one_and_one(self, pd_reward_game):
        """Test that the attainable range maps onto [-1, 1]."""
        assert normalize_outcome(0, pd_reward_game) == -1
        assert normalize_outcome(10, pd_reward_game) == 1
        assert normalize_outcome(5, pd_reward_game) == 0

    def test_joint_range_uses_mean_payoff(self, pd_reward_game):
        """Test that joint normalization uses the mean of both payoffs."""
        assert attainable_range(pd_reward_game, "joint") == (2, 6)
        assert normalize_outcome(4, pd_reward_game, "joint") == 0

    def test_agent_two_range(self):
        """Test that the second agent's range uses its own payoffs."""
        game = make_game(cells=[[(0, 1), (0, 3)], [(0, 5), (0, 9)]])
        assert attainable_range(game, "per_agent", agent=2) == (1, 9)

    def test_constant_matrix_is_degenerate(self):
        """Test that a constant matrix cannot be normalized."""
        game = make_game(
            kind=GameKind.ZERO_SUM, cells=[[(0, 0), (0, 0)], [(0, 0), (0, 0)]]
        )
        with pytest.raises(DegenerateRangeError, match="degenerate range"):
            normalize_outcome(0, game)

    @pytest.mark.parametrize(
        "mode, agent", [("per_agent", 1), ("per_agent", 2), ("joint", 1)]
    )
    def test_larger_payoffs_never_score_lower(
        self, pd_reward_game, pd_penalty_game, mode, agent
    ):
        """Test that normalization preserves the order of payoffs in either sense."""
        for game in (pd_reward_game, pd_penalty_game):
            low, high = attainable_range(game, mode, agent)
            values = [low + (high - low) * k / 40 for k in range(41)]
            scaled = [normalize_outcome(v, game, mode, agent) for v in values]
            assert scaled == sorted(scaled)
            assert scaled[0] == pytest.approx(-1)
            assert scaled[-1] == pytest.approx(1)


@pytest.mark.game_logic
def test_strategy_ids_are_frozen():
    """Test that strategy ids cannot be mutated."""
    strategy = StrategyId(index=0, label="A")
    with pytest.raises(Exception):
        strategy.label = "B"
    assert PayoffMatrix(cells=[[(1, 2)]]).cells[0][0] == (1, 2)
