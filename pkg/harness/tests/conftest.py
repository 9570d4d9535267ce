import logging
import shutil

import httpx
import pytest

from models import db
from prompting import load_language_pack
from schemas import AgentSpec, ExperimentConfig, GameKind, Objective
from tests.factories import FIXTURE_DIR, PACK_DIR, make_game, tournament_config

logger = logging.getLogger(__name__)


@pytest.fixture
def zero_sum_game():
    """The one-shot zero-sum game: matching pays agent 1, mismatching pays agent 2."""
    return make_game(
        "zero_sum",
        GameKind.ZERO_SUM,
        [[(2, -2), (-2, 2)], [(-2, 2), (2, -2)]],
        labels=("Option A", "Option B"),
        weights=(2, -2),
    )


@pytest.fixture
def pd_reward_game():
    """The prisoner's dilemma matrix read as rewards, 10 rounds."""
    return make_game(
        "pd_reward",
        GameKind.PRISONERS_DILEMMA,
        [[(6, 6), (0, 10)], [(10, 0), (2, 2)]],
        n_rounds=10,
        objective=Objective.MAXIMIZE,
        labels=("Stay silent", "Confess"),
        weights=(6, 0, 10, 2),
    )


@pytest.fixture
def pd_penalty_game(pd_reward_game):
    """The same matrix worded as penalties to minimize."""
    return pd_reward_game.model_copy(
        update={"id": "pd_penalty", "objective": Objective.MINIMIZE}
    )


@pytest.fixture(scope="session")
def pack():
    return load_language_pack(PACK_DIR)


@pytest.fixture
def pack_copy(tmp_path):
    """Writable copy of the shipped pack for tests that break it."""
    target = tmp_path / "pack"
    shutil.copytree(PACK_DIR, target)
    return target


@pytest.fixture
def mock_config():
    """Tit-for-tat against always-confess, mock backends, 10 reward-sense rounds."""
    return tournament_config()


@pytest.fixture
def small_config(zero_sum_game, pd_reward_game):
    """Two games, two languages, two personality pairs, scripted agents."""
    return ExperimentConfig(
        experiment_id="small",
        games=[zero_sum_game, pd_reward_game.model_copy(update={"n_rounds": 3})],
        languages=["en", "fr"],
        personalities=[("cooperative", "cooperative"), ("cooperative", "selfish")],
        rounds_known=[True, False],
        opponent_personality_known=[False],
        agents=(
            AgentSpec(
                name="Agent1", backend="scripted", policy={"kind": "tit_for_tat"}
            ),
            AgentSpec(
                name="Agent2",
                backend="scripted",
                policy={"kind": "random_mixed", "p": 0.5, "seed": 3},
            ),
        ),
        repetitions=2,
        master_seed=11,
    )


@pytest.fixture
def results_dir(tmp_path):
    """Empty path for a results directory; the harness creates it."""
    return tmp_path / "results"


@pytest.fixture
def fixture_results(tmp_path):
    """Copy of the synthetic fixture experiment, safe to write outputs into."""
    target = tmp_path / "synthetic"
    shutil.copytree(FIXTURE_DIR, target)
    return target


@pytest.fixture(autouse=True)
def close_ledger():
    """The ledger database is module-global; never leak a connection between tests."""
    yield
    if not db.is_closed():
        db.close()


@pytest.fixture
def no_network(monkeypatch):
    """Fail any attempt to send a request over httpx."""
    attempts = []

    def refuse(self, request, **kwargs):
        attempts.append(request.url)
        raise AssertionError(f"network access attempted: {request.url}")

    monkeypatch.setattr(httpx.Client, "send", refuse)
    return attempts
