import json

import pytest
from fastapi.testclient import TestClient
from freezegun import freeze_time

from errors import ConfigError, StaleResultsError
from game_logic import total_payoffs
from mock_server import create_app
from models import RunLedger
from orchestrator import (
    ExperimentRunner,
    config_hash,
    derive_seed,
    distinct_games_per_model,
    expand_config,
    load_experiment_config,
    load_results,
    run_experiment,
    validate_experiment,
)
from schemas import RunStatus
from tests.factories import CONFIGS_DIR, tournament_config

PROVIDER_KEYS = (
    "OPENAI_API_KEY",
    "GEMINI_API_KEY",
    "MISTRAL_API_KEY",
    "TOGETHER_API_KEY",
)


@pytest.fixture
def experiment_config():
    return load_experiment_config(CONFIGS_DIR / "experiment.json")


@pytest.fixture
def without_keys(monkeypatch):
    for name in PROVIDER_KEYS:
        monkeypatch.delenv(name, raising=False)


def read_results(out_dir):
    return (out_dir / "results.jsonl").read_bytes()


def local_provider_config():
    return tournament_config(
        agents=[
            {"name": "Agent1", "backend": "provider"},
            {"name": "Agent2", "backend": "provider"},
        ],
        providers=[
            {
                "provider_id": "local",
                "endpoint_url": "http://testserver/v1/chat/completions",
                "model_id": "local-model",
                "api_key_env": "HARNESS_LOCAL_KEY",
            }
        ],
    )


@pytest.mark.orchestrator
class TestExpandConfig:
    def test_shipped_experiment_size(self, experiment_config):
        """Test that the shipped experiment expands to 18 games per model."""
        instances = expand_config(experiment_config)
        assert len(instances) == 3600
        assert distinct_games_per_model(instances) == 18

    def test_axis_order_and_positions(self, small_config):
        """Test that instances are ordered game, language, then repetition."""
        instances = expand_config(small_config)
        assert len(instances) == 24
        assert [inst.position for inst in instances] == list(range(24))
        first, second = instances[0], instances[1]
        assert (first.game_id, first.language) == ("zero_sum", "en")
        assert first.repetition == 0
        assert second.repetition == 1
        assert instances[8].game_id == "pd_reward"

    def test_one_shot_games_only_take_known_length(self, small_config):
        """Test that one-shot games do not vary length knowledge."""
        zero_sum = [i for i in expand_config(small_config) if i.game_id == "zero_sum"]
        assert {i.rounds_known for i in zero_sum} == {True}

    def test_instance_ids_are_stable(self, small_config):
        """Test that instance ids are unique and stable across expansions."""
        first = [i.instance_id for i in expand_config(small_config)]
        second = [i.instance_id for i in expand_config(small_config)]
        assert first == second
        assert len(set(first)) == len(first)

    def test_unordered_personality_pairs_collapse(self, small_config):
        """Test that mirrored personality pairs count once."""
        cfg = small_config.model_copy(
            update={
                "personalities": [
                    ("cooperative", "selfish"),
                    ("selfish", "cooperative"),
                ]
            }
        )
        pairs = {inst.personalities for inst in expand_config(cfg)}
        assert pairs == {("cooperative", "selfish")}

    @pytest.mark.parametrize("axis", ["games", "languages", "personalities"])
    def test_empty_axis(self, small_config, axis):
        """Test that any empty axis is a configuration error."""
        cfg = small_config.model_copy(update={axis: []})
        with pytest.raises(ConfigError, match=f"empty axis: {axis}"):
            expand_config(cfg)

    def test_seeds_derive_from_master_seed(self, small_config):
        """Test that instance seeds derive from the master seed."""
        inst = expand_config(small_config)[0]
        assert inst.seed == derive_seed(11, inst.instance_id)
        assert derive_seed(12, inst.instance_id) != inst.seed


@pytest.mark.orchestrator
class TestConfigLoading:
    def test_shipped_configs_validate(self, pack):
        """Test that both shipped configs validate against the pack."""
        for name in ("experiment.json", "tournament.json"):
            cfg = load_experiment_config(CONFIGS_DIR / name)
            assert validate_experiment(cfg, pack) == []

    def test_findings_name_the_field(self, tmp_path):
        """Test that schema findings start with the field path."""
        data = json.loads((CONFIGS_DIR / "tournament.json").read_text(encoding="utf-8"))
        data["repetitions"] = 0
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(ConfigError) as exc:
            load_experiment_config(path)
        assert any(f.startswith("repetitions:") for f in exc.value.findings)

    def test_missing_file(self, tmp_path):
        """Test that a missing config file is reported."""
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "nope.json")

    def test_unknown_language_and_short_weights(self, pack, mock_config):
        """Test that validation lists every problem at once."""
        game = mock_config.games[0].model_copy(update={"weights": [6, 0]})
        cfg = mock_config.model_copy(update={"games": [game], "languages": ["de"]})
        findings = validate_experiment(cfg, pack)
        assert any("needs 4 weights" in f for f in findings)
        assert any("language de" in f for f in findings)

    def test_hash_ignores_parallelism(self, mock_config):
        """Test that parallelism does not change the config hash."""
        faster = mock_config.model_copy(update={"parallelism": 8})
        assert config_hash(faster) == config_hash(mock_config)
        assert config_hash(mock_config.model_copy(update={"repetitions": 2})) != (
            config_hash(mock_config)
        )


@pytest.mark.orchestrator
@pytest.mark.integration
class TestRunExperiment:
    def test_tit_for_tat_against_always_defect(self, mock_config, results_dir):
        """Test the scripted tournament against its hand-traced totals."""
        manifest = run_experiment(mock_config, results_dir)
        assert manifest.instances == 1
        assert manifest.counts["complete"] == 1
        assert manifest.decisions == 20
        _, records = load_results(results_dir)
        assert total_payoffs(records[0].transcript) == (18, 28)
        assert [d.decision.chosen.label for d in records[0].decisions[:2]] == [
            "Stay silent",
            "Confess",
        ]

    def test_results_directory_layout(self, small_config, results_dir):
        """Test that a run writes every results file."""
        run_experiment(small_config, results_dir, parallelism=2)
        for name in ("config.json", "results.jsonl", "manifest.json", "ledger.db"):
            assert (results_dir / name).exists()
        cfg, records = load_results(results_dir)
        assert config_hash(cfg) == config_hash(small_config)
        assert [r.instance.position for r in records] == list(range(24))
        assert all(r.status == RunStatus.COMPLETE for r in records)

    def test_reruns_are_byte_identical(self, small_config, tmp_path):
        """Test that results do not depend on parallelism."""
        run_experiment(small_config, tmp_path / "a", parallelism=1)
        run_experiment(small_config, tmp_path / "b", parallelism=4)
        assert read_results(tmp_path / "a") == read_results(tmp_path / "b")

    def test_seed_override_changes_the_run(self, small_config, tmp_path):
        """Test that a seed override changes the results."""
        manifest = run_experiment(small_config, tmp_path / "a", seed=5)
        assert manifest.master_seed == 5
        run_experiment(small_config, tmp_path / "b")
        assert read_results(tmp_path / "a") != read_results(tmp_path / "b")

    def test_resume_skips_completed_instances(self, small_config, results_dir):
        """Test that rerunning into the same directory plays nothing again."""
        run_experiment(small_config, results_dir)
        before = read_results(results_dir)
        manifest = run_experiment(small_config, results_dir)
        assert read_results(results_dir) == before
        assert manifest.counts["complete"] == 24
        with RunLedger(results_dir / "ledger.db") as ledger:
            instance_id = expand_config(small_config)[0].instance_id
            assert ledger.executions(instance_id) == 1

    def test_other_config_in_directory_is_stale(self, small_config, results_dir):
        """Test that a directory from another config is refused."""
        run_experiment(small_config, results_dir)
        changed = small_config.model_copy(update={"repetitions": 1})
        with pytest.raises(StaleResultsError, match="stale results directory"):
            run_experiment(changed, results_dir)

    def test_unrelated_files_make_directory_stale(self, mock_config, results_dir):
        """Test that unrelated files make a directory stale."""
        results_dir.mkdir()
        (results_dir / "notes.txt").write_text("keep me", encoding="utf-8")
        with pytest.raises(StaleResultsError):
            run_experiment(mock_config, results_dir)

    def test_exhausted_replies_mark_the_run_invalid(self, results_dir):
        """Test that running out of replies is an invalid decision."""
        cfg = tournament_config(
            agents=[
                {
                    "name": "Agent1",
                    "backend": "mock",
                    "policy": {"kind": "tit_for_tat"},
                },
                {"name": "Agent2", "backend": "mock", "replies": ["Confess"]},
            ]
        )
        manifest = run_experiment(cfg, results_dir)
        assert manifest.counts["invalid_decision"] == 1
        assert len(manifest.retried) == 1
        _, records = load_results(results_dir)
        record = records[0]
        assert record.status == RunStatus.INVALID_DECISION
        assert len(record.transcript.rounds) == 1
        assert "sequence exhausted" in record.failure
        with RunLedger(results_dir / "ledger.db") as ledger:
            assert ledger.executions(manifest.retried[0]) == 2

    def test_pack_gaps_fail_before_writing(self, results_dir):
        """Test that a language missing from the pack stops the run up front."""
        with pytest.raises(ConfigError, match="language de") as exc:
            run_experiment(tournament_config(languages=["de"]), results_dir)
        assert any("language de" in f for f in exc.value.findings)
        assert not results_dir.exists()

    def test_short_weights_fail_before_writing(self, mock_config, results_dir):
        """Test that a game without enough weights is rejected, not played."""
        game = mock_config.games[0].model_copy(update={"weights": [6, 0]})
        cfg = mock_config.model_copy(update={"games": [game]})
        with pytest.raises(ConfigError, match="needs 4 weights"):
            run_experiment(cfg, results_dir)
        assert not results_dir.exists()

    def test_harness_fault_is_recorded_as_a_crash(
        self, mock_config, results_dir, monkeypatch
    ):
        """Test that an unexpected exception is not blamed on the model."""

        def broken_round(transcript, first, second):
            raise RuntimeError("boom")

        monkeypatch.setattr("orchestrator.apply_round", broken_round)
        manifest = run_experiment(mock_config, results_dir)
        assert manifest.counts["crashed"] == 1
        assert manifest.counts["invalid_decision"] == 0
        assert len(manifest.retried) == 1
        _, records = load_results(results_dir)
        assert records[0].status == RunStatus.CRASHED
        assert records[0].failure == "RuntimeError: boom"
        assert records[0].transcript.rounds == ()

    def test_tampered_payoffs_are_rejected_on_load(self, mock_config, results_dir):
        """Test that stored payoffs which disagree with the matrix fail to load."""
        run_experiment(mock_config, results_dir)
        path = results_dir / "results.jsonl"
        lines = []
        for line in path.read_text(encoding="utf-8").splitlines():
            data = json.loads(line)
            if data["kind"] == "run":
                data["transcript"]["rounds"][2]["payoff_p1"] += 1
            lines.append(json.dumps(data, sort_keys=True))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ConfigError, match=r"matrix in rounds \[3\]"):
            load_results(results_dir)

    @freeze_time("2025-04-17 12:00:00")
    def test_manifest_timing(self, mock_config, results_dir):
        """Test that the manifest records start and finish times."""
        manifest = run_experiment(mock_config, results_dir)
        assert manifest.started_at == manifest.finished_at
        assert manifest.duration_seconds == 0
        stored = json.loads((results_dir / "manifest.json").read_text(encoding="utf-8"))
        assert stored["started_at"].startswith("2025-04-17T12:00:00")


@pytest.mark.orchestrator
@pytest.mark.integration
class TestProviders:
    def test_missing_key_fails_before_writing(
        self, experiment_config, results_dir, without_keys
    ):
        """Test that a missing API key fails before any file is written."""
        with pytest.raises(ConfigError, match="OPENAI_API_KEY"):
            run_experiment(experiment_config, results_dir)
        assert not results_dir.exists()

    def test_mock_flag_never_touches_the_network(
        self, experiment_config, results_dir, without_keys, no_network
    ):
        """Test that mock runs never open a connection."""
        cfg = experiment_config.model_copy(
            update={"languages": ["en"], "repetitions": 1}
        )
        manifest = run_experiment(cfg, results_dir, mock=True)
        assert manifest.instances == 72
        assert manifest.counts["complete"] == 72
        assert no_network == []

    def test_http_provider_end_to_end(self, monkeypatch, results_dir):
        """Test a full run over the HTTP provider path."""
        monkeypatch.setenv("HARNESS_LOCAL_KEY", "sk-local")
        app = create_app(default_reply="Confess")
        client = TestClient(app)
        manifest = run_experiment(
            local_provider_config(), results_dir, http_client=client
        )
        assert not client.is_closed
        assert manifest.counts["complete"] == 1
        assert len(app.state.requests) == 20
        _, records = load_results(results_dir)
        assert records[0].instance.model_id == "local"
        assert total_payoffs(records[0].transcript) == (20, 20)
        log = (results_dir / "requests.jsonl").read_text(encoding="utf-8")
        assert len(log.splitlines()) == 20
        assert "sk-local" not in log

    def test_runner_closes_the_clients_it_opened(self, monkeypatch):
        """Test that closing the runner closes every HTTP client it created."""
        monkeypatch.setenv("HARNESS_LOCAL_KEY", "sk-local")
        cfg = local_provider_config()
        runner = ExperimentRunner(cfg)
        inst = expand_config(cfg)[0]
        agent = cfg.agents[0]
        provider = runner._provider(agent, inst, runner._provider_config(agent, inst))
        runner.close()
        assert provider.client.is_closed

    def test_mock_agents_match_the_scripted_tournament(self, tmp_path):
        """Test that mock agents play exactly like scripted ones."""
        scripted = tournament_config(
            agents=[
                {
                    "name": "Agent1",
                    "backend": "scripted",
                    "policy": {"kind": "tit_for_tat"},
                },
                {
                    "name": "Agent2",
                    "backend": "scripted",
                    "policy": {"kind": "always_second"},
                },
            ]
        )
        run_experiment(tournament_config(), tmp_path / "mock")
        run_experiment(scripted, tmp_path / "scripted")
        _, mocked = load_results(tmp_path / "mock")
        _, played = load_results(tmp_path / "scripted")
        assert mocked[0].transcript.rounds == played[0].transcript.rounds
