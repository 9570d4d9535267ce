"""Experiment expansion and execution.

An experiment config expands into one GameInstance per point of the axis
cross-product; each instance is played round by round and its RunRecord is
stored in the run ledger, from which results.jsonl is exported in instance
order once every instance has finished.
"""

import datetime
import hashlib
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from threading import Lock
from typing import Dict, List, Optional, Tuple, Union

import httpx
import shortuuid
from pydantic import ValidationError

from config import config
from errors import (
    ConfigError,
    ParseFailure,
    ProviderUnavailableError,
    SequenceExhaustedError,
    StaleResultsError,
    UnparseableDecisionError,
)
from game_logic import apply_round, incoherent_rounds, validate_game
from gateway import (
    Gateway,
    HttpChatProvider,
    MockProvider,
    RequestContext,
    RequestLog,
    resolve_api_key,
)
from models import RunLedger
from prompting import LanguagePack, build_prompt, load_language_pack, prompt_digest
from schemas import (
    AgentBackend,
    AgentSpec,
    Decision,
    DecisionRecord,
    ExperimentConfig,
    ExperimentManifest,
    GameInstance,
    GameKind,
    PolicyView,
    ProviderConfig,
    RunRecord,
    RunStatus,
    StrategyId,
    Transcript,
)
from strategies import decide

logger = logging.getLogger(__name__)

REQUIRED_WEIGHTS = {GameKind.ZERO_SUM: 2, GameKind.PRISONERS_DILEMMA: 4}
SCRIPTED_MODEL = "scripted"
MOCK_MODEL = "mock"
# Effectively unlimited
MOCK_RATE_LIMIT = 1_000_000


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of everything that shapes results; parallelism is left out."""
    data = cfg.model_dump(mode="json", exclude={"parallelism"})
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def experiment_id(cfg: ExperimentConfig) -> str:
    return cfg.experiment_id or shortuuid.uuid(name=config_hash(cfg))


def derive_seed(master_seed: int, instance_id: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{instance_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate a config file; findings name the offending field path."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from None
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        findings = [
            f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        ]
        raise ConfigError(f"invalid config {path}", findings) from None


def model_ids(cfg: ExperimentConfig) -> List[str]:
    """Values of the model axis: one per bound provider when any agent needs one."""
    if any(agent.backend == AgentBackend.PROVIDER for agent in cfg.agents):
        if not cfg.providers:
            raise ConfigError("provider-backed agents need at least one provider")
        return [provider.provider_id for provider in cfg.providers]
    if all(agent.backend == AgentBackend.SCRIPTED for agent in cfg.agents):
        return [SCRIPTED_MODEL]
    return [MOCK_MODEL]


def personality_pairs(cfg: ExperimentConfig) -> List[Tuple[str, str]]:
    if cfg.personality_pairs_ordered:
        return list(dict.fromkeys(tuple(pair) for pair in cfg.personalities))
    pairs = {}
    for pair in cfg.personalities:
        pairs.setdefault(tuple(sorted(pair)), tuple(pair))
    return list(pairs.values())


def expand_config(cfg: ExperimentConfig) -> List[GameInstance]:
    """Deterministic ordered cross-product of every axis and repetition.

    Axis order: model, game, language, personality pair, rounds knowledge,
    opponent-personality knowledge, repetition. One-shot games take no
    rounds-knowledge axis; games with vary_opponent_knowledge off take only
    the first opponent-knowledge value.
    """
    for axis in ("games", "languages", "personalities", "rounds_known"):
        if not getattr(cfg, axis):
            raise ConfigError(f"empty axis: {axis}")
    if not cfg.opponent_personality_known:
        raise ConfigError("empty axis: opponent_personality_known")

    master_seed = cfg.master_seed
    if master_seed is None:
        master_seed = config.DEFAULT_SEED
    pairs = personality_pairs(cfg)
    instances = []
    for model_id, game in itertools.product(model_ids(cfg), cfg.games):
        rounds_axis = cfg.rounds_known if game.is_repeated else [True]
        opponent_axis = cfg.opponent_personality_known
        if not game.vary_opponent_knowledge:
            opponent_axis = opponent_axis[:1]
        combos = itertools.product(
            cfg.languages, pairs, rounds_axis, opponent_axis, range(cfg.repetitions)
        )
        for language, pair, rounds_known, opponent_known, repetition in combos:
            axes = {
                "model_id": model_id,
                "game_id": game.id,
                "language": language,
                "personalities": list(pair),
                "rounds_known": rounds_known,
                "opponent_personality_known": opponent_known,
                "repetition": repetition,
            }
            instance_id = shortuuid.uuid(name=canonical_json(axes))
            instances.append(
                GameInstance(
                    instance_id=instance_id,
                    position=len(instances),
                    seed=derive_seed(master_seed, instance_id),
                    **axes,
                )
            )
    return instances


def distinct_games_per_model(instances: List[GameInstance]) -> int:
    """Distinct scenarios (game, personalities, flags) one model plays per language."""
    if not instances:
        return 0
    first = instances[0]
    return len(
        {
            (i.game_id, i.personalities, i.rounds_known, i.opponent_personality_known)
            for i in instances
            if i.model_id == first.model_id and i.language == first.language
        }
    )


def validate_experiment(cfg: ExperimentConfig, pack: LanguagePack) -> List[str]:
    """Every problem found in a parsed config against a loaded pack."""
    findings = []
    seen = set()
    for game in cfg.games:
        if game.id in seen:
            findings.append(f"duplicate game id {game.id}")
        seen.add(game.id)
        findings.extend(f"game {game.id}: {v}" for v in validate_game(game).violations)
        needed = REQUIRED_WEIGHTS[game.kind]
        if len(game.weights) < needed:
            findings.append(
                f"game {game.id}: {game.kind.value} needs {needed} weights, "
                f"got {len(game.weights)}"
            )
    for language in cfg.languages:
        if language not in pack.templates:
            findings.append(f"language {language} is not in pack {pack.path}")
    try:
        expand_config(cfg)
    except ConfigError as e:
        findings.append(str(e))
    return findings


def check_api_keys(cfg: ExperimentConfig) -> Dict[str, Optional[str]]:
    """Resolve every provider key up front so a missing one fails at startup."""
    if not any(agent.backend == AgentBackend.PROVIDER for agent in cfg.agents):
        return {}
    return {p.provider_id: resolve_api_key(p) for p in cfg.providers}


class ExperimentRunner:
    """Plays game instances of one experiment against a shared gateway."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        pack: Optional[LanguagePack] = None,
        gateway: Optional[Gateway] = None,
        mock: bool = False,
        http_client: Optional[httpx.Client] = None,
    ):
        self.cfg = cfg
        self.pack = pack or load_language_pack(cfg.pack or config.PACK_DIR)
        self.gateway = gateway or Gateway()
        self.mock = mock
        self.http_client = http_client
        self._api_keys: Dict[str, Optional[str]] = {}
        if not mock:
            self._api_keys = check_api_keys(cfg)
        else:
            for agent in cfg.agents:
                if agent.backend == AgentBackend.PROVIDER and agent.policy is None:
                    raise ConfigError(
                        f"agent {agent.name} needs a policy to run with --mock"
                    )
        self._http_providers: Dict[str, HttpChatProvider] = {}
        self._lock = Lock()

    def close(self) -> None:
        """Release the HTTP clients this runner opened itself."""
        with self._lock:
            for provider in self._http_providers.values():
                provider.close()
            self._http_providers.clear()

    def _provider_config(self, agent: AgentSpec, inst: GameInstance) -> ProviderConfig:
        if agent.backend == AgentBackend.MOCK:
            return ProviderConfig(provider_id=MOCK_MODEL, rate_limit=MOCK_RATE_LIMIT)
        bound = self.cfg.provider(inst.model_id)
        if self.mock:
            return bound.model_copy(
                update={
                    "provider_id": f"{MOCK_MODEL}:{bound.provider_id}",
                    "rate_limit": MOCK_RATE_LIMIT,
                }
            )
        return bound

    def _provider(self, agent: AgentSpec, inst: GameInstance, cfg: ProviderConfig):
        if agent.backend == AgentBackend.MOCK or self.mock:
            return MockProvider(
                policy=agent.policy, replies=agent.replies, provider_id=cfg.provider_id
            )
        with self._lock:
            if cfg.provider_id not in self._http_providers:
                self._http_providers[cfg.provider_id] = HttpChatProvider(
                    cfg,
                    client=self.http_client,
                    api_key=self._api_keys.get(cfg.provider_id),
                )
            return self._http_providers[cfg.provider_id]

    def _view(
        self, transcript: Transcript, own_index: int, rounds_known: bool
    ) -> PolicyView:
        history = tuple(
            (r.choice_p1.index, r.choice_p2.index)
            if own_index == 1
            else (r.choice_p2.index, r.choice_p1.index)
            for r in transcript.rounds
        )
        game = transcript.game
        return PolicyView(
            own_index=own_index,
            history=history,
            round_index=len(transcript.rounds) + 1,
            n_rounds_known=game.n_rounds if rounds_known else None,
            game=game,
        )

    def run_game_instance(self, inst: GameInstance) -> RunRecord:
        """Play every round; both prompts of a round come from the same transcript."""
        game = self.cfg.game(inst.game_id)
        template = self.pack.template(inst.language, game.kind)
        labels = template.strategy_labels
        names = (self.cfg.agents[0].name, self.cfg.agents[1].name)

        # Mock providers are built per instance so reply lists restart with each run
        agents = []
        for agent in self.cfg.agents:
            if agent.backend == AgentBackend.SCRIPTED:
                agents.append((agent, None, None))
            else:
                provider_cfg = self._provider_config(agent, inst)
                provider = self._provider(agent, inst, provider_cfg)
                agents.append((agent, provider_cfg, provider))

        transcript = Transcript(game=game, seed=inst.seed)
        decisions: List[DecisionRecord] = []
        while not transcript.is_complete:
            round_index = len(transcript.rounds) + 1
            round_decisions = []
            try:
                for own_index, (agent, provider_cfg, provider) in enumerate(agents, 1):
                    prompt = build_prompt(
                        game,
                        self.pack,
                        inst.language,
                        transcript,
                        own_index,
                        names,
                        inst.personalities,
                        inst.rounds_known,
                        inst.opponent_personality_known,
                    )
                    view = self._view(transcript, own_index, inst.rounds_known)
                    if provider is None:
                        chosen = decide(agent.policy, view, inst.seed)
                        label = labels[chosen.index]
                        decision = Decision(
                            chosen=StrategyId(index=chosen.index, label=label),
                            raw_reply=label,
                            attempts=1,
                            latency_ms=0,
                            provider_id=SCRIPTED_MODEL,
                        )
                    else:
                        context = RequestContext(
                            instance_id=inst.instance_id,
                            model_id=inst.model_id,
                            round_index=round_index,
                            agent=own_index,
                            seed=inst.seed,
                            view=view,
                        )
                        decision = self.gateway.request_decision(
                            provider_cfg, provider, prompt, labels, context
                        )
                    round_decisions.append(
                        DecisionRecord(
                            instance_id=inst.instance_id,
                            round_index=round_index,
                            agent=own_index,
                            prompt_sha256=prompt_digest(prompt),
                            decision=decision,
                        )
                    )
            except ProviderUnavailableError as e:
                status = RunStatus.PROVIDER_ERROR
                return self._failed(inst, transcript, decisions, status, e)
            except (
                ParseFailure,
                SequenceExhaustedError,
                UnparseableDecisionError,
            ) as e:
                status = RunStatus.INVALID_DECISION
                return self._failed(inst, transcript, decisions, status, e)

            first, second = round_decisions
            transcript = apply_round(
                transcript,
                game.strategy(first.decision.chosen.index),
                game.strategy(second.decision.chosen.index),
            )
            decisions.extend(round_decisions)

        return RunRecord(
            instance=inst,
            transcript=transcript,
            decisions=decisions,
            status=RunStatus.COMPLETE,
        )

    def _failed(
        self, inst, transcript, decisions, status: RunStatus, error
    ) -> RunRecord:
        logger.warning(
            f"Instance {inst.instance_id} stopped after {len(transcript.rounds)} "
            f"rounds: {status.value}: {error}"
        )
        return RunRecord(
            instance=inst,
            transcript=transcript,
            decisions=decisions,
            status=status,
            failure=str(error),
        )


def _run_batch(
    runner: ExperimentRunner,
    instances: List[GameInstance],
    ledger: RunLedger,
    parallelism: int,
) -> List[RunRecord]:
    """Run instances concurrently; only this thread writes to the ledger."""
    records = []
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        futures = {
            executor.submit(runner.run_game_instance, inst): inst for inst in instances
        }
        for future in as_completed(futures):
            inst = futures[future]
            try:
                record = future.result()
            except Exception as e:
                logger.exception(f"Instance {inst.instance_id} crashed: {e}")
                record = RunRecord(
                    instance=inst,
                    transcript=Transcript(
                        game=runner.cfg.game(inst.game_id), seed=inst.seed
                    ),
                    status=RunStatus.CRASHED,
                    failure=f"{type(e).__name__}: {e}",
                )
            ledger.save(record)
            records.append(record)
            logger.info(
                f"Instance {inst.position} ({inst.game_id}, {inst.language}, "
                f"{inst.model_id}) finished: {record.status.value}"
            )
    return records


def results_lines(records: List[RunRecord]) -> List[str]:
    """results.jsonl content: each run's decisions, then the run itself."""
    lines = []
    for record in sorted(records, key=lambda r: r.instance.position):
        for decision in record.decisions:
            lines.append(
                json.dumps(
                    {"kind": "decision", **decision.model_dump(mode="json")},
                    sort_keys=True,
                    ensure_ascii=False,
                )
            )
        run = record.model_dump(mode="json", exclude={"decisions"})
        lines.append(
            json.dumps({"kind": "run", **run}, sort_keys=True, ensure_ascii=False)
        )
    return lines


def _prepare_out_dir(out_dir: Path, cfg: ExperimentConfig) -> None:
    config_path = out_dir / "config.json"
    if config_path.exists():
        stored = ExperimentConfig.model_validate_json(
            config_path.read_text(encoding="utf-8")
        )
        if config_hash(stored) != config_hash(cfg):
            raise StaleResultsError(str(out_dir))
        logger.info(f"Resuming experiment in {out_dir}")
        return
    if out_dir.exists() and any(out_dir.iterdir()):
        raise StaleResultsError(str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(
        cfg.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False
    )
    config_path.write_text(text + "\n", encoding="utf-8")


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    mock: bool = False,
    seed: Optional[int] = None,
    parallelism: Optional[int] = None,
    pack: Optional[LanguagePack] = None,
    gateway: Optional[Gateway] = None,
    http_client: Optional[httpx.Client] = None,
) -> ExperimentManifest:
    """Run every instance of an experiment and write its results directory.

    Instances that fail are retried once after the first pass. One failure
    never stops the other instances.
    """
    started_at = datetime.datetime.now(datetime.timezone.utc)
    master_seed = seed if seed is not None else cfg.master_seed
    if master_seed is None:
        master_seed = config.DEFAULT_SEED
    cfg = cfg.model_copy(update={"master_seed": master_seed})
    parallelism = parallelism or cfg.parallelism or config.PARALLELISM

    instances = expand_config(cfg)
    exp_id = experiment_id(cfg)
    out_dir = Path(out_dir) if out_dir else config.RESULTS_DIR / exp_id

    runner_gateway = gateway
    if runner_gateway is None:
        runner_gateway = Gateway(request_log=RequestLog(out_dir / "requests.jsonl"))
    # Missing keys, policies and pack gaps fail before the results directory exists
    runner = ExperimentRunner(
        cfg, pack=pack, gateway=runner_gateway, mock=mock, http_client=http_client
    )
    findings = validate_experiment(cfg, runner.pack)
    if findings:
        raise ConfigError(f"invalid experiment config: {findings[0]}", findings)
    try:
        return _execute(cfg, runner, instances, out_dir, parallelism, started_at)
    finally:
        runner.close()


def _execute(
    cfg: ExperimentConfig,
    runner: ExperimentRunner,
    instances: List[GameInstance],
    out_dir: Path,
    parallelism: int,
    started_at: datetime.datetime,
) -> ExperimentManifest:
    _prepare_out_dir(out_dir, cfg)
    exp_id = experiment_id(cfg)
    master_seed = cfg.master_seed
    mock = runner.mock

    logger.info(
        f"Starting experiment {exp_id}: {len(instances)} instances, "
        f"parallelism {parallelism}, mock={mock}"
    )
    with RunLedger(out_dir / "ledger.db") as ledger:
        done = ledger.completed_ids()
        pending = [inst for inst in instances if inst.instance_id not in done]
        if done:
            logger.info(f"Skipping {len(instances) - len(pending)} completed instances")

        first_pass = _run_batch(runner, pending, ledger, parallelism)
        failed = [r.instance for r in first_pass if r.status != RunStatus.COMPLETE]
        if failed:
            logger.warning(f"Retrying {len(failed)} failed instances once")
            failed.sort(key=lambda i: i.position)
            _run_batch(runner, failed, ledger, parallelism)

        wanted = {inst.instance_id for inst in instances}
        records = [r for r in ledger.records() if r.instance.instance_id in wanted]

    lines = results_lines(records)
    (out_dir / "results.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )

    counts = {status.value: 0 for status in RunStatus}
    for record in records:
        counts[record.status.value] += 1
    finished_at = datetime.datetime.now(datetime.timezone.utc)
    manifest = ExperimentManifest(
        experiment_id=exp_id,
        config_hash=config_hash(cfg),
        master_seed=master_seed,
        instances=len(instances),
        counts=counts,
        decisions=sum(len(r.decisions) for r in records),
        rounds_completed=sum(len(r.transcript.rounds) for r in records),
        distinct_games_per_model=distinct_games_per_model(instances),
        retried=[inst.instance_id for inst in failed],
        started_at=started_at,
        finished_at=finished_at,
        duration_seconds=(finished_at - started_at).total_seconds(),
    )
    (out_dir / "manifest.json").write_text(
        manifest.model_dump_json(indent=2) + "\n", encoding="utf-8"
    )
    logger.info(
        f"Finished experiment {exp_id} in {manifest.duration_seconds:.1f}s: "
        f"{counts}, {manifest.decisions} decisions"
    )
    return manifest


def load_results(
    results_dir: Union[str, Path]
) -> Tuple[ExperimentConfig, List[RunRecord]]:
    """Read a results directory back into its config and run records."""
    results_dir = Path(results_dir)
    config_path = results_dir / "config.json"
    results_path = results_dir / "results.jsonl"
    if not config_path.exists() or not results_path.exists():
        raise ConfigError(f"{results_dir} has no config.json or results.jsonl")
    cfg = ExperimentConfig.model_validate_json(config_path.read_text(encoding="utf-8"))

    decisions: Dict[str, List[DecisionRecord]] = {}
    records = []
    for line in results_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        kind = data.pop("kind")
        if kind == "decision":
            record = DecisionRecord.model_validate(data)
            decisions.setdefault(record.instance_id, []).append(record)
        elif kind == "run":
            instance_id = data["instance"]["instance_id"]
            data["decisions"] = decisions.get(instance_id, [])
            run = RunRecord.model_validate(data)
            bad = incoherent_rounds(run.transcript)
            if bad:
                raise ConfigError(
                    f"{results_path}: instance {instance_id} stores payoffs that "
                    f"disagree with its matrix in rounds {bad}"
                )
            records.append(run)
    return cfg, records
