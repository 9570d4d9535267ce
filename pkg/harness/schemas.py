from datetime import datetime
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import pycountry
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Objective(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class GameKind(str, Enum):
    ZERO_SUM = "zero_sum"
    PRISONERS_DILEMMA = "prisoners_dilemma"


# Game definitions

class StrategyId(BaseModel):
    """One of the two strategies of a game; index 0 renders as {strategy1}."""

    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0, le=1)
    label: str = Field(min_length=1)


class PayoffMatrix(BaseModel):
    """2x2 bimatrix, row = player 1 strategy, column = player 2 strategy.

    Cells are kept permissive (ragged rows, None for a missing cell) so that
    validate_game can list every violation instead of failing on the first.
    """

    model_config = ConfigDict(frozen=True)

    cells: List[List[Optional[Tuple[float, float]]]]


class GameSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    kind: GameKind
    strategies: List[StrategyId]
    matrix: PayoffMatrix
    n_rounds: int = Field(default=1, ge=1)
    objective: Objective = Objective.MAXIMIZE
    # Strategy the reciprocal policies open with and PD ordering checks treat
    # as "cooperate"; the templates never name cooperation explicitly.
    cooperate_index: int = Field(default=0, ge=0, le=1)
    # Rendered verbatim into {weight1}..{weight4}
    weights: List[float] = Field(default_factory=list)
    vary_opponent_knowledge: bool = True

    @property
    def is_repeated(self) -> bool:
        return self.n_rounds > 1

    def strategy(self, index: int) -> StrategyId:
        return self.strategies[index]


class ValidationReport(BaseModel):
    game_id: str
    strategy_count_ok: bool
    labels_distinct: bool
    cells_complete: bool
    finite: bool
    zero_sum: bool
    objective: Objective
    violations: List[str] = Field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


class RoundRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    round_index: int = Field(ge=1)
    choice_p1: StrategyId
    choice_p2: StrategyId
    payoff_p1: float
    payoff_p2: float


class Transcript(BaseModel):
    model_config = ConfigDict(frozen=True)

    game: GameSpec
    rounds: Tuple[RoundRecord, ...] = ()
    seed: int = 0

    @property
    def is_complete(self) -> bool:
        return len(self.rounds) == self.game.n_rounds


# Equilibrium analysis

class MixedProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    p1_prob_strategy0: float = Field(ge=0.0, le=1.0)
    p2_prob_strategy0: float = Field(ge=0.0, le=1.0)


class EquilibriumReport(BaseModel):
    game_id: str
    objective: Objective
    pure_equilibria: List[Tuple[StrategyId, StrategyId]]
    mixed_equilibrium: Optional[MixedProfile] = None
    mixed_note: Optional[str] = None
    # Expected payoffs to both players when the mixed profile is played
    mixed_payoffs: Optional[Tuple[float, float]] = None
    dominant_p1: Optional[StrategyId] = None
    dominant_p2: Optional[StrategyId] = None
    zero_sum_value: Optional[float] = None
    pd_ordering_ok: bool = False


# Scripted policies

class PolicyKind(str, Enum):
    ALWAYS_FIRST = "always_first"
    ALWAYS_SECOND = "always_second"
    TIT_FOR_TAT = "tit_for_tat"
    GRIM_TRIGGER = "grim_trigger"
    RANDOM_MIXED = "random_mixed"
    NASH_MIXED = "nash_mixed"
    FIXED_SEQUENCE = "fixed_sequence"


class ScriptedPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PolicyKind
    p: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    sequence: Optional[List[int]] = None
    seed: int = 0

    @model_validator(mode="after")
    def check_parameters(self) -> "ScriptedPolicy":
        if self.kind == PolicyKind.RANDOM_MIXED and self.p is None:
            raise ValueError("random_mixed requires p")
        if self.kind == PolicyKind.FIXED_SEQUENCE:
            if not self.sequence:
                raise ValueError("fixed_sequence requires a nonempty sequence")
            if any(choice not in (0, 1) for choice in self.sequence):
                raise ValueError("fixed_sequence entries must be 0 or 1")
        return self


class PolicyView(BaseModel):
    """What a policy may see when deciding; history pairs are (own, opponent)."""

    model_config = ConfigDict(frozen=True)

    own_index: Literal[1, 2]
    history: Tuple[Tuple[int, int], ...] = ()
    round_index: int = Field(ge=1)
    n_rounds_known: Optional[int] = None
    game: GameSpec

    @model_validator(mode="after")
    def check_history(self) -> "PolicyView":
        if len(self.history) != self.round_index - 1:
            raise ValueError(
                f"history length {len(self.history)} does not match "
                f"round {self.round_index}"
            )
        return self


# Agents and providers

class AgentBackend(str, Enum):
    SCRIPTED = "scripted"
    PROVIDER = "provider"
    MOCK = "mock"


class AgentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    backend: AgentBackend = AgentBackend.PROVIDER
    # Drives scripted/mock agents, and stands in for provider agents under --mock
    policy: Optional[ScriptedPolicy] = None
    # Fixed reply list for a mock agent, consumed in order
    replies: Optional[List[str]] = None

    @model_validator(mode="after")
    def check_backend(self) -> "AgentSpec":
        if self.backend == AgentBackend.SCRIPTED and self.policy is None:
            raise ValueError("scripted agents require a policy")
        if (
            self.backend == AgentBackend.MOCK
            and self.policy is None
            and self.replies is None
        ):
            raise ValueError("mock agents require a policy or a reply list")
        return self


# Sampling defaults recommended by each provider for the evaluated models
PROVIDER_PRESETS: Dict[str, Dict[str, object]] = {
    "gpt-4": {"temperature": 1.0, "top_p": 1.0},
    "gemini-1.5": {"temperature": 0.9, "top_p": 1.0},
    "mistral-large": {"temperature": 0.3, "top_p": 1.0},
    "llama-3.1-405b": {"temperature": 0.9, "top_p": 0.6, "top_k": 40},
}


class ProviderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    provider_id: str = Field(min_length=1)
    endpoint_url: str = ""
    model_id: str = ""
    preset: Optional[str] = None
    temperature: float = Field(default=1.0, ge=0.0)
    top_p: float = Field(default=1.0, gt=0.0, le=1.0)
    top_k: Optional[int] = Field(default=None, ge=1)
    api_key_env: str = ""
    max_retries: int = Field(default=3, ge=0, le=10)
    timeout_ms: int = Field(default=30000, gt=0)
    rate_limit: int = Field(default=60, gt=0)  # requests per minute
    max_concurrency: int = Field(default=4, gt=0)

    @model_validator(mode="before")
    @classmethod
    def apply_preset(cls, data):
        if isinstance(data, dict) and data.get("preset"):
            preset = PROVIDER_PRESETS.get(data["preset"])
            if preset is None:
                raise ValueError(f"unknown provider preset: {data['preset']}")
            data = {**preset, **data}
        return data


class Decision(BaseModel):
    model_config = ConfigDict(frozen=True)

    chosen: StrategyId
    raw_reply: str
    attempts: int = Field(ge=1)
    latency_ms: int = Field(ge=0)
    provider_id: str


# Experiments

class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment_id: Optional[str] = None
    games: List[GameSpec]
    languages: List[str]
    personalities: List[Tuple[str, str]]
    personality_pairs_ordered: bool = False
    rounds_known: List[bool] = Field(default_factory=lambda: [True, False])
    opponent_personality_known: List[bool] = Field(default_factory=lambda: [False])
    agents: Tuple[AgentSpec, AgentSpec]
    repetitions: int = Field(default=10, ge=1)
    master_seed: Optional[int] = None
    providers: List[ProviderConfig] = Field(default_factory=list)
    pack: Optional[str] = None
    parallelism: Optional[int] = Field(default=None, ge=1)
    normalization: Literal["per_agent", "joint"] = "per_agent"
    outcome_selector: Optional[Literal["mean", "agent1", "agent2"]] = None

    @field_validator("languages")
    @classmethod
    def validate_languages(cls, v: List[str]) -> List[str]:
        for tag in v:
            if not pycountry.languages.get(alpha_2=tag.lower()):
                raise ValueError(f"Invalid language tag {tag!r}. Must be ISO 639-1.")
        if len(set(v)) != len(v):
            raise ValueError("Duplicate language tags")
        return [tag.lower() for tag in v]

    def game(self, game_id: str) -> GameSpec:
        for game in self.games:
            if game.id == game_id:
                return game
        raise KeyError(game_id)

    def provider(self, provider_id: str) -> ProviderConfig:
        for provider in self.providers:
            if provider.provider_id == provider_id:
                return provider
        raise KeyError(provider_id)


class GameInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance_id: str
    position: int
    game_id: str
    model_id: str
    language: str
    personalities: Tuple[str, str]
    rounds_known: bool
    opponent_personality_known: bool
    repetition: int
    seed: int

    @property
    def info_condition(self) -> str:
        rounds = "rounds_known" if self.rounds_known else "rounds_unknown"
        opponent = "opp_known" if self.opponent_personality_known else "opp_unknown"
        return f"{rounds}|{opponent}"


class RunStatus(str, Enum):
    COMPLETE = "complete"
    INVALID_DECISION = "invalid_decision"
    PROVIDER_ERROR = "provider_error"
    # Unexpected exception inside the harness, not attributable to the model
    CRASHED = "crashed"


class DecisionRecord(BaseModel):
    instance_id: str
    round_index: int
    agent: Literal[1, 2]
    prompt_sha256: str
    decision: Decision


class RunRecord(BaseModel):
    instance: GameInstance
    transcript: Transcript
    decisions: List[DecisionRecord] = Field(default_factory=list)
    status: RunStatus
    failure: Optional[str] = None


class ExperimentManifest(BaseModel):
    experiment_id: str
    config_hash: str
    master_seed: int
    instances: int
    counts: Dict[str, int]
    decisions: int
    rounds_completed: int
    distinct_games_per_model: int
    retried: List[str] = Field(default_factory=list)
    started_at: datetime
    finished_at: datetime
    duration_seconds: float


class MetricsReport(BaseModel):
    game_id: str
    variance: str = "population"
    iv_variant: str = "whole_set"
    selector: str
    raw: Dict[str, Dict[str, Optional[float]]]
    normalized: Dict[str, Dict[str, Optional[float]]]
    z_factors: Dict[str, float]
    errors: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    excluded_cells: Dict[str, int] = Field(default_factory=dict)
    data_quality: Dict[str, Dict[str, int]] = Field(default_factory=dict)
