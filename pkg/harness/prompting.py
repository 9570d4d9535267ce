"""Prompt templates: language packs, conditional sections and placeholder rendering.

Template syntax:
    {name}              placeholder, replaced by a rendered value
    {flag}: [text]      conditional section on a line of its own; emits text
                        when flag is enabled, otherwise the whole line vanishes
"""

import hashlib
import json
import logging
import re
from pathlib import Path
from typing import AbstractSet, Dict, List, Mapping, Optional, Tuple, Union

import pycountry
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from errors import LanguagePackError, MissingPlaceholderError
from game_logic import normalize_label
from schemas import GameKind, GameSpec, Transcript

logger = logging.getLogger(__name__)

SECTION_RE = re.compile(
    r"^[ \t]*\{(?P<flag>\w+)\}: \[(?P<body>[^\[\]\n]*)\][ \t]*(?P<nl>\n?)",
    re.MULTILINE,
)
STRAY_SECTION_RE = re.compile(r"\{\w+\}: \[")
PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")

KNOWN_FLAGS = frozenset({"intro", "opponentIntro", "gameLength"})
KNOWN_PLACEHOLDERS = frozenset(
    {
        "currentPlayerName",
        "opponent1",
        "personality",
        "opponentPersonality",
        "strategy1",
        "strategy2",
        "weight1",
        "weight2",
        "weight3",
        "weight4",
        "nRounds",
        "currentRound",
        "history",
    }
)
_COMMON_REQUIRED = {"currentPlayerName", "opponent1", "strategy1", "strategy2"}
REQUIRED_PLACEHOLDERS: Dict[GameKind, frozenset] = {
    GameKind.ZERO_SUM: frozenset(_COMMON_REQUIRED | {"weight1", "weight2"}),
    GameKind.PRISONERS_DILEMMA: frozenset(
        _COMMON_REQUIRED
        | {"weight1", "weight2", "weight3", "weight4", "currentRound", "history"}
    ),
}
HISTORY_PLACEHOLDERS = frozenset({"round", "own", "other", "opponent1"})


def _placeholders(text: str) -> set:
    return set(PLACEHOLDER_RE.findall(text))


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    language_tag: str
    game_kind: GameKind
    body: str
    strategy_labels: Tuple[str, str]
    history_item_format: str
    empty_history_marker: str

    @model_validator(mode="after")
    def check_template(self) -> "PromptTemplate":
        flags = {m.group("flag") for m in SECTION_RE.finditer(self.body)}
        unknown_flags = flags - KNOWN_FLAGS
        if unknown_flags:
            raise ValueError(f"unknown section flag(s): {sorted(unknown_flags)}")

        unsectioned = SECTION_RE.sub("", self.body)
        if STRAY_SECTION_RE.search(unsectioned):
            raise ValueError("conditional sections must be unnested, one per line")

        referenced = _placeholders(unsectioned) | {
            name
            for m in SECTION_RE.finditer(self.body)
            for name in _placeholders(m.group("body"))
        }
        unknown = referenced - KNOWN_PLACEHOLDERS
        if unknown:
            raise ValueError(f"unknown placeholder(s): {sorted(unknown)}")
        missing = REQUIRED_PLACEHOLDERS[self.game_kind] - referenced
        if missing:
            raise ValueError(
                f"{self.game_kind.value} template lacks placeholder(s): "
                f"{sorted(missing)}"
            )

        stray = _placeholders(self.history_item_format) - HISTORY_PLACEHOLDERS
        if stray:
            raise ValueError(f"unknown history placeholder(s): {sorted(stray)}")
        first, second = self.strategy_labels
        if not first.strip() or not second.strip():
            raise ValueError("strategy labels must be nonempty")
        if normalize_label(first) == normalize_label(second):
            raise ValueError("strategy labels must be distinct")
        return self


class PlaceholderMap(BaseModel):
    """Rendered values for one prompt; None means not supplied."""

    model_config = ConfigDict(frozen=True)

    currentPlayerName: Optional[str] = None
    opponent1: Optional[str] = None
    personality: Optional[str] = None
    opponentPersonality: Optional[str] = None
    strategy1: Optional[str] = None
    strategy2: Optional[str] = None
    weight1: Optional[str] = None
    weight2: Optional[str] = None
    weight3: Optional[str] = None
    weight4: Optional[str] = None
    nRounds: Optional[str] = None
    currentRound: Optional[str] = None
    history: Optional[str] = None

    def to_values(self) -> Dict[str, str]:
        return self.model_dump(exclude_none=True)


def render(
    template: PromptTemplate,
    values: Union[PlaceholderMap, Mapping[str, str]],
    flags: AbstractSet[str] = frozenset(),
) -> str:
    """Resolve conditional sections, then substitute placeholders in one pass."""
    if isinstance(values, PlaceholderMap):
        values = values.to_values()

    def resolve_section(match: re.Match) -> str:
        if match.group("flag") in flags:
            return match.group("body") + match.group("nl")
        return ""

    text = SECTION_RE.sub(resolve_section, template.body)

    for name in PLACEHOLDER_RE.findall(text):
        if name not in values:
            raise MissingPlaceholderError(name)

    return PLACEHOLDER_RE.sub(lambda m: str(values[m.group(1)]), text)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def format_weight(weight: float) -> str:
    """Shortest round-tripping text for a weight, without a trailing .0."""
    text = repr(float(weight))
    return text[:-2] if text.endswith(".0") else text


def format_history(
    t: Transcript,
    template: PromptTemplate,
    perspective: int,
    opponent_name: Optional[str] = None,
) -> str:
    """List past rounds from one agent's point of view, own choice first."""
    if not t.rounds:
        return template.empty_history_marker
    if opponent_name is None:
        opponent_name = "Agent2" if perspective == 1 else "Agent1"
    labels = template.strategy_labels
    lines = []
    for record in t.rounds:
        own, other = record.choice_p1, record.choice_p2
        if perspective == 2:
            own, other = other, own
        lines.append(
            template.history_item_format.format(
                round=record.round_index,
                own=labels[own.index],
                other=labels[other.index],
                opponent1=opponent_name,
            )
        )
    return "\n".join(lines)


class LanguageEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    language_tag: str
    strategies: Dict[GameKind, Tuple[str, str]]
    history_item_format: str
    empty_history_marker: str
    traits: Dict[str, str] = {}


class LanguagePack(BaseModel):
    """Validated templates keyed by language tag, then game kind."""

    model_config = ConfigDict(frozen=True)

    path: str
    templates: Dict[str, Dict[GameKind, PromptTemplate]]
    traits: Dict[str, Dict[str, str]]

    @property
    def languages(self) -> List[str]:
        return list(self.templates)

    def template(self, language: str, kind: GameKind) -> PromptTemplate:
        try:
            return self.templates[language][kind]
        except KeyError:
            raise LanguagePackError(
                f"no {kind.value} template for language {language!r} in {self.path}"
            ) from None

    def trait(self, language: str, trait: str) -> str:
        """Localized personality word; unknown traits render as given."""
        return self.traits.get(language, {}).get(trait, trait)


def load_language_pack(path: Union[str, Path]) -> LanguagePack:
    """Load <pack>/languages.json and every <pack>/<game_kind>/<tag>.txt."""
    root = Path(path)
    index_path = root / "languages.json"
    try:
        raw_entries = json.loads(index_path.read_text(encoding="utf-8"))
        entries = [LanguageEntry(**entry) for entry in raw_entries]
    except FileNotFoundError:
        raise LanguagePackError(f"missing {index_path}") from None
    except (json.JSONDecodeError, TypeError, ValidationError) as e:
        raise LanguagePackError(f"unparseable {index_path}: {e}") from None

    seen = set()
    for entry in entries:
        if entry.language_tag in seen:
            raise LanguagePackError(f"duplicate language {entry.language_tag!r}")
        if not pycountry.languages.get(alpha_2=entry.language_tag):
            raise LanguagePackError(f"invalid language tag {entry.language_tag!r}")
        seen.add(entry.language_tag)

    kinds = [kind for kind in GameKind if (root / kind.value).is_dir()]
    if not kinds:
        raise LanguagePackError(f"no game template directories in {root}")

    templates: Dict[str, Dict[GameKind, PromptTemplate]] = {}
    for entry in entries:
        templates[entry.language_tag] = {}
        for kind in kinds:
            file_path = root / kind.value / f"{entry.language_tag}.txt"
            if kind not in entry.strategies:
                raise LanguagePackError(
                    f"{entry.language_tag}: no strategy labels for {kind.value}"
                )
            try:
                body = file_path.read_text(encoding="utf-8")
                templates[entry.language_tag][kind] = PromptTemplate(
                    language_tag=entry.language_tag,
                    game_kind=kind,
                    body=body,
                    strategy_labels=entry.strategies[kind],
                    history_item_format=entry.history_item_format,
                    empty_history_marker=entry.empty_history_marker,
                )
            except FileNotFoundError:
                raise LanguagePackError(f"missing template {file_path}") from None
            except (UnicodeDecodeError, ValidationError) as e:
                raise LanguagePackError(f"{file_path}: {e}") from None

    for kind in kinds:
        for file_path in (root / kind.value).glob("*.txt"):
            if file_path.stem not in templates:
                raise LanguagePackError(f"template for undeclared language {file_path}")

    logger.info(
        f"Loaded language pack {root}: {len(templates)} languages, "
        f"{len(kinds)} game kinds"
    )
    return LanguagePack(
        path=str(root),
        templates=templates,
        traits={entry.language_tag: dict(entry.traits) for entry in entries},
    )


def build_prompt(
    game: GameSpec,
    pack: LanguagePack,
    language: str,
    transcript: Transcript,
    own_index: int,
    names: Tuple[str, str],
    personalities: Tuple[Optional[str], Optional[str]],
    rounds_known: bool,
    opponent_personality_known: bool,
) -> str:
    """Render the prompt one agent sees at the start of the next round.

    Only finished rounds reach the history, so the opponent's choice for the
    round being decided never appears.
    """
    template = pack.template(language, game.kind)
    own, other = (0, 1) if own_index == 1 else (1, 0)
    weights = {f"weight{i}": format_weight(w) for i, w in enumerate(game.weights, 1)}

    flags = set()
    values: Dict[str, str] = {
        "currentPlayerName": names[own],
        "opponent1": names[other],
        "strategy1": template.strategy_labels[0],
        "strategy2": template.strategy_labels[1],
        "currentRound": str(len(transcript.rounds) + 1),
        "history": format_history(transcript, template, own_index, names[other]),
        **weights,
    }
    if personalities[own]:
        flags.add("intro")
        values["personality"] = pack.trait(language, personalities[own])
    if opponent_personality_known and personalities[other]:
        flags.add("opponentIntro")
        values["opponentPersonality"] = pack.trait(language, personalities[other])
    if rounds_known:
        flags.add("gameLength")
        values["nRounds"] = str(game.n_rounds)

    return render(template, PlaceholderMap(**values), flags)
