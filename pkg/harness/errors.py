"""Exception hierarchy for the harness.

Every error subclasses ValueError so callers that only care about bad input can
catch that, while the CLI maps specific classes to exit codes.
"""

from typing import List, Optional


class HarnessError(ValueError):
    """Base class for all harness errors."""


class GameValidationError(HarnessError):
    """A GameSpec failed validation; carries every violation found."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("invalid game: " + "; ".join(self.violations))


class TranscriptFullError(HarnessError):
    def __init__(self, n_rounds: int):
        super().__init__(f"transcript full ({n_rounds} rounds already played)")


class DegenerateRangeError(HarnessError):
    def __init__(self, value: float):
        super().__init__(f"degenerate range: min = max = {value}")


class DegenerateGameError(HarnessError):
    def __init__(self):
        super().__init__("degenerate game: indifference denominator is zero")


class DominanceError(HarnessError):
    def __init__(self):
        super().__init__("strict dominance present, use dominant_strategies")


class NotZeroSumError(HarnessError):
    def __init__(self, game_id: str):
        super().__init__(f"not zero-sum: {game_id}")


class SequenceExhaustedError(HarnessError):
    def __init__(self, length: int):
        super().__init__(f"sequence exhausted after {length} choices")


class TemplateError(HarnessError):
    """A prompt template is malformed or cannot be rendered."""


class MissingPlaceholderError(TemplateError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing placeholder: {name}")


class LanguagePackError(HarnessError):
    """A language pack failed to load or validate."""


class ParseFailure(HarnessError):
    """A reply could not be mapped to exactly one strategy label."""


class ProviderUnavailableError(HarnessError):
    def __init__(self, provider_id: str, attempts: int, cause: str = ""):
        self.provider_id = provider_id
        self.attempts = attempts
        detail = f": {cause}" if cause else ""
        super().__init__(
            f"provider unavailable: {provider_id} after {attempts} attempts{detail}"
        )


class ProviderTransportError(HarnessError):
    """One request to a provider failed below the reply level."""


class UnparseableDecisionError(HarnessError):
    def __init__(self, provider_id: str, replies: List[str], attempts: int = 0):
        self.provider_id = provider_id
        self.replies = list(replies)
        self.attempts = attempts or len(self.replies)
        super().__init__(
            f"unparseable decision from {provider_id} after {self.attempts} attempts"
        )


class ConfigError(HarnessError):
    """The experiment configuration is invalid; findings name each problem."""

    def __init__(self, message: str, findings: Optional[List[str]] = None):
        self.findings = list(findings) if findings else [message]
        super().__init__(message)


class StaleResultsError(HarnessError):
    def __init__(self, path: str):
        super().__init__(f"stale results directory: {path} holds another config")


class InsufficientDataError(HarnessError):
    """A metric precondition on the amount of data is not met."""


class NotApplicableError(HarnessError):
    """A metric does not apply to the given game (e.g. one-shot games)."""
