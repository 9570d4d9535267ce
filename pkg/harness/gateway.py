"""Decision requests to chat-completion providers and to the in-process mock."""

import json
import logging
import os
import time
import unicodedata
from threading import BoundedSemaphore, Lock
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import httpx
import shortuuid
from cachetools import TTLCache
from pydantic import BaseModel, ConfigDict

from config import config
from errors import (
    ConfigError,
    ParseFailure,
    ProviderTransportError,
    ProviderUnavailableError,
    SequenceExhaustedError,
    UnparseableDecisionError,
)
from schemas import Decision, PolicyView, ProviderConfig, ScriptedPolicy, StrategyId
from strategies import decide

logger = logging.getLogger(__name__)

__all__ = [
    "Gateway",
    "HttpChatProvider",
    "MockProvider",
    "RateLimiter",
    "RequestContext",
    "RequestLog",
    "mock_provider",
    "parse_choice",
    "request_decision",
    "resolve_api_key",
]

RATE_WINDOW_SECONDS = 60.0
# Quotes and sentence punctuation a model may wrap its one-word answer in
STRIP_CHARS = " \t\r\n\"'`.。“”‘’«»"


class RequestContext(BaseModel):
    """Where a request sits in the experiment; also feeds mock policies."""

    model_config = ConfigDict(frozen=True)

    instance_id: str = ""
    model_id: str = ""
    round_index: int = 1
    agent: int = 1
    seed: int = 0
    view: Optional[PolicyView] = None


class Provider(Protocol):
    provider_id: str

    def complete(
        self, prompt: str, labels: Tuple[str, str], context: RequestContext
    ) -> str:
        ...


def _normalize(text: str) -> str:
    text = unicodedata.normalize("NFC", text).strip(STRIP_CHARS)
    return " ".join(text.split()).casefold()


def parse_choice(reply: str, labels: Sequence[str]) -> StrategyId:
    """Map a free-text reply onto one of two labels.

    Exact match after normalization wins; otherwise the reply must contain
    exactly one of the labels.
    """
    normalized_labels = [_normalize(label) for label in labels]
    if len(normalized_labels) != 2 or normalized_labels[0] == normalized_labels[1]:
        raise ValueError("strategy labels must be two distinct values")

    text = _normalize(reply)
    for index, label in enumerate(normalized_labels):
        if text == label:
            return StrategyId(index=index, label=labels[index])

    found = [i for i, label in enumerate(normalized_labels) if label and label in text]
    if len(found) == 1:
        return StrategyId(index=found[0], label=labels[found[0]])
    if found:
        raise ParseFailure(f"ambiguous reply {reply!r}: both labels present")
    raise ParseFailure(f"no label in reply {reply!r}")


def resolve_api_key(cfg: ProviderConfig) -> Optional[str]:
    """Read the provider's key from the environment, if it names one."""
    if not cfg.api_key_env:
        return None
    key = os.environ.get(cfg.api_key_env)
    if not key:
        raise ConfigError(
            f"missing API key for {cfg.provider_id}: "
            f"environment variable {cfg.api_key_env} is not set"
        )
    return key


class HttpChatProvider:
    """OpenAI-compatible chat completion over HTTP, one user message per call."""

    measures_latency = True

    def __init__(
        self,
        cfg: ProviderConfig,
        client: Optional[httpx.Client] = None,
        api_key: Optional[str] = None,
    ):
        self.cfg = cfg
        self.provider_id = cfg.provider_id
        self.api_key = api_key if api_key is not None else resolve_api_key(cfg)
        self._owns_client = client is None
        self.client = client or httpx.Client()

    def payload(self, prompt: str) -> dict:
        body = {
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
        }
        if self.cfg.top_k is not None:
            body["top_k"] = self.cfg.top_k
        return body

    def complete(
        self, prompt: str, labels: Tuple[str, str], context: RequestContext
    ) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.client.post(
                self.cfg.endpoint_url,
                json=self.payload(prompt),
                headers=headers,
                timeout=self.cfg.timeout_ms / 1000,
            )
            response.raise_for_status()
            content = response.json()["choices"][0]["message"]["content"]
        except httpx.HTTPError as e:
            raise ProviderTransportError(f"{type(e).__name__}: {e}") from e
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise ProviderTransportError(f"malformed response body: {e}") from e

        # Refusals and content filters can come back as a null message
        if content is None:
            return ""
        if not isinstance(content, str):
            raise ProviderTransportError(
                f"malformed response body: content is {type(content).__name__}"
            )
        return content

    def close(self) -> None:
        if self._owns_client:
            self.client.close()


class MockProvider:
    """Deterministic provider answering with a policy's label or a fixed reply list."""

    # Recorded latency is always 0
    measures_latency = False

    def __init__(
        self,
        policy: Optional[ScriptedPolicy] = None,
        replies: Optional[List[str]] = None,
        provider_id: str = "mock",
    ):
        if policy is None and replies is None:
            raise ValueError("mock provider needs a policy or a reply list")
        self.provider_id = provider_id
        self.policy = policy
        self.replies = list(replies) if replies is not None else None
        self._cursor = 0
        self._lock = Lock()

    def complete(
        self, prompt: str, labels: Tuple[str, str], context: RequestContext
    ) -> str:
        if self.replies is not None:
            with self._lock:
                if self._cursor >= len(self.replies):
                    raise SequenceExhaustedError(len(self.replies))
                reply = self.replies[self._cursor]
                self._cursor += 1
            return reply
        if context.view is None:
            raise ValueError("policy-driven mock needs a policy view")
        return labels[decide(self.policy, context.view, context.seed).index]


def mock_provider(policy_or_replies) -> MockProvider:
    if isinstance(policy_or_replies, ScriptedPolicy):
        return MockProvider(policy=policy_or_replies)
    return MockProvider(replies=list(policy_or_replies))


class RateLimiter:
    """Sliding 60-second window; one TTL cache entry per admitted request."""

    def __init__(
        self,
        rate_limit: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        window: float = RATE_WINDOW_SECONDS,
    ):
        self.rate_limit = rate_limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._admitted = TTLCache(maxsize=rate_limit, ttl=window, timer=clock)
        self._lock = Lock()

    def in_window(self) -> int:
        with self._lock:
            self._admitted.expire()
            return len(self._admitted)

    def acquire(self) -> None:
        while True:
            with self._lock:
                self._admitted.expire()
                now = self._clock()
                if len(self._admitted) < self.rate_limit:
                    self._admitted[shortuuid.uuid()] = now
                    return
                wait = min(self._admitted.values()) + self.window - now
            logger.debug(
                f"Rate limit of {self.rate_limit}/min reached, waiting {wait:.3f}s"
            )
            self._sleep(max(wait, 0.0))


class RequestLog:
    """Append-only JSONL audit of every provider attempt, secrets redacted."""

    def __init__(self, path):
        self.path = path
        self._secrets: List[str] = []
        self._lock = Lock()

    def add_secret(self, secret: Optional[str]) -> None:
        if secret and secret not in self._secrets:
            self._secrets.append(secret)

    def redact(self, text: str) -> str:
        for secret in self._secrets:
            text = text.replace(secret, "***")
        return text

    def write(self, **fields) -> None:
        line = self.redact(json.dumps(fields, sort_keys=True, ensure_ascii=False))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")


class Gateway:
    """Per-provider rate limiting, concurrency caps, retries and audit logging."""

    def __init__(
        self,
        request_log: Optional[RequestLog] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        backoff_seconds: Optional[float] = None,
    ):
        self.request_log = request_log
        self._clock = clock
        self._sleep = sleep
        self.backoff_seconds = (
            config.BACKOFF_SECONDS if backoff_seconds is None else backoff_seconds
        )
        self._limiters: Dict[str, RateLimiter] = {}
        self._semaphores: Dict[str, BoundedSemaphore] = {}
        self._lock = Lock()

    def limiter(self, cfg: ProviderConfig) -> RateLimiter:
        with self._lock:
            if cfg.provider_id not in self._limiters:
                self._limiters[cfg.provider_id] = RateLimiter(
                    cfg.rate_limit, clock=self._clock, sleep=self._sleep
                )
                self._semaphores[cfg.provider_id] = BoundedSemaphore(
                    cfg.max_concurrency
                )
            return self._limiters[cfg.provider_id]

    def _log(
        self, cfg: ProviderConfig, provider, context: RequestContext, **fields
    ) -> None:
        if self.request_log is None:
            return
        self.request_log.add_secret(getattr(provider, "api_key", None))
        self.request_log.write(
            provider_id=cfg.provider_id,
            model_id=cfg.model_id or context.model_id,
            instance_id=context.instance_id,
            round=context.round_index,
            agent=context.agent,
            **fields,
        )

    def request_decision(
        self,
        cfg: ProviderConfig,
        provider: Provider,
        prompt: str,
        labels: Tuple[str, str],
        context: Optional[RequestContext] = None,
    ) -> Decision:
        """Ask for a choice, re-sending the identical prompt on failure.

        Transport and parse failures each use one of max_retries + 1 attempts;
        transport failures are followed by exponential backoff.
        """
        if not prompt:
            raise ValueError("prompt must be nonempty")
        context = context or RequestContext()
        limiter = self.limiter(cfg)
        semaphore = self._semaphores[cfg.provider_id]

        replies: List[str] = []
        transport_failures = 0
        last_failure: Optional[str] = None
        last_error = ""
        max_attempts = cfg.max_retries + 1
        for attempt in range(1, max_attempts + 1):
            limiter.acquire()
            started = self._clock()
            try:
                with semaphore:
                    reply = provider.complete(prompt, labels, context)
            except ProviderTransportError as e:
                last_failure = "transport"
                last_error = str(e)
                self._log(
                    cfg, provider, context, attempt=attempt, prompt=prompt, error=str(e)
                )
                logger.warning(
                    f"{cfg.provider_id} attempt {attempt}/{max_attempts} failed: {e}"
                )
                if attempt < max_attempts:
                    self._sleep(self.backoff_seconds * 2**transport_failures)
                transport_failures += 1
                continue
            latency_ms = 0
            if getattr(provider, "measures_latency", True):
                latency_ms = max(int((self._clock() - started) * 1000), 0)
            replies.append(reply)
            self._log(
                cfg,
                provider,
                context,
                attempt=attempt,
                prompt=prompt,
                reply=reply,
                latency_ms=latency_ms,
            )
            try:
                chosen = parse_choice(reply, labels)
            except ParseFailure as e:
                last_failure = "parse"
                logger.warning(
                    f"{cfg.provider_id} attempt {attempt}/{max_attempts}: {e}"
                )
                continue
            return Decision(
                chosen=chosen,
                raw_reply=reply,
                attempts=attempt,
                latency_ms=latency_ms,
                provider_id=cfg.provider_id,
            )

        if last_failure == "transport":
            raise ProviderUnavailableError(cfg.provider_id, max_attempts, last_error)
        raise UnparseableDecisionError(cfg.provider_id, replies, max_attempts)


_default_gateway = Gateway()


def request_decision(
    cfg: ProviderConfig,
    prompt: str,
    labels: Tuple[str, str],
    provider: Optional[Provider] = None,
    context: Optional[RequestContext] = None,
) -> Decision:
    """Module-level entry point; builds an HTTP provider when none is given."""
    if provider is not None:
        return _default_gateway.request_decision(cfg, provider, prompt, labels, context)
    http = HttpChatProvider(cfg)
    try:
        return _default_gateway.request_decision(cfg, http, prompt, labels, context)
    finally:
        http.close()
