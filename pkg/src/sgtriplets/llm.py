"""Completion backends with a persistent content-hash cache and cost accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Union

from .prompts import DEFAULT_MAX_PROMPT_TOKENS, PromptTooLong, approx_tokens

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"


class BackendUnavailable(RuntimeError):
    """Backend could not produce an answer, even after retries."""


class ReplayMiss(BackendUnavailable):
    """Replay mode was asked for a prompt that is not in the cache."""


class TransientBackendError(RuntimeError):
    """Retryable failure (timeouts, 429, 5xx)."""


class MockMiss(LookupError):
    """Mock fixture has no response for the prompt."""


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def make_cache_key(backend: str, model: str, prompt: str) -> str:
    payload = json.dumps([backend, model, prompt], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: Optional[int] = None


@dataclass(frozen=True)
class CompletionRecord:
    cache_key: str
    prompt: str
    response: str
    input_tokens: int
    output_tokens: int
    timestamp: float
    backend: str
    cached: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.backend not in ("http", "mock", "replay"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "cache_key": self.cache_key,
            "prompt": self.prompt,
            "response": self.response,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "timestamp": self.timestamp,
            "backend": self.backend,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CompletionRecord":
        return cls(
            data["cache_key"],
            data["prompt"],
            data["response"],
            int(data["input_tokens"]),
            int(data["output_tokens"]),
            float(data["timestamp"]),
            data["backend"],
        )


class Backend(Protocol):
    name: str
    model: str

    def generate(self, prompt: str, params: GenerationParams) -> tuple[str, int, int]:
        """Return ``(text, input_tokens, output_tokens)``."""
        ...


class MockBackend:
    """Answers from a fixture keyed by the SHA-256 of the prompt text.

    Token counts are approximated as ceil(characters / 4).
    """

    name = "mock"

    def __init__(self, responses: Mapping[str, str], model: str = DEFAULT_MODEL):
        self.responses = dict(responses)
        self.model = model
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path], model: str = DEFAULT_MODEL) -> "MockBackend":
        """Load a JSONL fixture of ``{"sha256": ..., "response": ...}`` rows."""
        responses = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    responses[row["sha256"]] = row["response"]
        return cls(responses, model)

    @classmethod
    def from_prompts(cls, mapping: Mapping[str, str], model: str = DEFAULT_MODEL) -> "MockBackend":
        return cls({prompt_hash(p): r for p, r in mapping.items()}, model)

    def generate(self, prompt: str, params: GenerationParams) -> tuple[str, int, int]:
        with self._lock:
            self.calls += 1
        try:
            text = self.responses[prompt_hash(prompt)]
        except KeyError:
            raise MockMiss(f"no mock response for prompt {prompt_hash(prompt)[:12]}") from None
        return text, approx_tokens(prompt), approx_tokens(text)


class ReplayBackend:
    """Cache-only backend: every call that reaches it is a miss."""

    name = "replay"

    def __init__(self, source: str, model: str = DEFAULT_MODEL):
        self.source = source
        self.model = model

    def generate(self, prompt: str, params: GenerationParams) -> tuple[str, int, int]:
        raise ReplayMiss(f"prompt {prompt_hash(prompt)[:12]} not cached and replay forbids backend calls")


class HttpBackend:
    """OpenAI-compatible chat-completions endpoint. The API key comes from the environment."""

    name = "http"

    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        model: str = DEFAULT_MODEL,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        transport: Any = None,
    ):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env, "").strip()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def generate(self, prompt: str, params: GenerationParams) -> tuple[str, int, int]:
        import httpx

        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        try:
            resp = self._client.post(self.endpoint, json=body)
        except (httpx.TimeoutException, httpx.NetworkError) as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransientBackendError(f"malformed completion payload: {exc}") from exc
        usage = data.get("usage") or {}
        return text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))

    def close(self) -> None:
        self._client.close()


class CompletionCache:
    """Append-only JSONL cache; on load the last record for a key wins."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, CompletionRecord] = {}
        self._lock = threading.Lock()
        self._torn_tail = False
        if self.path is not None and self.path.exists():
            text = self.path.read_text(encoding="utf-8")
            self._torn_tail = bool(text) and not text.endswith("\n")
            for lineno, line in enumerate(text.splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    rec = CompletionRecord.from_dict(json.loads(line))
                except (ValueError, KeyError) as exc:
                    # a torn final line from a killed run
                    log.warning("skipping unreadable cache line %s:%d (%s)", self.path, lineno, exc)
                    continue
                self._records[rec.cache_key] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> Optional[CompletionRecord]:
        with self._lock:
            return self._records.get(key)

    def put(self, record: CompletionRecord) -> None:
        with self._lock:
            if record.cache_key in self._records:
                return
            self._records[record.cache_key] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    if self._torn_tail:
                        fh.write("\n")
                        self._torn_tail = False
                    fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
                    fh.flush()


class LLMClient:
    """Cache-first completion client with retries and a bound on in-flight calls.

    Concurrent requests for the same cache key share one backend call.
    """

    def __init__(
        self,
        backend: Backend,
        cache: Optional[CompletionCache] = None,
        *,
        namespace: Optional[str] = None,
        params: GenerationParams = GenerationParams(),
        max_retries: int = 3,
        backoff: float = 0.5,
        concurrency: int = 4,
        max_prompt_tokens: Optional[int] = DEFAULT_MAX_PROMPT_TOKENS,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.time,
    ):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.backend = backend
        self.cache = cache if cache is not None else CompletionCache()
        # replay reads what another backend wrote, so it hashes under that name
        self.namespace = namespace or getattr(backend, "source", None) or backend.name
        self.params = params
        self.max_retries = max_retries
        self.backoff = backoff
        self.concurrency = concurrency
        self.max_prompt_tokens = max_prompt_tokens
        self._sleep = sleep
        self._clock = clock
        self._slots = threading.BoundedSemaphore(concurrency)
        self._inflight: dict[str, Future] = {}
        self._lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def __deepcopy__(self, memo: dict) -> "LLMClient":
        # shared resource; estimator cloning must not duplicate the cache or locks
        return self

    def cache_key(self, prompt: str) -> str:
        return make_cache_key(self.namespace, self.backend.model, prompt)

    def complete(self, prompt: str, params: Optional[GenerationParams] = None) -> CompletionRecord:
        if not prompt:
            raise ValueError("prompt is empty")
        if self.max_prompt_tokens is not None and approx_tokens(prompt) > self.max_prompt_tokens:
            raise PromptTooLong(approx_tokens(prompt), self.max_prompt_tokens)
        key = self.cache_key(prompt)
        hit = self.cache.get(key)
        if hit is not None:
            with self._lock:
                self.cache_hits += 1
            return replace(hit, cached=True)

        with self._lock:
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = Future()
                self._inflight[key] = fut
        if not owner:
            rec = fut.result()
            with self._lock:
                self.cache_hits += 1
            return replace(rec, cached=True)

        try:
            rec = self._call(key, prompt, params or self.params)
            self.cache.put(rec)
            fut.set_result(rec)
            return rec
        except BaseException as exc:
            fut.set_exception(exc)
            raise
        finally:
            with self._lock:
                self._inflight.pop(key, None)

    def _call(self, key: str, prompt: str, params: GenerationParams) -> CompletionRecord:
        attempt = 0
        while True:
            try:
                with self._slots:
                    with self._lock:
                        self.backend_calls += 1
                    text, n_in, n_out = self.backend.generate(prompt, params)
                return CompletionRecord(key, prompt, text, n_in, n_out, self._clock(), self.backend.name)
            except TransientBackendError as exc:
                attempt += 1
                if attempt > self.max_retries:
                    raise BackendUnavailable(f"gave up after {self.max_retries} retries: {exc}") from exc
                delay = self.backoff * (2 ** (attempt - 1))
                log.warning("transient backend error (%s); retry %d in %.2fs", exc, attempt, delay)
                self._sleep(delay)


@dataclass(frozen=True)
class CostModel:
    """Prices per 1,000 tokens. Defaults are gpt-3.5-turbo list prices."""

    input_price_per_1k: float = 0.0005
    output_price_per_1k: float = 0.0015

    def __post_init__(self) -> None:
        if self.input_price_per_1k < 0 or self.output_price_per_1k < 0:
            raise ValueError("prices must be non-negative")

    def cost(self, input_tokens: float, output_tokens: float) -> float:
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        total = _dec(input_tokens) * _dec(self.input_price_per_1k) + _dec(output_tokens) * _dec(self.output_price_per_1k)
        return float(total / 1000)


def _dec(value: float) -> Decimal:
    # via repr so 0.0005 stays 0.0005 and half-up display rounding is exact
    return Decimal(repr(value))


@dataclass(frozen=True)
class StepTokens:
    input_tokens: float
    output_tokens: float


@dataclass(frozen=True)
class CostReport:
    per_step: dict[str, float]
    total: float

    def to_dict(self) -> dict[str, Any]:
        return {"per_step": dict(self.per_step), "total": self.total}


def estimate_cost(
    usage: Union[Mapping[str, Iterable[CompletionRecord] | StepTokens | tuple[float, float]], Iterable[CompletionRecord]],
    model: CostModel = CostModel(),
) -> CostReport:
    """Cost per pipeline step and in total.

    ``usage`` maps step name to either completion records or aggregate
    ``(input_tokens, output_tokens)`` counts; a bare iterable of records is
    treated as a single step named ``"all"``.
    """
    if not isinstance(usage, Mapping):
        usage = {"all": list(usage)}
    per_step: dict[str, float] = {}
    for step, item in usage.items():
        if isinstance(item, StepTokens):
            n_in, n_out = item.input_tokens, item.output_tokens
        elif isinstance(item, tuple) and len(item) == 2 and not isinstance(item[0], CompletionRecord):
            n_in, n_out = item
        else:
            records = list(item)
            n_in = sum(r.input_tokens for r in records)
            n_out = sum(r.output_tokens for r in records)
        per_step[step] = model.cost(n_in, n_out)
    return CostReport(per_step, float(sum((_dec(v) for v in per_step.values()), Decimal(0))))


def format_usd(amount: float, places: int = 5) -> str:
    """``$0.00117``-style rendering with half-up rounding."""
    q = Decimal(1).scaleb(-places)
    return "$" + str(Decimal(repr(amount)).quantize(q, rounding=ROUND_HALF_UP))
