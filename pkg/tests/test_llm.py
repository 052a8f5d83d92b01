from __future__ import annotations

import json
import threading

import httpx
import pytest

from sgtriplets.llm import (
    BackendUnavailable,
    CompletionCache,
    CostModel,
    HttpBackend,
    LLMClient,
    MockBackend,
    MockMiss,
    ReplayBackend,
    ReplayMiss,
    StepTokens,
    estimate_cost,
    format_usd,
    make_cache_key,
    prompt_hash,
)
from sgtriplets.prompts import PromptTooLong

from oracles import cost_oracle

TABLE_TOKENS = [(520, 160), (890, 480), (1180, 110), (820, 110)]
TABLE_COSTS = ["$0.00050", "$0.00117", "$0.00076", "$0.00058"]


def test_cache_key_separates_backend_model_prompt():
    k = make_cache_key("mock", "m", "p")
    assert k != make_cache_key("http", "m", "p")
    assert k != make_cache_key("mock", "m2", "p")
    assert k != make_cache_key("mock", "m", "p ")
    assert k == make_cache_key("mock", "m", "p")


def test_mock_backend_hits_and_misses():
    backend = MockBackend.from_prompts({"hello": "world"})
    client = LLMClient(backend)
    rec = client.complete("hello")
    assert rec.response == "world" and rec.input_tokens == 2 and rec.output_tokens == 2
    with pytest.raises(MockMiss):
        client.complete("unknown")


def test_mock_fixture_file(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"sha256": prompt_hash("q"), "response": "a"}) + "\n")
    assert LLMClient(MockBackend.from_file(path)).complete("q").response == "a"


def test_cache_first_and_persistent(tmp_path):
    backend = MockBackend.from_prompts({"q": "a"})
    cache_path = tmp_path / "cache.jsonl"
    client = LLMClient(backend, CompletionCache(cache_path))
    first = client.complete("q")
    second = client.complete("q")
    assert backend.calls == 1 and client.cache_hits == 1
    assert second.cached and first == second

    replay = LLMClient(ReplayBackend("mock"), CompletionCache(cache_path))
    assert replay.complete("q").response == "a"
    assert replay.backend_calls == 0
    with pytest.raises(ReplayMiss):
        replay.complete("other")


def test_replay_under_wrong_namespace_misses(tmp_path):
    cache_path = tmp_path / "cache.jsonl"
    LLMClient(MockBackend.from_prompts({"q": "a"}), CompletionCache(cache_path)).complete("q")
    with pytest.raises(BackendUnavailable):
        LLMClient(ReplayBackend("http"), CompletionCache(cache_path)).complete("q")


def test_torn_cache_line_is_skipped_and_repaired(tmp_path):
    cache_path = tmp_path / "cache.jsonl"
    client = LLMClient(MockBackend.from_prompts({"q": "a", "r": "b"}), CompletionCache(cache_path))
    client.complete("q")
    with cache_path.open("a") as fh:
        fh.write('{"cache_key": "trunc')
    cache = CompletionCache(cache_path)
    assert len(cache) == 1
    LLMClient(MockBackend.from_prompts({"q": "a", "r": "b"}), cache).complete("r")
    assert len(CompletionCache(cache_path)) == 2


def test_prompt_budget_is_enforced_before_backend():
    backend = MockBackend.from_prompts({"x" * 100: "a"})
    with pytest.raises(PromptTooLong):
        LLMClient(backend, max_prompt_tokens=10).complete("x" * 100)
    assert backend.calls == 0


class FlakyBackend:
    name = "mock"
    model = "m"

    def __init__(self, failures, exc):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def generate(self, prompt, params):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc
        return "ok", 1, 1


def test_retries_with_exponential_backoff():
    from sgtriplets.llm import TransientBackendError

    delays = []
    backend = FlakyBackend(2, TransientBackendError("429"))
    client = LLMClient(backend, max_retries=3, backoff=0.5, sleep=delays.append)
    assert client.complete("p").response == "ok"
    assert delays == [0.5, 1.0]

    backend = FlakyBackend(10, TransientBackendError("503"))
    client = LLMClient(backend, max_retries=2, sleep=lambda s: None)
    with pytest.raises(BackendUnavailable):
        client.complete("p")
    assert backend.calls == 3


def test_concurrent_identical_prompts_share_one_call():
    gate = threading.Event()

    class Slow:
        name = "mock"
        model = "m"
        calls = 0

        def generate(self, prompt, params):
            Slow.calls += 1
            gate.wait(2)
            return "ok", 1, 1

    client = LLMClient(Slow(), concurrency=4)
    results = []
    threads = [threading.Thread(target=lambda: results.append(client.complete("same"))) for _ in range(6)]
    for t in threads:
        t.start()
    gate.set()
    for t in threads:
        t.join()
    assert Slow.calls == 1 and len(results) == 6


def test_concurrency_bound():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    class Counting:
        name = "mock"
        model = "m"

        def generate(self, prompt, params):
            with lock:
                state["now"] += 1
                state["peak"] = max(state["peak"], state["now"])
            threading.Event().wait(0.01)
            with lock:
                state["now"] -= 1
            return "ok", 1, 1

    client = LLMClient(Counting(), concurrency=2)
    threads = [threading.Thread(target=client.complete, args=(f"p{i}",)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2


def _http(handler, monkeypatch, key="sk-test"):
    monkeypatch.setenv("TEST_KEY", key)
    return HttpBackend("https://llm.invalid/v1/chat/completions", "gpt-3.5-turbo", "TEST_KEY",
                       transport=httpx.MockTransport(handler))


def test_http_backend_wire_format(monkeypatch):
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": "12.bird"}}],
                                         "usage": {"prompt_tokens": 900, "completion_tokens": 3}})

    client = LLMClient(_http(handler, monkeypatch))
    rec = client.complete("prompt text")
    assert rec.response == "12.bird" and (rec.input_tokens, rec.output_tokens) == (900, 3)
    assert seen["body"] == {"model": "gpt-3.5-turbo", "temperature": 0.0,
                            "messages": [{"role": "user", "content": "prompt text"}]}
    assert seen["auth"] == "Bearer sk-test"


def test_http_rate_limit_then_success(monkeypatch):
    codes = iter([429, 500, 200])

    def handler(request):
        code = next(codes)
        if code != 200:
            return httpx.Response(code)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}], "usage": {}})

    client = LLMClient(_http(handler, monkeypatch), sleep=lambda s: None)
    assert client.complete("p").response == "ok"
    assert client.backend_calls == 3


def test_http_client_error_is_not_retried(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    with pytest.raises(BackendUnavailable):
        LLMClient(_http(handler, monkeypatch), sleep=lambda s: None).complete("p")
    assert len(calls) == 1


def test_http_timeout_is_transient(monkeypatch):
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(BackendUnavailable):
        LLMClient(_http(handler, monkeypatch), max_retries=1, sleep=lambda s: None).complete("p")


@pytest.mark.parametrize("tokens, expected", list(zip(TABLE_TOKENS, TABLE_COSTS)))
def test_cost_table(tokens, expected):
    assert cost_oracle(*tokens) == expected
    assert format_usd(CostModel().cost(*tokens)) == expected


def test_estimate_cost_forms():
    rep = estimate_cost({"a": StepTokens(520, 160), "b": (890, 480)})
    assert format_usd(rep.per_step["a"]) == "$0.00050"
    assert abs(rep.total - (0.0005 + 0.001165)) < 1e-12
    assert estimate_cost({"z": (0, 0)}).total == 0.0
    with pytest.raises(ValueError):
        CostModel().cost(-1, 0)
