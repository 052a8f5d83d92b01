from __future__ import annotations

import json
import os

import pytest
from hypothesis import given, settings

from sgtriplets.core import AlignedTriplet, CaptionRecord, Lexicon, LexiconKind, RawTriplet, Source
from sgtriplets.io import load_corpus, read_jsonl
from sgtriplets.llm import BackendUnavailable, LLMClient, MockBackend, ReplayBackend
from sgtriplets.pipeline import (
    ConfigError,
    build_client,
    config_from_mapping,
    extract_all,
    filter_none,
    load_config,
    run,
    select_predicates,
    select_predicates_report,
)
from sgtriplets.prompts import Chain, default_template, render_extraction_prompt

from conftest import GOLDEN
from oracles import select_oracle
from strategies import corpora


def triplet(s, p, o, image="1", subj="man", pred="on", obj="beach"):
    return AlignedTriplet(s, p, o, RawTriplet(subj, pred, obj, Source.LLM_ORIGINAL, image))


# --- extract_all ----------------------------------------------------------------


def two_prompt_client(caption):
    prompts = {
        render_extraction_prompt(default_template(Chain.EXTRACT_ORIGINAL), caption):
            "The meaningful triplets are <man, on, beach> and <man, holding, kite>.",
        render_extraction_prompt(default_template(Chain.EXTRACT_PARAPHRASE), caption):
            "Step 2: <a, b, c>.\nThe meaningful triplets are <man, standing on, beach>, <man, flying, kite>, "
            "and <kite, in, sky>.",
    }
    return LLMClient(MockBackend.from_prompts(prompts))


def test_extract_concatenates_both_chains():
    cap = CaptionRecord("1", "1", "a man flying a kite on the beach")
    out = extract_all([cap], two_prompt_client(cap), use_paraphrase=True)
    assert len(out) == 5
    assert [t.source for t in out] == [Source.LLM_ORIGINAL] * 2 + [Source.LLM_PARAPHRASED] * 3


def test_extract_without_paraphrase():
    cap = CaptionRecord("1", "1", "a man flying a kite on the beach")
    out = extract_all([cap], two_prompt_client(cap), use_paraphrase=False)
    assert {t.source for t in out} == {Source.LLM_ORIGINAL}


def test_extract_skips_failed_captions():
    good = CaptionRecord("1", "1", "a man flying a kite on the beach")
    bad = CaptionRecord("2", "1", "a caption the mock has never seen")
    from sgtriplets.pipeline import ExtractionFailures

    failures = ExtractionFailures()
    out = extract_all([bad, good], two_prompt_client(good), failures=failures)
    assert len(out) == 5 and failures.captions == ["2/1"]


def test_extract_aborts_when_backend_unavailable():
    cap = CaptionRecord("1", "1", "x y z")
    with pytest.raises(BackendUnavailable):
        extract_all([cap], LLMClient(ReplayBackend("http")))
    with pytest.raises(ValueError):
        extract_all([], LLMClient(ReplayBackend("http")))


def test_extract_golden_fixture(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    captions, _ = load_corpus(cfg.path(cfg.corpus))
    out = extract_all(captions, build_client(cfg), workers=4)
    assert [t.to_dict() for t in out] == read_jsonl(GOLDEN / "fixture_run" / "raw_triplets.jsonl")


# --- filter_none ----------------------------------------------------------------


def test_filter_examples():
    kept, rep = filter_none([triplet(None, 31, 126), triplet(78, 31, 7)])
    assert kept == [triplet(78, 31, 7)]
    assert rep.by_component == {"subject": 1, "predicate": 0, "object": 0}
    kept, rep = filter_none([])
    assert kept == [] and rep.discarded == 0 and rep.input_count == 0


@settings(max_examples=200, deadline=None)
@given(corpora(allow_none=True))
def test_filter_soundness(data):
    _, items = data
    kept, rep = filter_none(items)
    assert kept == [t for t in items if None not in (t.subject_class, t.predicate_class, t.object_class)]
    assert rep.input_count - rep.kept == rep.discarded == len(items) - len(kept)
    assert sum(rep.by_pattern.values()) == rep.discarded
    assert sum(rep.by_component.values()) >= rep.discarded


# --- select_predicates ----------------------------------------------------------


def test_selection_prefers_rare_predicate():
    lex = Lexicon(LexiconKind.PREDICATE, ("on", "walking on"))
    background = [triplet(9, 1, 9, image=str(i), subj="cup", obj="desk") for i in range(2, 12)]
    group = [triplet(1, 1, 2), triplet(1, 2, 2, pred="walking on")]
    out = select_predicates(group + background, lex)
    assert triplet(1, 2, 2, pred="walking on") in out and triplet(1, 1, 2) not in out


def test_selection_tie_is_lexicographic():
    lex = Lexicon(LexiconKind.PREDICATE, ("covering", "covered in"))
    items = [triplet(1, 1, 2, image="1", pred="covering"), triplet(1, 2, 2, image="1", pred="covered in"),
             triplet(1, 1, 2, image="2", pred="covering"), triplet(1, 2, 2, image="3", pred="covered in")]
    out = select_predicates(items, lex)
    assert out[0].predicate_class == 2 and len(out) == 3


def test_selection_drops_duplicates_and_self_loops():
    items = [triplet(1, 1, 2), triplet(1, 1, 2), triplet(3, 1, 3, subj="cup", obj="cup"),
             triplet(3, 1, 3, subj="cup", obj="cups")]
    out, rep = select_predicates_report(items)
    assert rep.duplicates_dropped == 1 and rep.self_loops_dropped == 1
    assert out == [items[0], items[3]]


def test_selection_rejects_incomplete():
    with pytest.raises(ValueError):
        select_predicates([triplet(None, 1, 2)])


@settings(max_examples=200, deadline=None)
@given(corpora())
def test_selection_matches_oracle(data):
    lex, items = data
    names = {i: lex.name_of(i) for i in range(1, len(lex) + 1)}
    out = select_predicates(items, lex)
    assert out == select_oracle(items, names)
    keys = [(t.image_id, t.subject_class, t.object_class) for t in out]
    assert len(keys) == len(set(keys))


# --- config ---------------------------------------------------------------------


def test_config_errors(tmp_path, fixture_dir):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[llm\nbackend=")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")
    with pytest.raises(ConfigError):
        config_from_mapping({"llm": {"colour": "blue"}})
    with pytest.raises(ConfigError):
        config_from_mapping({"nope": {}})
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.backend = "quantum"
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.corpus = "absent.jsonl"
    with pytest.raises(ConfigError):
        run(cfg)


def test_http_backend_requires_key_env(fixture_dir, monkeypatch):
    monkeypatch.delenv("SGT_TEST_KEY", raising=False)
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.backend, cfg.api_key_env = "http", "SGT_TEST_KEY"
    with pytest.raises(ConfigError):
        cfg.validate()


def test_api_key_never_read_from_config():
    with pytest.raises(ConfigError, match="environment"):
        config_from_mapping({"llm": {"api_key": "sk-test"}})


def test_relative_paths_resolve_against_config(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    assert cfg.path(cfg.corpus) == fixture_dir / "captions.jsonl"
    assert cfg.path("builtin:vg50_predicates.txt").name == "vg50_predicates.txt"


# --- run ------------------------------------------------------------------------


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_run_matches_golden(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    result = run(cfg)
    assert read_bytes(fixture_dir / "triplets.jsonl") == read_bytes(GOLDEN / "fixture_run" / "llm_triplets.jsonl")
    assert read_bytes(fixture_dir / "report.json") == read_bytes(GOLDEN / "fixture_run" / "llm_report.json")
    counts = result.report["counts"]
    assert counts["post_selection"] <= counts["post_filter"] <= counts["aligned"] == counts["extracted"]


def test_baseline_matches_golden(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.backend = "baseline"
    result = run(cfg)
    assert read_bytes(fixture_dir / "triplets.jsonl") == read_bytes(GOLDEN / "fixture_run" / "baseline_triplets.jsonl")
    assert result.report["steps"] == {}
    assert result.backend_calls == 0


def test_warm_cache_and_replay_are_byte_identical(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.cache = "cache.jsonl"
    cold = run(cfg)
    first = (read_bytes(fixture_dir / "triplets.jsonl"), read_bytes(fixture_dir / "report.json"))
    warm = run(cfg)
    assert warm.backend_calls == 0 and cold.backend_calls > 0
    cfg.backend, cfg.replay_source = "replay", "mock"
    replay = run(cfg)
    assert replay.backend_calls == 0
    assert (read_bytes(fixture_dir / "triplets.jsonl"), read_bytes(fixture_dir / "report.json")) == first


def test_no_paraphrase_has_no_paraphrase_step(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.use_paraphrase = False
    report = run(cfg).report
    assert "extract_paraphrase" not in report["steps"]
    assert report["steps"]["extract_original"]["prompts"] == 12


def test_partial_run_on_missing_mock_entries(fixture_dir):
    rows = read_jsonl(fixture_dir / "mock_responses.jsonl")
    kept = [r for r in rows if not (r["chain"] == "extract_original" and r["input"].startswith("a cat"))
            and not (r["chain"] == "align_entity" and r["input"] == "pigeon")]
    with open(fixture_dir / "mock_responses.jsonl", "w") as fh:
        fh.writelines(json.dumps(r) + "\n" for r in kept)
    cfg = load_config(fixture_dir / "fixture.toml")
    result = run(cfg)
    assert result.partial
    assert result.report["failures"]["captions"] == ["6/601"]
    assert result.report["failures"]["entity_lexemes"] == ["pigeon"]


def test_empty_corpus(fixture_dir):
    (fixture_dir / "captions.jsonl").write_text("")
    result = run(load_config(fixture_dir / "fixture.toml"))
    assert len(result.dataset) == 0 and result.report["cost"]["total_usd"] == 0.0


class Crash(BaseException):
    pass


def test_resume_after_crash(fixture_dir):
    cfg = load_config(fixture_dir / "fixture.toml")
    cfg.checkpoint_dir = "ckpt"
    cfg.cache = "cache.jsonl"
    cfg.output, cfg.report = "ref.jsonl", "ref_report.json"
    # reference run in a separate cache
    ref_cfg = load_config(fixture_dir / "fixture.toml")
    ref_cfg.output, ref_cfg.report = "ref.jsonl", "ref_report.json"
    run(ref_cfg)

    client = build_client(cfg)
    inner = client.backend
    state = {"alignment_calls": 0}

    class Dying:
        name, model = inner.name, inner.model

        def generate(self, prompt, params):
            if "lexicon" in prompt.split("\n", 1)[0] or "lexeme" in prompt[-200:]:
                state["alignment_calls"] += 1
                if state["alignment_calls"] > 3:
                    raise Crash()
            return inner.generate(prompt, params)

    client.backend = Dying()
    cfg.output, cfg.report = "out.jsonl", "out_report.json"
    with pytest.raises(Crash):
        run(cfg, client)
    assert (fixture_dir / "ckpt" / "chain1.json").exists()
    assert not (fixture_dir / "out.jsonl").exists()

    backend = MockBackend.from_file(fixture_dir / "mock_responses.jsonl")
    resumed_client = build_client(cfg)
    resumed_client.backend = backend
    cfg.resume = True
    run(cfg, resumed_client)
    cached_keys = {json.loads(l)["prompt"] for l in open(fixture_dir / "cache.jsonl")}
    assert backend.calls == 49 - 24 - 3  # only alignment prompts that never completed
    assert read_bytes(fixture_dir / "out.jsonl") == read_bytes(fixture_dir / "ref.jsonl")
    assert read_bytes(fixture_dir / "out_report.json") == read_bytes(fixture_dir / "ref_report.json")
    assert len(cached_keys) == 49
