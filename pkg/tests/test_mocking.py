from __future__ import annotations

import hashlib

import pytest

from sgtriplets.core import Lexicon, LexiconKind
from sgtriplets.mocking import (
    alignment_answer,
    build_entries,
    extraction_answer,
    load_scenario,
    synthetic_large_lexicon,
    write_captions,
    write_fixture,
)
from sgtriplets.parsing import parse_alignment, parse_triplets

from conftest import FIXTURE

PINNED = {137: "breakfast", 566: "food truck", 1021: "noodle"}


def test_fixture_regenerates_byte_identical(tmp_path, entities, predicates, large_entities):
    scenario = load_scenario(FIXTURE / "scenario.json")
    large = synthetic_large_lexicon(1594, PINNED)
    assert large.classes == large_entities.classes
    write_captions(scenario, tmp_path / "captions.jsonl")
    write_fixture(build_entries(scenario, entities, predicates, large_lexicon=large), tmp_path / "mock.jsonl")
    assert (tmp_path / "captions.jsonl").read_bytes() == (FIXTURE / "captions.jsonl").read_bytes()
    assert (tmp_path / "mock.jsonl").read_bytes() == (FIXTURE / "mock_responses.jsonl").read_bytes()


def test_fixture_rows_are_hash_keyed(tmp_path, entities, predicates):
    scenario = load_scenario(FIXTURE / "scenario.json")
    entries = build_entries(scenario, entities, predicates, large_lexicon=synthetic_large_lexicon(1594, PINNED))
    for e in entries:
        assert e.row()["sha256"] == hashlib.sha256(e.prompt.encode("utf-8")).hexdigest()


def test_answers_round_trip_through_parsers(predicates):
    text = extraction_answer([("man", "riding", "horse"), ("horse", "on", "road")], "A man rides a horse.")
    assert [(t.subject, t.predicate, t.object) for t in parse_triplets(text)] == [("man", "riding", "horse"), ("horse", "on", "road")]
    assert parse_alignment(alignment_answer("near", predicates), predicates) == 29
    assert parse_alignment(alignment_answer(None, predicates), predicates) is None


def test_missing_alignment_is_an_error(entities, predicates):
    scenario = load_scenario(FIXTURE / "scenario.json")
    del scenario["entity_alignments"]["pigeon"]
    with pytest.raises(KeyError):
        build_entries(scenario, entities, predicates, large_lexicon=synthetic_large_lexicon(1594, PINNED))


def test_synthetic_lexicon_shape():
    lex = synthetic_large_lexicon(10, {3: "noodle"})
    assert isinstance(lex, Lexicon) and lex.kind is LexiconKind.ENTITY
    assert len(lex) == 10 and lex.name_of(3) == "noodle"
