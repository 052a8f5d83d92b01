from __future__ import annotations

import pytest

from sgtriplets.baseline import SynonymKB, kb_align, parse_kb, participle, rule_parse
from sgtriplets.core import CaptionRecord, Source


def spo(caption):
    return [(t.subject, t.predicate, t.object) for t in rule_parse(CaptionRecord("1", "1", caption))]


@pytest.mark.parametrize(
    "verb, form",
    [("sits", "sitting"), ("rides", "riding"), ("carried", "carrying"), ("watches", "watching"),
     ("parked", "parking"), ("placed", "placing"), ("topped", "topping"), ("covered", "covering"),
     ("lies", "lying"), ("laid", "laying"), ("ate", "eating"), ("ran", "running"), ("stops", "stopping"),
     ("holding", "holding")],
)
def test_participle(verb, form):
    assert participle(verb) == form


def test_verb_plus_preposition_collapses():
    assert spo("an elephant lying on the beach") == [("elephant", "on", "beach")]
    assert spo("A cat sitting on top of a car") == [("cat", "on", "car")]


def test_transitive_verb_kept():
    assert spo("a man riding a horse") == [("man", "riding", "horse")]
    assert spo("a woman holds an umbrella") == [("woman", "holding", "umbrella")]


def test_chained_and_coordinated_clauses():
    assert spo("a man riding a horse on a dirt road") == [("man", "riding", "horse"), ("horse", "on", "road")]
    assert spo("a boy holding a kite and running on the beach") == [
        ("boy", "holding", "kite"), ("boy", "on", "beach")]


def test_no_pattern_gives_empty():
    assert spo("a sunny day") == []
    assert spo("clouds") == []


def test_outputs_are_single_token_predicates():
    for t in rule_parse(CaptionRecord("9", "9", "two dogs playing with a ball next to a bench")):
        assert " " not in t.predicate and t.source is Source.BASELINE_PARSER and t.image_id == "9"


def test_kb_parse_and_align(entities, predicates):
    kb = parse_kb(["# comment", "Pigeon\tbird, dove", "stone\trock,pebble", "", "pup\tpuppy"])
    assert kb.related("pigeon") == frozenset({"bird", "dove"})
    assert kb_align("bird", entities, kb) == 12
    assert kb_align("pigeon", entities, kb) == 12
    assert kb_align("stone", entities, kb) == entities.index_of("rock")
    assert kb_align("pup", entities, kb) is None  # "puppy" is not a class
    assert kb_align("lying", predicates, kb) is None


def test_kb_prefers_lowest_index(entities):
    kb = SynonymKB({"fido": frozenset({"dog", "animal"})})
    assert kb_align("fido", entities, kb) == entities.index_of("animal")


def test_bundled_kb(kb, entities):
    assert kb_align("puppy", entities, kb) == entities.index_of("dog")
    assert "puppy" not in kb.related("puppy")
