"""Build deterministic mock-LLM fixtures from a readable scenario file.

A scenario lists, per caption, the triplets the LLM is supposed to answer
with, and per lexeme the class it should align to. The builder renders the
exact prompts the pipeline will send and keys each answer by the prompt's
SHA-256, so the checked-in fixture stays in sync with the templates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .alignment import partition_lexicon
from .core import CaptionRecord, Lexicon, LexiconKind, normalize_lexeme
from .io import write_jsonl
from .llm import prompt_hash
from .prompts import Chain, PromptTemplate, default_template, render_alignment_prompt, render_extraction_prompt

FIXTURE_DIR = "fixture"


def _bracket(triplets: Sequence[Sequence[str]]) -> list[str]:
    return [f"<{s}, {p}, {o}>" for s, p, o in triplets]


def _join_final(items: list[str]) -> str:
    if len(items) <= 2:
        return " and ".join(items)
    return ", ".join(items[:-1]) + ", and " + items[-1]


def extraction_answer(triplets: Sequence[Sequence[str]], paraphrase: Optional[str] = None) -> str:
    """Answer text in the style of the in-context examples."""
    items = _bracket(triplets)
    final = f"The meaningful triplets are {_join_final(items)}." if items else "There are no meaningful triplets."
    if paraphrase is None:
        return final
    return "\n".join([
        "Step 1: The sentence can be paraphrased as:",
        paraphrase,
        "Step 2: Meaningful triplets, where the subject and object are the simple noun, "
        "extracted from the paraphrased sentence are:",
        ", ".join(items) + ".",
        final,
    ])


def alignment_answer(name: Optional[str], lexicon: Lexicon) -> str:
    if name is None:
        return "0.None"
    idx = lexicon.index_of(name)
    if idx is None:
        raise KeyError(f"{name!r} is not a class of lexicon {lexicon.name!r}")
    return f"{idx}.{name}"


@dataclass(frozen=True)
class FixtureEntry:
    chain: str
    input: str
    prompt: str
    response: str

    def row(self) -> dict[str, str]:
        return {"sha256": prompt_hash(self.prompt), "chain": self.chain, "input": self.input, "response": self.response}


def scenario_captions(scenario: Mapping[str, Any]) -> list[CaptionRecord]:
    return [CaptionRecord(str(c["image_id"]), str(c["caption_id"]), c["text"]) for c in scenario["captions"]]


def _lexemes(scenario: Mapping[str, Any]) -> tuple[list[str], list[str]]:
    ents: dict[str, None] = {}
    preds: dict[str, None] = {}
    for cap in scenario["captions"]:
        for s, p, o in [*cap.get("original", []), *cap.get("paraphrase_triplets", [])]:
            ents[normalize_lexeme(s)] = None
            ents[normalize_lexeme(o)] = None
            preds[normalize_lexeme(p)] = None
    return list(ents), list(preds)


def build_entries(
    scenario: Mapping[str, Any],
    entities: Lexicon,
    predicates: Lexicon,
    templates: Optional[Mapping[Chain, PromptTemplate]] = None,
    large_lexicon: Optional[Lexicon] = None,
    group_size: int = 200,
) -> list[FixtureEntry]:
    """Every prompt/answer pair the scenario implies.

    Raises KeyError when a lexeme that is not an exact class name has no
    alignment answer in the scenario.
    """
    templates = dict(templates or {})
    for chain in Chain:
        templates.setdefault(chain, default_template(chain))
    entries: list[FixtureEntry] = []

    for cap, record in zip(scenario["captions"], scenario_captions(scenario)):
        prompt = render_extraction_prompt(templates[Chain.EXTRACT_ORIGINAL], record)
        entries.append(FixtureEntry(Chain.EXTRACT_ORIGINAL.value, record.text, prompt,
                                    extraction_answer(cap.get("original", []))))
        if "paraphrase" in cap:
            prompt = render_extraction_prompt(templates[Chain.EXTRACT_PARAPHRASE], record)
            answer = extraction_answer(cap.get("paraphrase_triplets", []), cap["paraphrase"])
            entries.append(FixtureEntry(Chain.EXTRACT_PARAPHRASE.value, record.text, prompt, answer))

    ent_lexemes, pred_lexemes = _lexemes(scenario)
    plans = (
        (Chain.ALIGN_ENTITY, entities, ent_lexemes, scenario.get("entity_alignments", {})),
        (Chain.ALIGN_PREDICATE, predicates, pred_lexemes, scenario.get("predicate_alignments", {})),
    )
    for chain, lexicon, lexemes, answers in plans:
        extra = [x for x in answers if x not in lexemes]
        for lexeme in [*lexemes, *extra]:
            if lexicon.index_of(lexeme) is not None:
                continue  # exact matches never reach the backend
            if lexeme not in answers:
                raise KeyError(f"scenario has no {chain.value} answer for {lexeme!r}")
            prompt = render_alignment_prompt(templates[chain], lexeme, lexicon)
            entries.append(FixtureEntry(chain.value, lexeme, prompt, alignment_answer(answers[lexeme], lexicon)))

    hier = scenario.get("hierarchical")
    if hier and large_lexicon is not None:
        entries.extend(_hierarchical_entries(hier, large_lexicon, templates[Chain.ALIGN_ENTITY], group_size))
    return entries


def _hierarchical_entries(
    hier: Mapping[str, Any], lexicon: Lexicon, template: PromptTemplate, group_size: int
) -> list[FixtureEntry]:
    lexeme = normalize_lexeme(hier["lexeme"])
    wanted = [lexicon.index_of(c) for c in hier["candidates"]]
    if None in wanted:
        raise KeyError("hierarchical candidates must be classes of the large lexicon")
    out = []
    found: list[int] = []
    for group in partition_lexicon(lexicon, group_size):
        sub = lexicon.subset(group)
        hit = next((i for i in group if i in wanted), None)
        answer = "0.None" if hit is None else f"{group.index(hit) + 1}.{lexicon.name_of(hit)}"
        if hit is not None:
            found.append(hit)
        out.append(FixtureEntry("align_entity_group", lexeme, render_alignment_prompt(template, lexeme, sub), answer))
    if len(found) > 1:
        sub = lexicon.subset(found)
        out.append(FixtureEntry("align_entity_final", lexeme, render_alignment_prompt(template, lexeme, sub),
                                alignment_answer(hier["final"], sub)))
    return out


def write_fixture(entries: Iterable[FixtureEntry], path: Union[str, Path]) -> None:
    """Write fixture rows sorted by hash so regeneration is diff-stable."""
    rows = {e.row()["sha256"]: e.row() for e in entries}
    write_jsonl(path, [rows[k] for k in sorted(rows)])


def synthetic_large_lexicon(size: int = 1594, named: Optional[Mapping[int, str]] = None) -> Lexicon:
    """A large entity lexicon of placeholder classes with a few real names pinned."""
    named = dict(named or {})
    classes = [named.get(i, f"entity {i:04d}") for i in range(1, size + 1)]
    return Lexicon(LexiconKind.ENTITY, tuple(classes), f"synthetic{size}")


def load_scenario(path: Union[str, Path]) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_captions(scenario: Mapping[str, Any], path: Union[str, Path]) -> None:
    write_jsonl(path, [c.to_dict() for c in scenario_captions(scenario)])
