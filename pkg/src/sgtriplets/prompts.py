"""Prompt templates for triplet extraction and lexicon alignment.

A prompt is three blocks in order: task description, in-context examples,
actual question. Templates are plain-text files with named sections::

    [TASK]
    ...
    [EXAMPLES]          (optional one-line lead-in for the examples)
    ...
    [EXAMPLE.q]         (repeatable, paired with the following [EXAMPLE.a])
    ...
    [EXAMPLE.a]
    ...
    [QUESTION]
    ... {INPUT} ...

Alignment task descriptions use ``{LEXICON_SIZE}`` and ``{LEXICON}``; the
combined template uses the ``ENTITY_``/``PREDICATE_`` prefixed variants.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .core import CaptionRecord, Lexicon, LexiconKind
from .io import builtin_path

INPUT_SLOT = "{INPUT}"
DEFAULT_MAX_PROMPT_TOKENS = 4096


class Chain(str, enum.Enum):
    EXTRACT_ORIGINAL = "extract_original"
    EXTRACT_PARAPHRASE = "extract_paraphrase"
    ALIGN_ENTITY = "align_entity"
    ALIGN_PREDICATE = "align_predicate"
    COMBINED = "combined"


EXTRACTION_CHAINS = frozenset({Chain.EXTRACT_ORIGINAL, Chain.EXTRACT_PARAPHRASE, Chain.COMBINED})
ALIGNMENT_CHAINS = {Chain.ALIGN_ENTITY: LexiconKind.ENTITY, Chain.ALIGN_PREDICATE: LexiconKind.PREDICATE}


class TemplateError(ValueError):
    pass


class PromptTooLong(ValueError):
    """Rendered prompt exceeds the configured token budget."""

    def __init__(self, tokens: int, limit: int):
        super().__init__(f"prompt needs ~{tokens} tokens, limit is {limit}")
        self.tokens = tokens
        self.limit = limit


def approx_tokens(text: str) -> int:
    """Rough token count, ceil(characters / 4)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class PromptTemplate:
    chain: Chain
    task_description: str
    in_context_examples: tuple[tuple[str, str], ...]
    question_pattern: str
    examples_intro: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "chain", Chain(self.chain))
        object.__setattr__(self, "in_context_examples", tuple(tuple(e) for e in self.in_context_examples))
        if self.question_pattern.count(INPUT_SLOT) != 1:
            raise TemplateError(f"question pattern must contain {INPUT_SLOT} exactly once")

    def render(self, value: str, slots: Optional[dict[str, str]] = None) -> str:
        if not value:
            raise ValueError("insertion value must be non-empty")
        task = self.task_description
        for key, text in (slots or {}).items():
            task = task.replace("{" + key + "}", text)
        parts = [task]
        if self.examples_intro:
            parts.append(self.examples_intro)
        parts.extend(f"Question: {q}\nAnswer: {a}" for q, a in self.in_context_examples)
        parts.append(self.question_pattern.replace(INPUT_SLOT, value))
        return "\n".join(parts)

    def to_text(self) -> str:
        lines = ["[TASK]", self.task_description]
        if self.examples_intro:
            lines += ["[EXAMPLES]", self.examples_intro]
        for q, a in self.in_context_examples:
            lines += ["[EXAMPLE.q]", q, "[EXAMPLE.a]", a]
        lines += ["[QUESTION]", self.question_pattern]
        return "\n".join(lines) + "\n"


_SECTIONS = ("[TASK]", "[EXAMPLES]", "[EXAMPLE.q]", "[EXAMPLE.a]", "[QUESTION]")


def parse_template(text: str, chain: Union[Chain, str]) -> PromptTemplate:
    blocks: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        if line.strip() in _SECTIONS:
            blocks.append((line.strip(), []))
        elif blocks:
            blocks[-1][1].append(line)
        elif line.strip():
            raise TemplateError(f"text before first section: {line!r}")

    task = intro = question = None
    examples: list[tuple[str, str]] = []
    pending_q: Optional[str] = None
    for name, body in blocks:
        content = "\n".join(body).strip("\n")
        if name == "[TASK]":
            task = content
        elif name == "[EXAMPLES]":
            intro = content
        elif name == "[EXAMPLE.q]":
            if pending_q is not None:
                raise TemplateError("[EXAMPLE.q] without a matching [EXAMPLE.a]")
            pending_q = content
        elif name == "[EXAMPLE.a]":
            if pending_q is None:
                raise TemplateError("[EXAMPLE.a] without a preceding [EXAMPLE.q]")
            examples.append((pending_q, content))
            pending_q = None
        else:
            question = content
    if pending_q is not None:
        raise TemplateError("dangling [EXAMPLE.q]")
    if task is None or question is None:
        raise TemplateError("template needs [TASK] and [QUESTION] sections")
    return PromptTemplate(Chain(chain), task, tuple(examples), question, intro or "")


def load_template(path: Union[str, Path], chain: Union[Chain, str]) -> PromptTemplate:
    return parse_template(Path(path).read_text(encoding="utf-8"), chain)


def default_template(chain: Union[Chain, str]) -> PromptTemplate:
    chain = Chain(chain)
    return load_template(builtin_path(f"templates/{chain.value}.txt"), chain)


def default_templates() -> dict[Chain, PromptTemplate]:
    return {chain: default_template(chain) for chain in Chain}


def _check_budget(prompt: str, max_tokens: Optional[int]) -> str:
    if max_tokens is not None:
        needed = approx_tokens(prompt)
        if needed > max_tokens:
            raise PromptTooLong(needed, max_tokens)
    return prompt


def lexicon_slots(lexicon: Lexicon, prefix: str = "") -> dict[str, str]:
    return {f"{prefix}LEXICON_SIZE": str(len(lexicon)), f"{prefix}LEXICON": lexicon.enumerate_text()}


def render_extraction_prompt(
    template: PromptTemplate,
    caption: CaptionRecord,
    *,
    entities: Optional[Lexicon] = None,
    predicates: Optional[Lexicon] = None,
    max_tokens: Optional[int] = DEFAULT_MAX_PROMPT_TOKENS,
) -> str:
    """Render a Chain-1 (or combined) prompt for one caption.

    The caption text is inserted verbatim. The combined chain additionally
    needs both lexicons.
    """
    if template.chain not in EXTRACTION_CHAINS:
        raise TemplateError(f"{template.chain.value} is not an extraction template")
    text = caption.text
    if not text.strip():
        raise ValueError("caption text is empty")
    slots: dict[str, str] = {}
    if template.chain is Chain.COMBINED:
        if entities is None or predicates is None:
            raise TemplateError("the combined template needs entity and predicate lexicons")
        if entities.kind is not LexiconKind.ENTITY or predicates.kind is not LexiconKind.PREDICATE:
            raise TemplateError("lexicon kinds do not match the combined template")
        slots.update(lexicon_slots(entities, "ENTITY_"))
        slots.update(lexicon_slots(predicates, "PREDICATE_"))
    return _check_budget(template.render(text, slots), max_tokens)


def render_alignment_prompt(
    template: PromptTemplate,
    lexeme: str,
    lexicon: Lexicon,
    *,
    max_tokens: Optional[int] = DEFAULT_MAX_PROMPT_TOKENS,
) -> str:
    kind = ALIGNMENT_CHAINS.get(template.chain)
    if kind is None:
        raise TemplateError(f"{template.chain.value} is not an alignment template")
    if lexicon.kind is not kind:
        raise TemplateError(f"{template.chain.value} template used with a {lexicon.kind.value} lexicon")
    if not lexeme:
        raise ValueError("lexeme is empty")
    return _check_budget(template.render(lexeme, lexicon_slots(lexicon)), max_tokens)
