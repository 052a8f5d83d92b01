"""Map free-text lexemes onto target lexicon classes through the LLM."""

from __future__ import annotations

import enum
import json
import logging
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from .core import AlignedTriplet, Lexicon, LexiconKind, RawTriplet, normalize_lexeme
from .llm import LLMClient, MockMiss
from .parsing import ParseStats, parse_alignment
from .prompts import (
    Chain,
    PromptTemplate,
    PromptTooLong,
    approx_tokens,
    default_template,
    render_alignment_prompt,
)

log = logging.getLogger(__name__)

DEFAULT_GROUP_SIZE = 200


class Provenance(str, enum.Enum):
    LLM = "llm"
    KB_BASELINE = "kb_baseline"
    EXACT_MATCH = "exact_match"
    MANUAL = "manual"


class AlignmentTable:
    """Write-once memo of lexeme -> class index (or None) for one lexicon.

    ``resolve`` runs the supplied function at most once per lexeme, even
    when several threads ask for the same lexeme at the same time. With a
    ``path`` every new entry is appended to a JSONL file as it is written.
    """

    def __init__(self, lexicon_id: str = "", path: Optional[Union[str, Path]] = None):
        self.lexicon_id = lexicon_id
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, Optional[int]] = {}
        self.provenance: dict[str, Provenance] = {}
        self._pending: dict[str, Future] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load(self.path)

    def _load(self, path: Path) -> None:
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("skipping unreadable alignment line in %s", path)
                    continue
                self.entries[row["lexeme"]] = row["index"]
                self.provenance[row["lexeme"]] = Provenance(row["provenance"])

    @classmethod
    def load(cls, path: Union[str, Path], lexicon_id: str = "") -> "AlignmentTable":
        return cls(lexicon_id, path)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, lexeme: str) -> bool:
        return lexeme in self.entries

    def lookup(self, lexeme: str) -> tuple[bool, Optional[int]]:
        with self._lock:
            if lexeme in self.entries:
                return True, self.entries[lexeme]
        return False, None

    def put(self, lexeme: str, index: Optional[int], provenance: Provenance) -> None:
        with self._lock:
            self._put_locked(lexeme, index, Provenance(provenance))

    def _put_locked(self, lexeme: str, index: Optional[int], provenance: Provenance) -> None:
        if lexeme in self.entries:
            if self.entries[lexeme] != index:
                raise ValueError(f"alignment for {lexeme!r} already written as {self.entries[lexeme]}")
            return
        self.entries[lexeme] = index
        self.provenance[lexeme] = provenance
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                row = {"lexeme": lexeme, "index": index, "provenance": provenance.value}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    def resolve(
        self, lexeme: str, compute: Callable[[], tuple[Optional[int], Provenance]]
    ) -> Optional[int]:
        with self._lock:
            if lexeme in self.entries:
                return self.entries[lexeme]
            fut = self._pending.get(lexeme)
            owner = fut is None
            if owner:
                fut = Future()
                self._pending[lexeme] = fut
        if not owner:
            return fut.result()
        try:
            index, provenance = compute()
            with self._lock:
                self._put_locked(lexeme, index, provenance)
            fut.set_result(index)
            return index
        except BaseException as exc:
            fut.set_exception(exc)
            raise
        finally:
            with self._lock:
                self._pending.pop(lexeme, None)

    def rows(self) -> list[dict]:
        return [
            {"lexeme": k, "index": v, "provenance": self.provenance[k].value}
            for k, v in sorted(self.entries.items())
        ]


def _template_for(lexicon: Lexicon, template: Optional[PromptTemplate]) -> PromptTemplate:
    if template is not None:
        return template
    chain = Chain.ALIGN_ENTITY if lexicon.kind is LexiconKind.ENTITY else Chain.ALIGN_PREDICATE
    return default_template(chain)


def _ask(
    lexeme: str,
    lexicon: Lexicon,
    client: LLMClient,
    template: PromptTemplate,
    stats: Optional[ParseStats],
) -> Optional[int]:
    prompt = render_alignment_prompt(template, lexeme, lexicon, max_tokens=client.max_prompt_tokens)
    record = client.complete(prompt)
    return parse_alignment(record.response, lexicon, stats)


def align_lexeme(
    lexeme: str,
    lexicon: Lexicon,
    client: LLMClient,
    table: Optional[AlignmentTable] = None,
    *,
    template: Optional[PromptTemplate] = None,
    stats: Optional[ParseStats] = None,
) -> Optional[int]:
    """Align one normalized lexeme, consulting and filling ``table``.

    Exact class names resolve without a backend call.
    """
    if not lexeme or normalize_lexeme(lexeme) != lexeme:
        raise ValueError(f"lexeme {lexeme!r} is not normalized")
    template = _template_for(lexicon, template)

    def compute() -> tuple[Optional[int], Provenance]:
        exact = lexicon.index_of(lexeme)
        if exact is not None:
            return exact, Provenance.EXACT_MATCH
        return _ask(lexeme, lexicon, client, template, stats), Provenance.LLM

    if table is None:
        return compute()[0]
    return table.resolve(lexeme, compute)


def partition_lexicon(lexicon: Lexicon, group_size: int = DEFAULT_GROUP_SIZE) -> list[list[int]]:
    """Split 1-based indices into consecutive groups of at most ``group_size``."""
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    n = len(lexicon)
    return [list(range(start, min(start + group_size, n + 1))) for start in range(1, n + 1, group_size)]


def align_hierarchical(
    lexeme: str,
    large_lexicon: Lexicon,
    client: LLMClient,
    group_size: int = DEFAULT_GROUP_SIZE,
    table: Optional[AlignmentTable] = None,
    *,
    template: Optional[PromptTemplate] = None,
    stats: Optional[ParseStats] = None,
) -> Optional[int]:
    """Align against a lexicon too large for one prompt.

    Each group is asked separately; if several groups propose a class the
    candidates (in group order, renumbered 1..k) are asked once more.
    """
    if not lexeme or normalize_lexeme(lexeme) != lexeme:
        raise ValueError(f"lexeme {lexeme!r} is not normalized")
    groups = partition_lexicon(large_lexicon, group_size)
    template = _template_for(large_lexicon, template)

    def compute() -> tuple[Optional[int], Provenance]:
        exact = large_lexicon.index_of(lexeme)
        if exact is not None:
            return exact, Provenance.EXACT_MATCH
        candidates: list[int] = []
        for group in groups:
            sub = large_lexicon.subset(group)
            local = _ask(lexeme, sub, client, template, stats)
            if local is not None and group[local - 1] not in candidates:
                candidates.append(group[local - 1])
        if not candidates:
            return None, Provenance.LLM
        if len(candidates) == 1:
            return candidates[0], Provenance.LLM
        final = _ask(lexeme, large_lexicon.subset(candidates), client, template, stats)
        return (candidates[final - 1] if final is not None else None), Provenance.LLM

    if table is None:
        return compute()[0]
    return table.resolve(lexeme, compute)


def needs_hierarchy(lexicon: Lexicon, template: PromptTemplate, max_tokens: Optional[int]) -> bool:
    """True when the flat alignment prompt would exceed ``max_tokens``."""
    if max_tokens is None:
        return False
    longest = "x" * 64
    try:
        prompt = render_alignment_prompt(template, longest, lexicon, max_tokens=None)
    except PromptTooLong:  # pragma: no cover - max_tokens=None never raises
        return True
    return approx_tokens(prompt) > max_tokens


@dataclass
class LexiconAligner:
    """Aligns lexemes of one kind, choosing flat or hierarchical prompting.

    ``hierarchical`` is True, False, or ``"auto"`` (hierarchical only when
    the flat prompt would not fit the client's token budget).
    """

    lexicon: Lexicon
    client: LLMClient
    table: AlignmentTable = field(default_factory=AlignmentTable)
    template: Optional[PromptTemplate] = None
    hierarchical: Union[bool, str] = "auto"
    group_size: int = DEFAULT_GROUP_SIZE
    stats: ParseStats = field(default_factory=ParseStats)

    def __post_init__(self) -> None:
        self.template = _template_for(self.lexicon, self.template)
        if self.hierarchical == "auto":
            self.hierarchical = needs_hierarchy(self.lexicon, self.template, self.client.max_prompt_tokens)

    def __call__(self, lexeme: str) -> Optional[int]:
        if self.hierarchical:
            return align_hierarchical(
                lexeme, self.lexicon, self.client, self.group_size, self.table,
                template=self.template, stats=self.stats,
            )
        return align_lexeme(lexeme, self.lexicon, self.client, self.table, template=self.template, stats=self.stats)


@dataclass
class AlignmentErrors:
    """Lexemes whose alignment failed in ``skip`` mode, by kind."""

    failed: dict[str, list[str]] = field(default_factory=lambda: {"entity": [], "predicate": []})

    def __len__(self) -> int:
        return sum(len(v) for v in self.failed.values())


def _align_many(
    lexemes: Sequence[str],
    align: Callable[[str], Optional[int]],
    workers: int,
    on_error: str,
    failed: list[str],
) -> dict[str, Optional[int]]:
    def one(lexeme: str) -> tuple[str, Optional[int], Optional[BaseException]]:
        try:
            return lexeme, align(lexeme), None
        except MockMiss as exc:
            if on_error == "raise":
                raise
            return lexeme, None, exc

    if workers > 1 and len(lexemes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, lexemes))
    else:
        results = [one(x) for x in lexemes]
    out: dict[str, Optional[int]] = {}
    for lexeme, index, err in results:
        if err is not None:
            log.warning("alignment of %r failed: %s", lexeme, err)
            failed.append(lexeme)
        out[lexeme] = index
    return out


def align_triplets(
    raw: Iterable[RawTriplet],
    entity_aligner: Union[LexiconAligner, Callable[[str], Optional[int]]],
    predicate_aligner: Union[LexiconAligner, Callable[[str], Optional[int]]],
    *,
    workers: int = 1,
    on_error: str = "raise",
    errors: Optional[AlignmentErrors] = None,
) -> list[AlignedTriplet]:
    """Annotate each raw triplet with class indices, preserving order.

    Each distinct lexeme is aligned once. With ``on_error="skip"`` a lexeme
    whose mock response is missing aligns to None and is reported in
    ``errors`` rather than aborting; other backend errors always propagate.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    raw = list(raw)
    errors = errors if errors is not None else AlignmentErrors()
    entity_lexemes = list(dict.fromkeys(x for t in raw for x in (t.subject, t.object)))
    predicate_lexemes = list(dict.fromkeys(t.predicate for t in raw))
    ent = _align_many(entity_lexemes, entity_aligner, workers, on_error, errors.failed["entity"])
    pred = _align_many(predicate_lexemes, predicate_aligner, workers, on_error, errors.failed["predicate"])
    return [AlignedTriplet(ent[t.subject], pred[t.predicate], ent[t.object], t) for t in raw]


def make_aligners(
    entities: Lexicon,
    predicates: Lexicon,
    client: LLMClient,
    *,
    entity_table: Optional[AlignmentTable] = None,
    predicate_table: Optional[AlignmentTable] = None,
    entity_template: Optional[PromptTemplate] = None,
    predicate_template: Optional[PromptTemplate] = None,
    hierarchical: Union[bool, str] = "auto",
    group_size: int = DEFAULT_GROUP_SIZE,
    stats: Optional[ParseStats] = None,
) -> tuple[LexiconAligner, LexiconAligner]:
    if entities.kind is not LexiconKind.ENTITY or predicates.kind is not LexiconKind.PREDICATE:
        raise ValueError("expected an entity lexicon and a predicate lexicon")
    stats = stats if stats is not None else ParseStats()
    return (
        LexiconAligner(entities, client, entity_table or AlignmentTable(entities.name), entity_template,
                       hierarchical, group_size, stats),
        LexiconAligner(predicates, client, predicate_table or AlignmentTable(predicates.name), predicate_template,
                       hierarchical, group_size, stats),
    )
