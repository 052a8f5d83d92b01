"""Turn free-text LLM answers into raw triplets and lexicon indices.

Parsing never raises on odd input; anything that cannot be used is
counted in a :class:`ParseStats` instead.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Optional

from .core import CaptionRecord, Lexicon, RawTriplet, Source, normalize_lexeme

FINAL_MARKER = "meaningful triplets are"
_OPEN = "⟨<"
_CLOSE = "⟩>"
_NUMBERED = re.compile(r"(?<![\w.])(\d+)\s*\.\s*")
_NONE_WORDS = frozenset({"none", "null", "n/a"})


@dataclass
class ParseStats:
    malformed_spans: int = 0
    unparseable_alignments: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, malformed: int = 0, unparseable: int = 0) -> None:
        with self._lock:
            self.malformed_spans += malformed
            self.unparseable_alignments += unparseable

    def as_dict(self) -> dict[str, int]:
        return {"malformed_spans": self.malformed_spans, "unparseable_alignments": self.unparseable_alignments}


def bracket_spans(text: str) -> tuple[list[str], int]:
    """Contents of every top-level angle-bracket span, plus a count of nested ones.

    Nested spans are dropped whole; an unclosed bracket ends scanning.
    """
    spans: list[str] = []
    nested = 0
    depth = 0
    start = 0
    poisoned = False
    for i, ch in enumerate(text):
        if ch in _OPEN:
            if depth == 0:
                start = i + 1
                poisoned = False
            else:
                poisoned = True
            depth += 1
        elif ch in _CLOSE and depth > 0:
            depth -= 1
            if depth == 0:
                if poisoned:
                    nested += 1
                else:
                    spans.append(text[start:i])
    return spans, nested


def _answer_region(response: str) -> str:
    idx = response.lower().rfind(FINAL_MARKER)
    if idx < 0:
        return response
    return response[idx + len(FINAL_MARKER):]


def parse_triplets(
    response: str,
    caption: Optional[CaptionRecord] = None,
    source: Source | str = Source.LLM_ORIGINAL,
    stats: Optional[ParseStats] = None,
) -> list[RawTriplet]:
    """Extract ``<subject, predicate, object>`` spans from an extraction answer.

    When the answer contains the closing "meaningful triplets are" sentence,
    only spans after its last occurrence count, so triplets listed in an
    intermediate step are not taken twice. Spans with the wrong arity or an
    empty component are skipped and counted as malformed; repeats within one
    response are dropped.
    """
    if not isinstance(response, str) or not response:
        return []
    spans, malformed = bracket_spans(_answer_region(response))
    image_id = caption.image_id if caption else ""
    caption_id = caption.caption_id if caption else ""
    seen: set[tuple[str, str, str]] = set()
    out: list[RawTriplet] = []
    for span in spans:
        parts = span.split(",")
        if len(parts) != 3:
            malformed += 1
            continue
        s, p, o = (normalize_lexeme(x) for x in parts)
        if not (s and p and o):
            malformed += 1
            continue
        if (s, p, o) in seen:
            continue
        seen.add((s, p, o))
        out.append(RawTriplet(s, p, o, Source(source), image_id, caption_id))
    if stats is not None and malformed:
        stats.add(malformed=malformed)
    return out


def _match_name(text: str, lexicon: Lexicon) -> Optional[int]:
    """Exact class match on ``text``, else on its longest leading word run."""
    words = normalize_lexeme(text).split()
    for end in range(len(words), 0, -1):
        idx = lexicon.index_of(" ".join(words[:end]))
        if idx is not None:
            return idx
    return None


def parse_alignment(response: str, lexicon: Lexicon, stats: Optional[ParseStats] = None) -> Optional[int]:
    """Resolve an alignment answer such as ``"29.near"`` to a 1-based index.

    ``0.None`` gives None. If the number and the name disagree the name wins
    when it is a real class, otherwise a valid number is kept. A bare name
    with no number is looked up directly.
    """
    if not isinstance(response, str):
        if stats is not None:
            stats.add(unparseable=1)
        return None
    text = response.strip()
    if text.lower().startswith("answer:"):
        text = text[len("answer:"):]
    m = _NUMBERED.search(text)
    if m is None:
        bare = normalize_lexeme(text.split("\n", 1)[0])
        if bare in _NONE_WORDS:
            return None
        idx = _match_name(bare, lexicon)
        if idx is None and stats is not None:
            stats.add(unparseable=1)
        return idx

    number = int(m.group(1))
    rest = text[m.end():].split("\n", 1)[0]
    nxt = _NUMBERED.search(rest)
    if nxt is not None:
        rest = rest[: nxt.start()]
    name = normalize_lexeme(rest)
    if name in _NONE_WORDS or (number == 0 and not name):
        return None
    by_name = _match_name(name, lexicon) if name else None
    if by_name is not None:
        return by_name
    if lexicon.is_valid_index(number):
        return number
    if stats is not None:
        stats.add(unparseable=1)
    return None
