"""Value types shared by every stage: lexicons, captions, triplets, datasets."""

from __future__ import annotations

import enum
import re
import string
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Optional

_ARTICLES = ("a", "an", "the")
_EDGE_CHARS = string.punctuation + string.whitespace + "“”‘’«»…"


def _normalize_once(text: str) -> str:
    text = " ".join(text.lower().split())
    text = text.strip(_EDGE_CHARS)
    head, _, rest = text.partition(" ")
    if head in _ARTICLES and rest:
        text = rest
    elif head in _ARTICLES:
        text = ""
    return text


def normalize_lexeme(raw: str) -> str:
    """Lowercase, collapse whitespace, strip edge punctuation and leading articles.

    Returns ``""`` when nothing is left; callers are expected to reject that.
    Plural forms are left alone.

    >>> normalize_lexeme("A beautiful Woman ")
    'beautiful woman'
    >>> normalize_lexeme("the floor,")
    'floor'
    """
    current = raw
    while True:
        nxt = _normalize_once(current)
        if nxt == current:
            return nxt
        current = nxt


class LexiconKind(str, enum.Enum):
    ENTITY = "entity"
    PREDICATE = "predicate"


class Source(str, enum.Enum):
    LLM_ORIGINAL = "llm_original"
    LLM_PARAPHRASED = "llm_paraphrased"
    BASELINE_PARSER = "baseline_parser"


# "12." inside a name would be read back as the start of the next entry
_MARKER = re.compile(r"(?:^|\s)\d+\.")


def _is_clean_name(name: str) -> bool:
    return bool(name) and name == " ".join(name.split()) and name == name.lower() and not _MARKER.search(name)


@dataclass(frozen=True)
class Lexicon:
    """Ordered target classes with 1-based indices; index 0 is the ``None`` answer."""

    kind: LexiconKind
    classes: tuple[str, ...]
    name: str = ""
    _lookup: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LexiconKind(self.kind))
        object.__setattr__(self, "classes", tuple(self.classes))
        lookup: dict[str, int] = {}
        for i, cls in enumerate(self.classes, start=1):
            if not isinstance(cls, str) or not _is_clean_name(cls):
                raise ValueError(f"lexicon class {cls!r} must be non-empty, lowercase, trimmed and free of \"N.\" markers")
            if cls in lookup:
                raise ValueError(f"duplicate lexicon class {cls!r}")
            lookup[cls] = i
        object.__setattr__(self, "_lookup", lookup)

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[str]:
        return iter(self.classes)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and normalize_lexeme(name) in self._lookup

    def index_of(self, name: str) -> Optional[int]:
        """1-based index of ``name`` after normalization, or None."""
        return self._lookup.get(normalize_lexeme(name))

    def name_of(self, index: int) -> str:
        if not 1 <= index <= len(self.classes):
            raise IndexError(f"index {index} outside 1..{len(self.classes)}")
        return self.classes[index - 1]

    def is_valid_index(self, index: Optional[int]) -> bool:
        return index is not None and 1 <= index <= len(self.classes)

    def enumerate_text(self) -> str:
        """Space-separated ``1.name 2.name ...`` listing, in index order."""
        return " ".join(f"{i}.{c}" for i, c in enumerate(self.classes, start=1))

    @classmethod
    def from_enumeration(cls, text: str, kind: LexiconKind | str, name: str = "") -> "Lexicon":
        """Inverse of :meth:`enumerate_text`.

        Entries are split at ``<n>.`` markers whose numbers run 1, 2, 3, ...
        in order, so class names may themselves contain digits or spaces.
        """
        text = text.strip()
        classes: list[str] = []
        pos = 0
        expected = 1
        marker = f"{expected}."
        if not text.startswith(marker):
            raise ValueError("enumeration must start with '1.'")
        pos = len(marker)
        while True:
            nxt_marker = f" {expected + 1}."
            nxt = text.find(nxt_marker, pos)
            if nxt < 0:
                classes.append(text[pos:])
                break
            classes.append(text[pos:nxt])
            pos = nxt + len(nxt_marker)
            expected += 1
        return cls(kind=kind, classes=tuple(classes), name=name)

    def subset(self, indices: Iterable[int], name: str = "") -> "Lexicon":
        return Lexicon(self.kind, tuple(self.name_of(i) for i in indices), name or self.name)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "name": self.name, "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Lexicon":
        return cls(kind=data["kind"], classes=tuple(data["classes"]), name=data.get("name", ""))


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    caption_id: str
    text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "caption_id", str(self.caption_id))
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError(f"caption {self.image_id}/{self.caption_id} has empty text")

    def to_dict(self) -> dict[str, Any]:
        return {"image_id": self.image_id, "caption_id": self.caption_id, "text": self.text}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CaptionRecord":
        return cls(data["image_id"], data["caption_id"], data["text"])


@dataclass(frozen=True)
class RawTriplet:
    """Free-text ``<subject, predicate, object>`` as emitted by an extractor."""

    subject: str
    predicate: str
    object: str
    source: Source
    image_id: str = ""
    caption_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", Source(self.source))
        for part in ("subject", "predicate", "object"):
            value = getattr(self, part)
            if not isinstance(value, str) or not value or normalize_lexeme(value) != value:
                raise ValueError(f"triplet {part} {value!r} is not a normalized lexeme")

    def format(self) -> str:
        return f"⟨{self.subject}, {self.predicate}, {self.object}⟩"

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject": self.subject,
            "predicate": self.predicate,
            "object": self.object,
            "source": self.source.value,
            "image_id": self.image_id,
            "caption_id": self.caption_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RawTriplet":
        return cls(
            data["subject"],
            data["predicate"],
            data["object"],
            data["source"],
            data.get("image_id", ""),
            data.get("caption_id", ""),
        )


@dataclass(frozen=True)
class AlignedTriplet:
    """A raw triplet annotated with lexicon indices (None where alignment failed)."""

    subject_class: Optional[int]
    predicate_class: Optional[int]
    object_class: Optional[int]
    raw: RawTriplet

    @property
    def image_id(self) -> str:
        return self.raw.image_id

    @property
    def is_complete(self) -> bool:
        return None not in (self.subject_class, self.predicate_class, self.object_class)

    def check(self, entities: Lexicon, predicates: Lexicon) -> None:
        """Raise ValueError if a present index falls outside its lexicon."""
        for value, lex, part in (
            (self.subject_class, entities, "subject"),
            (self.predicate_class, predicates, "predicate"),
            (self.object_class, entities, "object"),
        ):
            if value is not None and not lex.is_valid_index(value):
                raise ValueError(f"{part} index {value} outside lexicon {lex.name or lex.kind.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject_class": self.subject_class,
            "predicate_class": self.predicate_class,
            "object_class": self.object_class,
            "raw": self.raw.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AlignedTriplet":
        return cls(
            data["subject_class"],
            data["predicate_class"],
            data["object_class"],
            RawTriplet.from_dict(data["raw"]),
        )


@dataclass(frozen=True)
class TripletDataset:
    """Final unlocalized triplets plus the image count of the source corpus."""

    triplets: tuple[AlignedTriplet, ...]
    image_count: int
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "triplets", tuple(self.triplets))
        incomplete = [t for t in self.triplets if not t.is_complete]
        if incomplete:
            raise ValueError(f"{len(incomplete)} triplets are not fully aligned")
        distinct = len({t.image_id for t in self.triplets})
        if self.image_count < distinct:
            raise ValueError(f"image_count {self.image_count} < {distinct} distinct images among triplets")

    def __len__(self) -> int:
        return len(self.triplets)

    def to_dict(self) -> dict[str, Any]:
        return {
            "triplets": [t.to_dict() for t in self.triplets],
            "image_count": self.image_count,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TripletDataset":
        return cls(
            tuple(AlignedTriplet.from_dict(t) for t in data["triplets"]),
            data["image_count"],
            data.get("metadata", {}),
        )
