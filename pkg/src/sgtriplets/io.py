"""File formats: lexicons, caption corpora, triplet dataset JSONL."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from .core import (
    AlignedTriplet,
    CaptionRecord,
    Lexicon,
    LexiconKind,
    RawTriplet,
    Source,
    TripletDataset,
)

PathLike = Union[str, Path]
BUILTIN_PREFIX = "builtin:"


def builtin_path(name: str) -> Path:
    """Path of a file shipped under ``sgtriplets/data``."""
    return Path(str(resources.files("sgtriplets") / "data" / name))


def resolve_path(value: PathLike, base: Optional[Path] = None) -> Path:
    """Resolve ``builtin:`` names and paths relative to ``base``."""
    text = str(value)
    if text.startswith(BUILTIN_PREFIX):
        return builtin_path(text[len(BUILTIN_PREFIX):])
    path = Path(text).expanduser()
    if not path.is_absolute() and base is not None:
        path = base / path
    return path


def load_lexicon(path: PathLike, kind: Optional[LexiconKind | str] = None, name: str = "") -> Lexicon:
    """Read a lexicon from plain text (one class per line) or JSON."""
    path = resolve_path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        data = json.loads(text)
        lex = Lexicon.from_dict(data)
        if kind is not None and lex.kind != LexiconKind(kind):
            raise ValueError(f"{path}: lexicon kind {lex.kind.value}, expected {LexiconKind(kind).value}")
        return lex
    if kind is None:
        raise ValueError(f"{path}: plain-text lexicons need an explicit kind")
    classes = [line.strip() for line in text.splitlines()]
    while classes and not classes[-1]:
        classes.pop()
    return Lexicon(LexiconKind(kind), tuple(classes), name or path.stem)


def save_lexicon(lexicon: Lexicon, path: PathLike) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(lexicon.to_dict(), indent=2) + "\n", encoding="utf-8")
    else:
        path.write_text("".join(c + "\n" for c in lexicon.classes), encoding="utf-8")


def _check_unique(records: list[CaptionRecord], origin: str) -> list[CaptionRecord]:
    seen: set[tuple[str, str]] = set()
    for rec in records:
        key = (rec.image_id, rec.caption_id)
        if key in seen:
            raise ValueError(f"{origin}: duplicate caption {key}")
        seen.add(key)
    return records


def parse_coco_captions(data: dict[str, Any], origin: str = "<coco>") -> list[CaptionRecord]:
    """Captions from a COCO-caption annotation dict, in annotation order."""
    if "annotations" not in data:
        raise ValueError(f"{origin}: missing 'annotations'")
    records = [
        CaptionRecord(str(ann["image_id"]), str(ann["id"]), ann["caption"].strip())
        for ann in data["annotations"]
    ]
    return _check_unique(records, origin)


def count_coco_images(data: dict[str, Any]) -> Optional[int]:
    images = data.get("images")
    return len(images) if isinstance(images, list) else None


def load_corpus(path: PathLike) -> tuple[list[CaptionRecord], int]:
    """Load a caption corpus and the number of images it covers.

    Accepts COCO-caption JSON or JSONL with one caption record per line.
    For COCO files the image count comes from ``images`` when present.
    """
    path = resolve_path(path)
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if path.suffix.lower() == ".json" or (stripped.startswith("{") and '"annotations"' in stripped[:2000]):
        data = json.loads(text)
        records = parse_coco_captions(data, str(path))
        image_count = count_coco_images(data)
        if image_count is None:
            image_count = len({r.image_id for r in records})
        return records, max(image_count, len({r.image_id for r in records}))
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        records.append(CaptionRecord.from_dict(obj))
    _check_unique(records, str(path))
    return records, len({r.image_id for r in records})


def write_jsonl(path: PathLike, rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n")


def read_jsonl(path: PathLike) -> list[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def dataset_rows(dataset: TripletDataset, entities: Lexicon, predicates: Lexicon) -> list[dict[str, Any]]:
    return [
        {
            "image_id": t.image_id,
            "subject": entities.name_of(t.subject_class),
            "predicate": predicates.name_of(t.predicate_class),
            "object": entities.name_of(t.object_class),
            "subject_idx": t.subject_class,
            "predicate_idx": t.predicate_class,
            "object_idx": t.object_class,
            "source": t.raw.source.value,
        }
        for t in dataset.triplets
    ]


def write_dataset(dataset: TripletDataset, path: PathLike, entities: Lexicon, predicates: Lexicon) -> None:
    write_jsonl(path, dataset_rows(dataset, entities, predicates))


def read_dataset(path: PathLike, image_count: Optional[int] = None) -> TripletDataset:
    """Rebuild a dataset from its JSONL form.

    Raw lexemes are not stored in the file, so the reconstructed raw triplets
    carry the class names. ``image_count`` defaults to the distinct images seen.
    """
    rows = read_jsonl(resolve_path(path))
    triplets = []
    for row in rows:
        raw = RawTriplet(row["subject"], row["predicate"], row["object"], Source(row["source"]), str(row["image_id"]))
        triplets.append(AlignedTriplet(row["subject_idx"], row["predicate_idx"], row["object_idx"], raw))
    distinct = len({t.image_id for t in triplets})
    return TripletDataset(tuple(triplets), distinct if image_count is None else image_count)
