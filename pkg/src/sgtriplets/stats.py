"""Density, predicate histograms and long-tail diagnostics for triplet datasets."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Iterable, Optional, Sequence

from .core import AlignedTriplet, Lexicon, LexiconKind, TripletDataset


def display_density(value: float, signed: bool = False) -> str:
    """One-decimal, half-up rendering used in reports ("2.4")."""
    text = str(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))
    return f"+{text}" if signed and not text.startswith("-") else text


def head_tail_ratio(histogram: Sequence[int]) -> Optional[float]:
    """Most frequent class count over the median class count; None if the median is 0."""
    if not histogram:
        return None
    median = statistics.median(histogram)
    if median == 0:
        return None
    return max(histogram) / median


@dataclass(frozen=True)
class CorpusStats:
    lexicon: Lexicon
    triplet_count: int
    image_count: int
    predicate_histogram: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.image_count <= 0:
            raise ValueError("image_count must be positive")
        if len(self.predicate_histogram) != len(self.lexicon):
            raise ValueError("histogram must cover every lexicon class")
        if sum(self.predicate_histogram) != self.triplet_count:
            raise ValueError("histogram total differs from triplet_count")

    @property
    def density(self) -> float:
        return self.triplet_count / self.image_count

    @property
    def zero_frequency_classes(self) -> list[str]:
        return [name for name, n in zip(self.lexicon.classes, self.predicate_histogram) if n == 0]

    @property
    def zero_frequency_count(self) -> int:
        return sum(1 for n in self.predicate_histogram if n == 0)

    @property
    def head_tail_ratio(self) -> Optional[float]:
        return head_tail_ratio(self.predicate_histogram)

    def counts(self) -> dict[str, int]:
        return dict(zip(self.lexicon.classes, self.predicate_histogram))

    def to_dict(self) -> dict[str, Any]:
        return {
            "lexicon": self.lexicon.name,
            "triplet_count": self.triplet_count,
            "image_count": self.image_count,
            "density": self.density,
            "density_display": display_density(self.density),
            "zero_frequency_count": self.zero_frequency_count,
            "zero_frequency_classes": self.zero_frequency_classes,
            "head_tail_ratio": self.head_tail_ratio,
            "predicate_histogram": self.counts(),
        }

    def histogram_csv(self, order: str = "lexicon") -> str:
        """``class,count`` rows in lexicon order or by descending count."""
        rows = list(zip(self.lexicon.classes, self.predicate_histogram))
        if order == "frequency":
            rows = _by_frequency(rows)
        elif order != "lexicon":
            raise ValueError("order must be 'lexicon' or 'frequency'")
        return _csv([("class", "count"), *rows])


def _by_frequency(rows: list[tuple[str, int]]) -> list[tuple[str, int]]:
    # stable: equal counts keep lexicon order
    return sorted(rows, key=lambda r: -r[1])


def _csv(rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


@dataclass
class StatsAccumulator:
    """Partial aggregate over triplets; merge is associative and commutative."""

    lexicon: Lexicon
    triplet_count: int = 0
    image_count: int = 0
    histogram: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.lexicon.kind is not LexiconKind.PREDICATE:
            raise ValueError("stats need a predicate lexicon")
        if not self.histogram:
            self.histogram = [0] * len(self.lexicon)

    def add(self, triplets: Iterable[AlignedTriplet], image_count: int = 0) -> "StatsAccumulator":
        n = len(self.lexicon)
        for t in triplets:
            p = t.predicate_class
            if p is None or not 1 <= p <= n:
                raise ValueError(f"predicate index {p!r} outside the lexicon")
            self.histogram[p - 1] += 1
            self.triplet_count += 1
        self.image_count += image_count
        return self

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if other.lexicon.classes != self.lexicon.classes:
            raise ValueError("cannot merge statistics over different lexicons")
        return StatsAccumulator(
            self.lexicon,
            self.triplet_count + other.triplet_count,
            self.image_count + other.image_count,
            [a + b for a, b in zip(self.histogram, other.histogram)],
        )

    def result(self) -> CorpusStats:
        return CorpusStats(self.lexicon, self.triplet_count, self.image_count, tuple(self.histogram))


def compute_stats(dataset: TripletDataset, predicate_lexicon: Lexicon) -> CorpusStats:
    if dataset.image_count <= 0:
        raise ValueError("dataset.image_count must be positive")
    return StatsAccumulator(predicate_lexicon).add(dataset.triplets, dataset.image_count).result()


@dataclass(frozen=True)
class StatsComparison:
    """Deltas are ``b - a``; rows are ordered by descending count in ``a``."""

    a: CorpusStats
    b: CorpusStats

    def __post_init__(self) -> None:
        if self.a.lexicon.classes != self.b.lexicon.classes:
            raise ValueError("compared statistics use different predicate lexicons")

    @property
    def density_delta(self) -> float:
        return self.b.density - self.a.density

    @property
    def zero_frequency_delta(self) -> int:
        return self.b.zero_frequency_count - self.a.zero_frequency_count

    @property
    def class_deltas(self) -> dict[str, int]:
        return {c: y - x for c, x, y in zip(self.a.lexicon.classes, self.a.predicate_histogram, self.b.predicate_histogram)}

    def rows(self) -> list[tuple[str, int, int, int]]:
        order = _by_frequency(list(zip(self.a.lexicon.classes, self.a.predicate_histogram)))
        b = self.b.counts()
        return [(c, n, b[c], b[c] - n) for c, n in order]

    def to_csv(self) -> str:
        return _csv([("class", "count_a", "count_b", "delta"), *self.rows()])

    def to_dict(self) -> dict[str, Any]:
        return {
            "density_a": self.a.density,
            "density_b": self.b.density,
            "density_delta": self.density_delta,
            "zero_frequency_a": self.a.zero_frequency_count,
            "zero_frequency_b": self.b.zero_frequency_count,
            "zero_frequency_delta": self.zero_frequency_delta,
            "class_deltas": self.class_deltas,
        }


def compare_stats(a: CorpusStats, b: CorpusStats) -> StatsComparison:
    return StatsComparison(a, b)
