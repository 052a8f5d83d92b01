"""scikit-learn style wrappers so the stages compose in ``sklearn.pipeline.Pipeline``.

Inputs and outputs are Python lists of the core record types rather than
arrays. Hyperparameters are stored untouched in ``__init__``; everything
learned or produced during ``fit`` carries a trailing underscore.
"""

from __future__ import annotations

from collections import Counter
from typing import Any, Iterable, Optional, Sequence, Union

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alignment import AlignmentErrors, AlignmentTable, align_triplets, make_aligners
from .baseline import SynonymKB, kb_align, rule_parse
from .core import AlignedTriplet, CaptionRecord, Lexicon, LexiconKind, RawTriplet
from .llm import LLMClient
from .parsing import ParseStats
from .pipeline import (
    ExtractionFailures,
    UsageLog,
    dedupe,
    extract_all,
    filter_none,
    predicate_frequencies,
    select_from_frequencies,
)


def _check_list(X: Any, kind: type, name: str) -> list:
    if isinstance(X, (str, bytes)) or not isinstance(X, Iterable):
        raise TypeError(f"{name} expects a sequence of {kind.__name__}, got {type(X).__name__}")
    items = list(X)
    for i, item in enumerate(items):
        if not isinstance(item, kind):
            raise TypeError(f"{name}: item {i} is {type(item).__name__}, expected {kind.__name__}")
    return items


def check_captions(X: Any) -> list[CaptionRecord]:
    """Captions as CaptionRecord; bare strings get positional ids."""
    if isinstance(X, (str, bytes)) or not isinstance(X, Iterable):
        raise TypeError("captions must be a sequence")
    out = []
    for i, item in enumerate(X):
        if isinstance(item, str):
            item = CaptionRecord(str(i), str(i), item)
        elif not isinstance(item, CaptionRecord):
            raise TypeError(f"caption {i} is {type(item).__name__}")
        out.append(item)
    return out


def check_raw_triplets(X: Any) -> list[RawTriplet]:
    return _check_list(X, RawTriplet, "raw triplets")


def check_aligned_triplets(X: Any, complete: bool = False) -> list[AlignedTriplet]:
    items = _check_list(X, AlignedTriplet, "aligned triplets")
    if complete and any(not t.is_complete for t in items):
        raise ValueError("triplets must be fully aligned; apply NoneFilter first")
    return items


def check_lexicon(lexicon: Any, kind: LexiconKind, name: str) -> Lexicon:
    if not isinstance(lexicon, Lexicon):
        raise TypeError(f"{name} must be a Lexicon")
    if lexicon.kind is not kind:
        raise ValueError(f"{name} must be a {kind.value} lexicon")
    return lexicon


class TripletExtractor(TransformerMixin, BaseEstimator):
    """Chain-1: captions to raw triplets through an LLM client."""

    def __init__(
        self,
        client: Optional[LLMClient] = None,
        use_paraphrase: bool = True,
        prompt_mode: str = "chain",
        templates: Optional[dict] = None,
        entities: Optional[Lexicon] = None,
        predicates: Optional[Lexicon] = None,
        workers: int = 1,
    ):
        self.client = client
        self.use_paraphrase = use_paraphrase
        self.prompt_mode = prompt_mode
        self.templates = templates
        self.entities = entities
        self.predicates = predicates
        self.workers = workers

    def fit(self, X: Any = None, y: Any = None) -> "TripletExtractor":
        if self.client is None:
            raise ValueError("TripletExtractor needs an LLM client")
        if self.prompt_mode not in ("chain", "combined"):
            raise ValueError("prompt_mode must be 'chain' or 'combined'")
        if self.prompt_mode == "combined":
            check_lexicon(self.entities, LexiconKind.ENTITY, "entities")
            check_lexicon(self.predicates, LexiconKind.PREDICATE, "predicates")
        self.usage_ = UsageLog()
        self.parse_stats_ = ParseStats()
        self.failures_ = ExtractionFailures()
        return self

    def transform(self, X: Any) -> list[RawTriplet]:
        check_is_fitted(self, "usage_")
        return extract_all(
            check_captions(X), self.client, self.templates, self.use_paraphrase,
            prompt_mode=self.prompt_mode, entities=self.entities, predicates=self.predicates,
            usage=self.usage_, stats=self.parse_stats_, failures=self.failures_, workers=self.workers,
        )


class RuleBasedExtractor(TransformerMixin, BaseEstimator):
    """Heuristic caption parser; stateless."""

    def fit(self, X: Any = None, y: Any = None) -> "RuleBasedExtractor":
        self.fitted_ = True
        return self

    def transform(self, X: Any) -> list[RawTriplet]:
        return [t for c in check_captions(X) for t in rule_parse(c)]


class LexiconAlignerTransformer(TransformerMixin, BaseEstimator):
    """Chain-2: raw triplets to class indices via LLM alignment.

    ``fit`` sets up fresh write-once alignment tables; repeated
    ``transform`` calls reuse them, so a lexeme is aligned at most once.
    """

    def __init__(
        self,
        entities: Optional[Lexicon] = None,
        predicates: Optional[Lexicon] = None,
        client: Optional[LLMClient] = None,
        hierarchical: Union[bool, str] = "auto",
        group_size: int = 200,
        workers: int = 1,
        on_error: str = "raise",
    ):
        self.entities = entities
        self.predicates = predicates
        self.client = client
        self.hierarchical = hierarchical
        self.group_size = group_size
        self.workers = workers
        self.on_error = on_error

    def fit(self, X: Any = None, y: Any = None) -> "LexiconAlignerTransformer":
        check_lexicon(self.entities, LexiconKind.ENTITY, "entities")
        check_lexicon(self.predicates, LexiconKind.PREDICATE, "predicates")
        if self.client is None:
            raise ValueError("LexiconAlignerTransformer needs an LLM client")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        self.parse_stats_ = ParseStats()
        self.errors_ = AlignmentErrors()
        self.entity_table_ = AlignmentTable(self.entities.name)
        self.predicate_table_ = AlignmentTable(self.predicates.name)
        self.entity_aligner_, self.predicate_aligner_ = make_aligners(
            self.entities, self.predicates, self.client,
            entity_table=self.entity_table_, predicate_table=self.predicate_table_,
            hierarchical=self.hierarchical, group_size=self.group_size, stats=self.parse_stats_,
        )
        return self

    def transform(self, X: Any) -> list[AlignedTriplet]:
        check_is_fitted(self, "entity_aligner_")
        return align_triplets(
            check_raw_triplets(X), self.entity_aligner_, self.predicate_aligner_,
            workers=self.workers, on_error=self.on_error, errors=self.errors_,
        )


class KBAligner(TransformerMixin, BaseEstimator):
    """Baseline alignment through exact match or one synonym-KB hop."""

    def __init__(self, entities: Optional[Lexicon] = None, predicates: Optional[Lexicon] = None,
                 kb: Optional[SynonymKB] = None):
        self.entities = entities
        self.predicates = predicates
        self.kb = kb

    def fit(self, X: Any = None, y: Any = None) -> "KBAligner":
        check_lexicon(self.entities, LexiconKind.ENTITY, "entities")
        check_lexicon(self.predicates, LexiconKind.PREDICATE, "predicates")
        self.kb_ = self.kb if self.kb is not None else SynonymKB()
        return self

    def transform(self, X: Any) -> list[AlignedTriplet]:
        check_is_fitted(self, "kb_")
        return [
            AlignedTriplet(kb_align(t.subject, self.entities, self.kb_), kb_align(t.predicate, self.predicates, self.kb_),
                           kb_align(t.object, self.entities, self.kb_), t)
            for t in check_raw_triplets(X)
        ]


class NoneFilter(TransformerMixin, BaseEstimator):
    """Drops triplets with any unaligned component; the last report is kept."""

    def fit(self, X: Any = None, y: Any = None) -> "NoneFilter":
        self.fitted_ = True
        return self

    def transform(self, X: Any) -> list[AlignedTriplet]:
        kept, self.report_ = filter_none(check_aligned_triplets(X))
        return kept


class PredicateSelector(TransformerMixin, BaseEstimator):
    """Fine-grained predicate selection.

    ``fit`` learns global predicate frequencies from the deduplicated
    triplets; ``transform`` keeps, per (image, subject, object), the
    triplet whose predicate is rarest under those frequencies.
    ``fit_transform`` on one corpus equals ``select_predicates``.
    """

    def __init__(self, predicates: Optional[Lexicon] = None):
        self.predicates = predicates

    def fit(self, X: Any, y: Any = None) -> "PredicateSelector":
        if self.predicates is not None:
            check_lexicon(self.predicates, LexiconKind.PREDICATE, "predicates")
        triplets = check_aligned_triplets(X, complete=True)
        self.predicate_frequencies_: Counter = predicate_frequencies(dedupe(triplets))
        self.n_triplets_seen_ = len(triplets)
        return self

    def transform(self, X: Any) -> list[AlignedTriplet]:
        check_is_fitted(self, "predicate_frequencies_")
        unique = dedupe(check_aligned_triplets(X, complete=True))
        return select_from_frequencies(unique, self.predicate_frequencies_, self.predicates)


def llm_pipeline(
    client: LLMClient,
    entities: Lexicon,
    predicates: Lexicon,
    *,
    use_paraphrase: bool = True,
    hierarchical: Union[bool, str] = "auto",
    workers: int = 1,
):
    """Extract, align, filter and select as one sklearn Pipeline."""
    from sklearn.pipeline import Pipeline

    return Pipeline([
        ("extract", TripletExtractor(client, use_paraphrase=use_paraphrase, workers=workers)),
        ("align", LexiconAlignerTransformer(entities, predicates, client, hierarchical=hierarchical, workers=workers)),
        ("filter", NoneFilter()),
        ("select", PredicateSelector(predicates)),
    ])


def baseline_pipeline(entities: Lexicon, predicates: Lexicon, kb: SynonymKB):
    from sklearn.pipeline import Pipeline

    return Pipeline([
        ("extract", RuleBasedExtractor()),
        ("align", KBAligner(entities, predicates, kb)),
        ("filter", NoneFilter()),
        ("select", PredicateSelector(predicates)),
    ])
