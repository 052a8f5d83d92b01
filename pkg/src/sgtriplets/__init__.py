"""Scene-graph triplet datasets from image captions with a two-stage LLM pipeline."""

from __future__ import annotations

from .alignment import AlignmentTable, LexiconAligner, align_hierarchical, align_lexeme, align_triplets, partition_lexicon
from .baseline import SynonymKB, kb_align, load_kb, rule_parse
from .core import (
    AlignedTriplet,
    CaptionRecord,
    Lexicon,
    LexiconKind,
    RawTriplet,
    Source,
    TripletDataset,
    normalize_lexeme,
)
from .llm import (
    BackendUnavailable,
    CompletionCache,
    CostModel,
    HttpBackend,
    LLMClient,
    MockBackend,
    MockMiss,
    ReplayBackend,
    ReplayMiss,
    estimate_cost,
    format_usd,
)
from .parsing import parse_alignment, parse_triplets
from .pipeline import RunConfig, extract_all, filter_none, load_config, run, select_predicates
from .prompts import Chain, PromptTemplate, default_template, render_alignment_prompt, render_extraction_prompt
from .stats import CorpusStats, compare_stats, compute_stats

__version__ = "0.1.0"

__all__ = [
    "AlignedTriplet", "AlignmentTable", "BackendUnavailable", "CaptionRecord", "Chain", "CompletionCache",
    "CorpusStats", "CostModel", "HttpBackend", "LLMClient", "Lexicon", "LexiconAligner", "LexiconKind",
    "MockBackend", "MockMiss", "PromptTemplate", "RawTriplet", "ReplayBackend", "ReplayMiss", "RunConfig",
    "Source", "SynonymKB", "TripletDataset", "align_hierarchical", "align_lexeme", "align_triplets",
    "compare_stats", "compute_stats", "default_template", "estimate_cost", "extract_all", "filter_none",
    "format_usd", "kb_align", "load_config", "load_kb", "normalize_lexeme", "parse_alignment", "parse_triplets",
    "partition_lexicon", "render_alignment_prompt", "render_extraction_prompt", "rule_parse", "run",
    "select_predicates",
]
