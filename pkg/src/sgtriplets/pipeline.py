"""End-to-end dataset construction: captions -> extracted -> aligned -> filtered -> selected."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .alignment import AlignmentErrors, AlignmentTable, align_triplets, make_aligners
from .baseline import SynonymKB, kb_align, load_kb, rule_parse
from .core import AlignedTriplet, CaptionRecord, Lexicon, LexiconKind, RawTriplet, Source, TripletDataset
from .io import load_corpus, load_lexicon, resolve_path, write_dataset
from .llm import (
    DEFAULT_API_KEY_ENV,
    DEFAULT_ENDPOINT,
    DEFAULT_MODEL,
    BackendUnavailable,
    CompletionCache,
    CompletionRecord,
    CostModel,
    GenerationParams,
    HttpBackend,
    LLMClient,
    MockBackend,
    MockMiss,
    ReplayBackend,
)
from .parsing import ParseStats, parse_triplets
from .prompts import Chain, PromptTemplate, PromptTooLong, default_template, load_template, render_extraction_prompt

log = logging.getLogger(__name__)

BACKENDS = ("http", "mock", "replay", "baseline")
PROMPT_MODES = ("chain", "combined")
STEP_ORDER = ("extract_original", "extract_paraphrase", "combined", "align_entity", "align_predicate")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# usage accounting


class UsageLog:
    """Prompt and token totals per pipeline step, cache hits included."""

    def __init__(self) -> None:
        self.steps: dict[str, list[int]] = {}
        self._lock = threading.Lock()

    def add(self, step: str, record: CompletionRecord) -> None:
        with self._lock:
            row = self.steps.setdefault(step, [0, 0, 0])
            row[0] += 1
            row[1] += record.input_tokens
            row[2] += record.output_tokens

    def merge(self, data: Mapping[str, Sequence[int]]) -> None:
        with self._lock:
            for step, (n, i, o) in data.items():
                row = self.steps.setdefault(step, [0, 0, 0])
                row[0] += n
                row[1] += i
                row[2] += o

    def snapshot(self, steps: Iterable[str] | None = None) -> dict[str, list[int]]:
        with self._lock:
            keys = list(steps) if steps is not None else list(self.steps)
            return {k: list(self.steps[k]) for k in keys if k in self.steps}

    def for_step(self, step: str, client: LLMClient) -> "StepClient":
        return StepClient(client, step, self)

    def report(self, cost_model: CostModel) -> dict[str, dict[str, Any]]:
        out = {}
        for step in sorted(self.steps, key=lambda s: (STEP_ORDER.index(s) if s in STEP_ORDER else 99, s)):
            n, i, o = self.steps[step]
            out[step] = {"prompts": n, "input_tokens": i, "output_tokens": o, "cost_usd": cost_model.cost(i, o)}
        return out


class StepClient:
    """Forwards to an LLMClient and books every completion under one step."""

    def __init__(self, client: LLMClient, step: str, usage: UsageLog):
        self.client = client
        self.step = step
        self.usage = usage
        self.max_prompt_tokens = client.max_prompt_tokens

    def complete(self, prompt: str, params: Optional[GenerationParams] = None) -> CompletionRecord:
        record = self.client.complete(prompt, params)
        self.usage.add(self.step, record)
        return record


# ---------------------------------------------------------------------------
# Chain-1


@dataclass
class ExtractionFailures:
    captions: list[str] = field(default_factory=list)


def extract_all(
    corpus: Sequence[CaptionRecord],
    client: LLMClient,
    templates: Optional[Mapping[Chain, PromptTemplate]] = None,
    use_paraphrase: bool = True,
    *,
    prompt_mode: str = "chain",
    entities: Optional[Lexicon] = None,
    predicates: Optional[Lexicon] = None,
    usage: Optional[UsageLog] = None,
    stats: Optional[ParseStats] = None,
    failures: Optional[ExtractionFailures] = None,
    workers: int = 1,
) -> list[RawTriplet]:
    """Run the extraction prompts over every caption.

    Original-caption triplets come first for each caption, then the
    paraphrase ones. A caption whose prompt fails (mock miss, prompt over
    budget) is logged and skipped; an unavailable backend aborts.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    if prompt_mode not in PROMPT_MODES:
        raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}")
    templates = dict(templates or {})
    usage = usage if usage is not None else UsageLog()
    failures = failures if failures is not None else ExtractionFailures()

    if prompt_mode == "combined":
        plan = [(Chain.COMBINED, Source.LLM_PARAPHRASED)]
    else:
        plan = [(Chain.EXTRACT_ORIGINAL, Source.LLM_ORIGINAL)]
        if use_paraphrase:
            plan.append((Chain.EXTRACT_PARAPHRASE, Source.LLM_PARAPHRASED))
    for chain, _ in plan:
        templates.setdefault(chain, default_template(chain))
    step_clients = {chain: usage.for_step(chain.value, client) for chain, _ in plan}

    def one(caption: CaptionRecord) -> Optional[list[RawTriplet]]:
        found: list[RawTriplet] = []
        try:
            for chain, source in plan:
                prompt = render_extraction_prompt(
                    templates[chain], caption, entities=entities, predicates=predicates,
                    max_tokens=client.max_prompt_tokens,
                )
                record = step_clients[chain].complete(prompt)
                found.extend(parse_triplets(record.response, caption, source, stats))
        except (MockMiss, PromptTooLong) as exc:
            log.warning("caption %s/%s skipped: %s", caption.image_id, caption.caption_id, exc)
            return None
        return found

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, corpus))
    else:
        results = [one(c) for c in corpus]

    out: list[RawTriplet] = []
    for caption, found in zip(corpus, results):
        if found is None:
            failures.captions.append(f"{caption.image_id}/{caption.caption_id}")
        else:
            out.extend(found)
    return out


def extract_baseline(corpus: Sequence[CaptionRecord]) -> list[RawTriplet]:
    return [t for caption in corpus for t in rule_parse(caption)]


# ---------------------------------------------------------------------------
# filtering and selection


@dataclass
class DiscardReport:
    input_count: int = 0
    kept: int = 0
    discarded: int = 0
    by_component: dict[str, int] = field(default_factory=lambda: {"subject": 0, "predicate": 0, "object": 0})
    by_pattern: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "input": self.input_count,
            "kept": self.kept,
            "discarded": self.discarded,
            "by_component": dict(self.by_component),
            "by_pattern": dict(sorted(self.by_pattern.items())),
        }


def filter_none(triplets: Iterable[AlignedTriplet]) -> tuple[list[AlignedTriplet], DiscardReport]:
    """Keep only fully aligned triplets; count discards by missing component."""
    report = DiscardReport()
    kept: list[AlignedTriplet] = []
    for t in triplets:
        report.input_count += 1
        missing = [
            name
            for name, value in (("subject", t.subject_class), ("predicate", t.predicate_class), ("object", t.object_class))
            if value is None
        ]
        if not missing:
            kept.append(t)
            continue
        report.discarded += 1
        for name in missing:
            report.by_component[name] += 1
        pattern = "+".join(missing)
        report.by_pattern[pattern] = report.by_pattern.get(pattern, 0) + 1
    report.kept = len(kept)
    return kept, report


@dataclass
class SelectionReport:
    input_count: int = 0
    duplicates_dropped: int = 0
    self_loops_dropped: int = 0
    groups: int = 0
    dropped_by_selection: int = 0
    output_count: int = 0

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


def predicate_frequencies(triplets: Iterable[AlignedTriplet]) -> Counter:
    return Counter(t.predicate_class for t in triplets)


def dedupe(triplets: Iterable[AlignedTriplet], report: Optional[SelectionReport] = None) -> list[AlignedTriplet]:
    """Drop repeated (image, subject, predicate, object) and same-entity self-loops."""
    seen: set[tuple] = set()
    out: list[AlignedTriplet] = []
    for t in triplets:
        if t.subject_class == t.object_class and t.raw.subject == t.raw.object:
            if report is not None:
                report.self_loops_dropped += 1
            continue
        key = (t.image_id, t.subject_class, t.predicate_class, t.object_class)
        if key in seen:
            if report is not None:
                report.duplicates_dropped += 1
            continue
        seen.add(key)
        out.append(t)
    return out


def select_from_frequencies(
    triplets: Sequence[AlignedTriplet],
    frequencies: Mapping[Optional[int], int],
    predicates: Optional[Lexicon] = None,
) -> list[AlignedTriplet]:
    """Keep one triplet per (image, subject, object): the rarest predicate.

    Ties go to the lexicographically smaller predicate class name (class
    index when no lexicon is given), then to the earlier triplet. Output
    keeps input order.
    """
    def name(idx: int) -> Any:
        return predicates.name_of(idx) if predicates is not None else idx

    best: dict[tuple, tuple[tuple, int]] = {}
    for pos, t in enumerate(triplets):
        key = (t.image_id, t.subject_class, t.object_class)
        rank = (frequencies.get(t.predicate_class, 0), name(t.predicate_class), pos)
        current = best.get(key)
        if current is None or rank < current[0]:
            best[key] = (rank, pos)
    keep = sorted(pos for _, pos in best.values())
    return [triplets[pos] for pos in keep]


def select_predicates_report(
    triplets: Iterable[AlignedTriplet], predicates: Optional[Lexicon] = None
) -> tuple[list[AlignedTriplet], SelectionReport]:
    triplets = list(triplets)
    if any(not t.is_complete for t in triplets):
        raise ValueError("select_predicates needs fully aligned triplets")
    report = SelectionReport(input_count=len(triplets))
    unique = dedupe(triplets, report)
    freqs = predicate_frequencies(unique)
    selected = select_from_frequencies(unique, freqs, predicates)
    report.groups = len(selected)
    report.dropped_by_selection = len(unique) - len(selected)
    report.output_count = len(selected)
    return selected, report


def select_predicates(triplets: Iterable[AlignedTriplet], predicates: Optional[Lexicon] = None) -> list[AlignedTriplet]:
    """Fine-grained predicate selection over the whole triplet set.

    Predicate frequency is counted over the deduplicated input; lower
    frequency counts as more fine-grained.
    """
    return select_predicates_report(triplets, predicates)[0]


# ---------------------------------------------------------------------------
# configuration and run


@dataclass
class RunConfig:
    corpus: str = ""
    entity_lexicon: str = "builtin:vg150_entities.txt"
    predicate_lexicon: str = "builtin:vg50_predicates.txt"
    backend: str = "mock"
    model: str = DEFAULT_MODEL
    endpoint: str = DEFAULT_ENDPOINT
    api_key_env: str = DEFAULT_API_KEY_ENV
    mock_fixture: str = ""
    replay_source: str = "http"
    cache: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    concurrency: int = 4
    max_prompt_tokens: int = 4096
    input_price_per_1k: float = 0.0005
    output_price_per_1k: float = 0.0015
    use_paraphrase: bool = True
    prompt_mode: str = "chain"
    hierarchical: Any = "auto"
    group_size: int = 200
    kb: str = "builtin:kb_small.tsv"
    templates: dict[str, str] = field(default_factory=dict)
    output: str = "triplets.jsonl"
    report: str = "report.json"
    checkpoint_dir: str = ""
    resume: bool = False
    base_dir: str = "."

    def path(self, value: str) -> Path:
        return resolve_path(value, Path(self.base_dir))

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f"prompt_mode must be one of {PROMPT_MODES}")
        if self.hierarchical not in (True, False, "auto"):
            raise ConfigError("hierarchical must be true, false or \"auto\"")
        if self.group_size < 1 or self.concurrency < 1 or self.max_retries < 0:
            raise ConfigError("group_size and concurrency must be >= 1, max_retries >= 0")
        if not self.corpus:
            raise ConfigError("corpus path is required")
        for label in ("corpus", "entity_lexicon", "predicate_lexicon"):
            if not self.path(getattr(self, label)).is_file():
                raise ConfigError(f"{label} not found: {getattr(self, label)}")
        if self.backend == "mock" and not (self.mock_fixture and self.path(self.mock_fixture).is_file()):
            raise ConfigError(f"mock backend needs an existing mock_fixture, got {self.mock_fixture!r}")
        if self.backend == "http" and not os.environ.get(self.api_key_env, "").strip():
            raise ConfigError(f"http backend needs the {self.api_key_env} environment variable")
        if self.backend == "replay":
            if self.replay_source not in ("http", "mock"):
                raise ConfigError("replay_source must be http or mock")
            if not self.cache:
                raise ConfigError("replay backend needs a cache file")
        if self.backend == "baseline" and not self.path(self.kb).is_file():
            raise ConfigError(f"kb not found: {self.kb}")
        for chain, tpath in self.templates.items():
            try:
                Chain(chain)
            except ValueError:
                raise ConfigError(f"unknown template chain {chain!r}") from None
            if not self.path(tpath).is_file():
                raise ConfigError(f"template not found: {tpath}")

    def snapshot(self) -> dict[str, Any]:
        keys = ("corpus", "entity_lexicon", "predicate_lexicon", "backend", "model", "temperature",
                "use_paraphrase", "prompt_mode", "hierarchical", "group_size")
        snap = {k: getattr(self, k) for k in keys}
        if self.backend == "replay":
            snap["backend"] = self.replay_source
        if self.backend == "baseline":
            snap["kb"] = self.kb
        return snap


_SECTION_KEYS = {
    "corpus": {"path": "corpus"},
    "lexicons": {"entity": "entity_lexicon", "predicate": "predicate_lexicon"},
    "llm": {
        "backend": "backend", "model": "model", "endpoint": "endpoint", "api_key_env": "api_key_env",
        "mock_fixture": "mock_fixture", "replay_source": "replay_source", "cache": "cache",
        "temperature": "temperature", "max_retries": "max_retries", "concurrency": "concurrency",
        "max_prompt_tokens": "max_prompt_tokens",
    },
    "prices": {"input_per_1k": "input_price_per_1k", "output_per_1k": "output_price_per_1k"},
    "pipeline": {
        "use_paraphrase": "use_paraphrase", "prompt_mode": "prompt_mode", "hierarchical": "hierarchical",
        "group_size": "group_size", "output": "output", "report": "report", "checkpoint_dir": "checkpoint_dir",
    },
    "baseline": {"kb": "kb"},
}


def apply_mapping(cfg: RunConfig, data: Mapping[str, Any]) -> RunConfig:
    """Set fields of ``cfg`` from a sectioned mapping (the TOML layout)."""
    for section, body in data.items():
        if section == "templates":
            if not isinstance(body, Mapping):
                raise ConfigError("[templates] must be a table")
            cfg.templates = {**cfg.templates, **{str(k): str(v) for k, v in body.items()}}
            continue
        if section not in _SECTION_KEYS or not isinstance(body, Mapping):
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in body.items():
            attr = _SECTION_KEYS[section].get(key)
            if key in ("api_key", "key", "token") and section == "llm":
                raise ConfigError("API keys are read from the environment only; set [llm] api_key_env instead")
            if attr is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(cfg, attr, value)
    return cfg


def config_from_mapping(data: Mapping[str, Any], base_dir: Path | str = ".") -> RunConfig:
    return apply_mapping(RunConfig(base_dir=str(base_dir)), data)


def load_config(path: Path | str) -> RunConfig:
    """Read a TOML run configuration; relative paths resolve against its directory."""
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data, path.resolve().parent)


@dataclass
class RunResult:
    dataset: TripletDataset
    report: dict[str, Any]
    backend_calls: int = 0
    cache_hits: int = 0

    @property
    def partial(self) -> bool:
        return self.report.get("status") == "partial"


def _fingerprint(cfg: RunConfig, corpus: Sequence[CaptionRecord], templates: Mapping[Chain, PromptTemplate]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(cfg.snapshot(), sort_keys=True).encode())
    for rec in corpus:
        h.update(json.dumps(rec.to_dict(), sort_keys=True).encode())
    for chain in sorted(templates, key=lambda c: c.value):
        h.update(templates[chain].to_text().encode())
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def build_client(cfg: RunConfig) -> LLMClient:
    params = GenerationParams(temperature=float(cfg.temperature))
    if cfg.backend == "mock":
        backend = MockBackend.from_file(cfg.path(cfg.mock_fixture), cfg.model)
    elif cfg.backend == "replay":
        backend = ReplayBackend(cfg.replay_source, cfg.model)
    elif cfg.backend == "http":
        backend = HttpBackend(cfg.endpoint, cfg.model, cfg.api_key_env)
    else:
        raise ConfigError(f"backend {cfg.backend!r} has no LLM client")
    cache = CompletionCache(cfg.path(cfg.cache) if cfg.cache else None)
    return LLMClient(
        backend, cache, params=params, max_retries=int(cfg.max_retries),
        concurrency=int(cfg.concurrency), max_prompt_tokens=int(cfg.max_prompt_tokens),
    )


def run(cfg: RunConfig, client: Optional[LLMClient] = None) -> RunResult:
    """Build the triplet dataset described by ``cfg`` and write its outputs.

    Output JSONL and report contain nothing run-specific (no timings or
    call counts), so a warm-cache or replay rerun reproduces them byte for
    byte. Backend call and cache-hit counts are on the returned result.
    """
    cfg.validate()
    entities = load_lexicon(cfg.path(cfg.entity_lexicon), LexiconKind.ENTITY)
    predicates = load_lexicon(cfg.path(cfg.predicate_lexicon), LexiconKind.PREDICATE)
    corpus, image_count = load_corpus(cfg.path(cfg.corpus))
    templates = {Chain(k): load_template(cfg.path(v), k) for k, v in cfg.templates.items()}
    for chain in Chain:
        templates.setdefault(chain, default_template(chain))
    cost_model = CostModel(float(cfg.input_price_per_1k), float(cfg.output_price_per_1k))

    usage = UsageLog()
    stats = ParseStats()
    failures = ExtractionFailures()
    align_errors = AlignmentErrors()

    if cfg.backend == "baseline":
        kb = load_kb(cfg.path(cfg.kb))
        raw = extract_baseline(corpus)
        aligned = _align_baseline(raw, entities, predicates, kb)
    else:
        if client is None:
            client = build_client(cfg)
        workers = int(cfg.concurrency)
        ckpt_dir = cfg.path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
        ckpt = ckpt_dir / "chain1.json" if ckpt_dir else None
        fingerprint = _fingerprint(cfg, corpus, templates)
        raw = None
        if cfg.resume and ckpt is not None and ckpt.is_file():
            saved = json.loads(ckpt.read_text(encoding="utf-8"))
            if saved.get("fingerprint") == fingerprint:
                log.info("resuming from %s", ckpt)
                raw = [RawTriplet.from_dict(r) for r in saved["triplets"]]
                usage.merge(saved["usage"])
                failures.captions.extend(saved["failed_captions"])
                stats.add(malformed=saved["malformed_spans"])
            else:
                log.warning("checkpoint %s does not match this configuration; ignoring it", ckpt)
        if raw is None:
            if corpus:
                raw = extract_all(
                    corpus, client, templates, bool(cfg.use_paraphrase), prompt_mode=cfg.prompt_mode,
                    entities=entities, predicates=predicates, usage=usage, stats=stats,
                    failures=failures, workers=workers,
                )
            else:
                raw = []
            if ckpt is not None:
                _atomic_write(ckpt, json.dumps({
                    "fingerprint": fingerprint,
                    "triplets": [t.to_dict() for t in raw],
                    "usage": usage.snapshot(),
                    "failed_captions": failures.captions,
                    "malformed_spans": stats.malformed_spans,
                }, ensure_ascii=False))
        if corpus and raw == [] and failures.captions and len(failures.captions) == len(corpus):
            raise BackendUnavailable("every caption failed; no usable backend responses")

        tables = {}
        for kind in ("entity", "predicate"):
            tpath = ckpt_dir / f"{kind}_alignments.jsonl" if ckpt_dir else None
            if tpath is not None and tpath.exists():
                tpath.unlink()
            tables[kind] = AlignmentTable(kind, tpath)
        ent_aligner, pred_aligner = make_aligners(
            entities, predicates, client,
            entity_table=tables["entity"], predicate_table=tables["predicate"],
            entity_template=templates[Chain.ALIGN_ENTITY], predicate_template=templates[Chain.ALIGN_PREDICATE],
            hierarchical=cfg.hierarchical, group_size=int(cfg.group_size), stats=stats,
        )
        ent_aligner.client = usage.for_step("align_entity", client)
        pred_aligner.client = usage.for_step("align_predicate", client)
        aligned = align_triplets(raw, ent_aligner, pred_aligner, workers=workers, on_error="skip", errors=align_errors)

    filtered, discard_report = filter_none(aligned)
    selected, selection_report = select_predicates_report(filtered, predicates)

    dataset = TripletDataset(tuple(selected), image_count, cfg.snapshot())
    steps = usage.report(cost_model)
    total_cost = cost_model.cost(
        sum(s["input_tokens"] for s in steps.values()), sum(s["output_tokens"] for s in steps.values())
    )
    partial = bool(failures.captions) or len(align_errors) > 0
    report = {
        "status": "partial" if partial else "ok",
        "config": cfg.snapshot(),
        "counts": {
            "captions": len(corpus),
            "images": image_count,
            "extracted": len(raw),
            "aligned": len(aligned),
            "post_filter": len(filtered),
            "post_selection": len(selected),
        },
        "discards": discard_report.to_dict(),
        "selection": selection_report.to_dict(),
        "density": len(selected) / image_count if image_count else 0.0,
        "parse": stats.as_dict(),
        "failures": {
            "captions": list(failures.captions),
            "entity_lexemes": sorted(align_errors.failed["entity"]),
            "predicate_lexemes": sorted(align_errors.failed["predicate"]),
        },
        "steps": steps,
        "cost": {
            "total_usd": total_cost,
            "per_image_usd": total_cost / image_count if image_count else 0.0,
        },
    }

    if cfg.output:
        write_dataset(dataset, cfg.path(cfg.output), entities, predicates)
    if cfg.report:
        _atomic_write(cfg.path(cfg.report), json.dumps(report, indent=2, ensure_ascii=False) + "\n")
    return RunResult(
        dataset,
        report,
        client.backend_calls if client is not None else 0,
        client.cache_hits if client is not None else 0,
    )


def _align_baseline(
    raw: Sequence[RawTriplet], entities: Lexicon, predicates: Lexicon, kb: SynonymKB
) -> list[AlignedTriplet]:
    return [
        AlignedTriplet(kb_align(t.subject, entities, kb), kb_align(t.predicate, predicates, kb),
                       kb_align(t.object, entities, kb), t)
        for t in raw
    ]
