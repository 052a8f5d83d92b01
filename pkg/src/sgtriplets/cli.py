"""Command-line entry point: ``sgtriplets {run,align,stats,cost}``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

from .alignment import AlignmentTable, LexiconAligner
from .core import Lexicon, LexiconKind, normalize_lexeme
from .io import builtin_path, load_corpus, load_lexicon, read_dataset, resolve_path
from .llm import BackendUnavailable, CostModel, MockMiss, estimate_cost, format_usd
from .pipeline import ConfigError, RunConfig, apply_mapping, build_client, load_config, run
from .prompts import PromptTooLong
from .stats import compare_stats, compute_stats, display_density

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4

LEXICON_ALIASES = {
    "vg_entities.txt": "vg150_entities.txt",
    "vg_predicates.txt": "vg50_predicates.txt",
    # stand-in for the 1,594-class open-vocabulary entity list
    "vinvl.txt": "fixture/large_entities.txt",
}
_TOKENS = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([kK]?)\s*$")

log = logging.getLogger("sgtriplets")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_value(text: str):
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _apply_overrides(cfg: RunConfig, pairs: Sequence[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides through the config schema."""
    data: dict[str, dict] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {pair!r} must look like section.key=value")
        data.setdefault(section, {})[name] = _parse_value(value.strip())
    return apply_mapping(cfg, data)


def resolve_lexicon_arg(value: str, kind: Optional[str]) -> Lexicon:
    path = resolve_path(value)
    if not path.exists() and value in LEXICON_ALIASES:
        path = builtin_path(LEXICON_ALIASES[value])
    elif not path.exists() and builtin_path(value).exists():
        path = builtin_path(value)
    if not path.is_file():
        raise ConfigError(f"lexicon not found: {value}")
    if kind is None:
        kind = "predicate" if "pred" in path.name.lower() else "entity"
    return load_lexicon(path, LexiconKind(kind))


def parse_tokens(text: str) -> float:
    """``"520"`` or ``"0.52K"`` to a token count."""
    m = _TOKENS.match(text)
    if m is None:
        raise ValueError(f"bad token count {text!r}")
    value = float(m.group(1))
    return value * 1000 if m.group(2) else value


# ---------------------------------------------------------------------------
# commands


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        original_backend = cfg.backend
        if args.set:
            _apply_overrides(cfg, args.set)
        if args.backend:
            cfg.backend = args.backend
            if args.backend == "replay" and original_backend in ("http", "mock"):
                cfg.replay_source = original_backend
        if args.no_paraphrase:
            cfg.use_paraphrase = False
        if args.out:
            out = Path(args.out).resolve()
            cfg.output = str(out / "triplets.jsonl")
            cfg.report = str(out / "report.json")
        if args.cache:
            cfg.cache = str(Path(args.cache).resolve())
        if args.checkpoint_dir:
            cfg.checkpoint_dir = str(Path(args.checkpoint_dir).resolve())
        if args.concurrency is not None:
            cfg.concurrency = args.concurrency
        cfg.resume = bool(args.resume)
        cfg.validate()
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        result = run(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except BackendUnavailable as exc:
        return _fail(EXIT_BACKEND, str(exc))
    report = result.report
    counts = report["counts"]
    print(
        f"{report['status']}: {counts['post_selection']} triplets over {counts['images']} images "
        f"(density {display_density(report['density'])}); extracted {counts['extracted']}, "
        f"discarded {report['discards']['discarded']}, cost {format_usd(report['cost']['total_usd'])}"
    )
    print(f"backend calls {result.backend_calls}, cache hits {result.cache_hits}", file=sys.stderr)
    return EXIT_PARTIAL if result.partial else EXIT_OK


def cmd_align(args: argparse.Namespace) -> int:
    try:
        lexicon = resolve_lexicon_arg(args.lexicon, args.kind)
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = RunConfig(mock_fixture=str(builtin_path("fixture/mock_responses.jsonl")))
        if args.backend:
            if args.backend == "replay" and cfg.backend in ("http", "mock"):
                cfg.replay_source = cfg.backend
            cfg.backend = args.backend
        if args.cache:
            cfg.cache = str(Path(args.cache).resolve())
        if cfg.backend == "baseline":
            raise ConfigError("align needs an LLM backend (mock, replay or http)")
        if cfg.backend == "replay" and not cfg.cache:
            raise ConfigError("replay backend needs --cache")
        client = build_client(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    hierarchical = True if args.hierarchical else cfg.hierarchical
    aligner = LexiconAligner(lexicon, client, AlignmentTable(lexicon.name), hierarchical=hierarchical,
                             group_size=args.group_size or int(cfg.group_size))
    lexeme = normalize_lexeme(args.lexeme)
    if not lexeme:
        return _fail(EXIT_CONFIG, "lexeme is empty after normalization")
    try:
        index = aligner(lexeme)
    except (BackendUnavailable, MockMiss, PromptTooLong) as exc:
        return _fail(EXIT_BACKEND, str(exc))
    print(f"{index}.{lexicon.name_of(index)}" if index is not None else "0.None")
    print(f"backend calls {client.backend_calls}", file=sys.stderr)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        lexicon = resolve_lexicon_arg(args.lexicon, "predicate")
        paths = args.compare if args.compare else [args.dataset]
        if not all(paths):
            raise ConfigError("give --dataset or --compare A B")
        image_count = args.image_count
        if image_count is None and args.corpus:
            image_count = load_corpus(args.corpus)[1]
        results = []
        for p in paths:
            ds = read_dataset(p, image_count)
            if len(ds) == 0:
                raise ValueError(f"{p}: dataset is empty")
            results.append(compute_stats(ds, lexicon))
    except FileNotFoundError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (ConfigError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, f"invalid dataset: {exc}")

    if args.compare:
        cmp = compare_stats(*results)
        text = cmp.to_csv()
        summary = (f"density {display_density(cmp.a.density)} -> {display_density(cmp.b.density)} "
                   f"(delta {display_density(cmp.density_delta, signed=True)}); zero-frequency {cmp.a.zero_frequency_count} -> "
                   f"{cmp.b.zero_frequency_count} (delta {cmp.zero_frequency_delta:+d})")
        payload = cmp.to_dict()
    else:
        st = results[0]
        text = st.histogram_csv(args.order)
        summary = (f"density {display_density(st.density)} ({st.triplet_count} triplets / {st.image_count} images); "
                   f"zero-frequency {st.zero_frequency_count}/{len(lexicon)}")
        payload = st.to_dict()
    print(summary)
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    try:
        prices = [float(x) for x in args.prices.split(",")]
        if len(prices) != 2:
            raise ValueError("--prices takes INPUT,OUTPUT per 1K tokens")
        model = CostModel(*prices)
        if args.report:
            steps = json.loads(Path(args.report).read_text(encoding="utf-8"))["steps"]
            usage = {k: (v["input_tokens"], v["output_tokens"]) for k, v in steps.items()}
        elif args.tokens:
            usage = {}
            for i, item in enumerate(args.tokens, start=1):
                parts = item.split(",")
                if len(parts) != 2:
                    raise ValueError(f"--tokens takes IN,OUT, got {item!r}")
                usage[f"step{i}"] = (parse_tokens(parts[0]), parse_tokens(parts[1]))
        else:
            raise ValueError("give --tokens or --report")
    except (ValueError, OSError, KeyError, TypeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    report = estimate_cost(usage, model)
    for step, amount in report.per_step.items():
        print(format_usd(amount) if not args.report else f"{step}: {format_usd(amount)}")
    if len(report.per_step) > 1:
        print(f"total: {format_usd(report.total)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgtriplets", description="Scene-graph triplets from image captions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="build a triplet dataset from a config file")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--backend", choices=["http", "mock", "replay", "baseline"], help="override [llm] backend")
    p.add_argument("--no-paraphrase", action="store_true", help="skip the paraphrase extraction prompt")
    p.add_argument("--out", help="directory for triplets.jsonl and report.json")
    p.add_argument("--cache", help="completion cache file (JSONL)")
    p.add_argument("--checkpoint-dir", help="directory for stage checkpoints")
    p.add_argument("--resume", action="store_true", help="reuse a matching extraction checkpoint")
    p.add_argument("--concurrency", type=int, help="max in-flight backend calls (default 4)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config field")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("align", help="align one lexeme to a lexicon")
    p.add_argument("--lexeme", required=True)
    p.add_argument("--lexicon", required=True, help="lexicon file or bundled name")
    p.add_argument("--kind", choices=["entity", "predicate"], help="lexicon kind (guessed from the file name)")
    p.add_argument("--hierarchical", action="store_true", help="force group-wise alignment")
    p.add_argument("--group-size", type=int, help="classes per group (default 200)")
    p.add_argument("--config", help="TOML config supplying the [llm] section")
    p.add_argument("--backend", choices=["http", "mock", "replay"])
    p.add_argument("--cache", help="completion cache file (JSONL)")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("stats", help="density and predicate histogram of a dataset")
    p.add_argument("--dataset", help="triplet JSONL")
    p.add_argument("--lexicon", default="vg50_predicates.txt", help="predicate lexicon")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"), help="two datasets; deltas are B - A")
    p.add_argument("--image-count", type=int, help="images in the corpus (default: distinct images seen)")
    p.add_argument("--corpus", help="caption corpus whose image count is used")
    p.add_argument("--order", choices=["lexicon", "frequency"], default="lexicon", help="histogram row order")
    p.add_argument("--csv", help="write the CSV here instead of stdout")
    p.add_argument("--json", help="also write the stats as JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("cost", help="LLM cost from token counts or a run report")
    p.add_argument("--tokens", nargs="+", metavar="IN,OUT", help="token counts per step, e.g. 0.52K,0.16K")
    p.add_argument("--report", help="run report JSON")
    p.add_argument("--prices", default="0.0005,0.0015", help="USD per 1K input,output tokens")
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
