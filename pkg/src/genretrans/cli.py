"""Command-line interface.

Every command writes its outputs plus a ``manifest.json`` into
``--out-dir``. Files are first written under temporary names and renamed
only once all of them are complete, so a failed run leaves nothing behind.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from collections import Counter
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .corpus import CorpusFormatError, encode, load_corpus, parse_sources, stratified_group_kfold, write_folds
from .evaluation import METHODS, curves_csv, default_factors, format_summary, levenshtein_baseline, per_tag_csv, run_experiment
from .graph import TagSystem
from .kb import PivotOntology, TranslationTable
from .logreg import (
    LogisticModel,
    NumericalError,
    PriorSpec,
    TrainConfig,
    elicit_lambda,
    map_loss,
    ml_loss,
    predict_proba,
    source_tag_counts,
    train,
)
from .normalizer import DegenerateTagError, Normalizer, SplitThresholds, WordFrequencyTable
from .pipeline import build_kb

logger = logging.getLogger("genretrans")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Outputs and manifest
# ---------------------------------------------------------------------------


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Outputs:
    """Collects output writers and commits them with write-then-rename."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.writers: list[tuple[str, Callable[[Path], None]]] = []

    def add(self, name: str, writer: Callable[[Path], None]) -> None:
        self.writers.append((name, writer))

    def add_text(self, name: str, text: str) -> None:
        self.add(name, lambda p: p.write_text(text, encoding="utf-8"))

    def commit(self, manifest: dict) -> dict:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        staged: list[tuple[Path, Path]] = []
        try:
            digests = {}
            for name, writer in self.writers:
                tmp = self.out_dir / f".{name}.tmp"
                writer(tmp)
                digests[name] = _sha256(tmp)
                staged.append((tmp, self.out_dir / name))
            manifest = dict(manifest, outputs=dict(sorted(digests.items())))
            tmp = self.out_dir / ".manifest.json.tmp"
            tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            staged.append((tmp, self.out_dir / "manifest.json"))
        except BaseException:
            for tmp, _ in staged:
                tmp.unlink(missing_ok=True)
            for name, _ in self.writers:
                (self.out_dir / f".{name}.tmp").unlink(missing_ok=True)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        return manifest


def _inputs(**paths) -> dict:
    out = {}
    for key, value in paths.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            out[key] = [{"path": str(p), "sha256": _sha256(p)} for p in value]
        else:
            out[key] = {"path": str(value), "sha256": _sha256(value)}
    return out


def _manifest(args, command: str, inputs: dict, **extra) -> dict:
    overrides = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func", "command", "out_dir", "verbose")
        and v is not None and v != args.defaults.get(k)
    }
    overrides.pop("defaults", None)
    return {
        "command": command,
        "inputs": inputs,
        "overrides": overrides,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        **extra,
    }


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"no such file: {p}")


def _fmt(x: float) -> str:
    return f"{x:.9g}"


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------


def _read_lines(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def _normalizer_options(args):
    table = WordFrequencyTable.from_file(args.unigrams) if args.unigrams else None
    thresholds = SplitThresholds.from_file(args.thresholds) if args.thresholds else None
    return table, thresholds


def cmd_normalize(args) -> dict:
    _require_files(args.tags, args.unigrams, args.thresholds, args.ontology, *(args.taxonomy or []))
    tags = _read_lines(args.tags)
    table, thresholds = _normalizer_options(args)
    vocab = list(tags)
    for path in args.taxonomy or []:
        vocab += TagSystem.from_file(path).tags
    pivot = PivotOntology.from_file(args.ontology).genres if args.ontology else []
    norm = Normalizer.from_tags(vocab, pivot, table, thresholds, args.min_split_len)

    stats = Counter({"tags": 0, "trie": 0, "zipf": 0, "unsplit": 0, "degenerate": 0})
    lines = []
    for tag in tags:
        stats["tags"] += 1
        try:
            form = norm(tag)
        except DegenerateTagError:
            stats["degenerate"] += 1
            lines.append(f"{tag}\t\t")
            continue
        stats.update(form.stages)
        lines.append(f"{tag}\t{form.canonical_key}\t{' '.join(form.tokens)}")

    out = Outputs(args.out_dir)
    out.add_text("normalized.tsv", "".join(ln + "\n" for ln in lines))
    inputs = _inputs(tags=args.tags, taxonomy=args.taxonomy, ontology=args.ontology,
                     unigrams=args.unigrams, thresholds=args.thresholds)
    stats = dict(sorted(stats.items()))
    print(" ".join(f"{k}={v}" for k, v in stats.items()))
    return out.commit(_manifest(args, "normalize", inputs, stats=stats))


# ---------------------------------------------------------------------------
# kb-map
# ---------------------------------------------------------------------------


def cmd_kb_map(args) -> dict:
    _require_files(args.ontology, args.unigrams, args.thresholds, *args.taxonomy)
    systems = [TagSystem.from_file(p) for p in args.taxonomy]
    by_name = {s.name: s for s in systems}
    if args.target not in by_name:
        raise UsageError(f"target {args.target!r} is not among the taxonomies {sorted(by_name)}")
    target = by_name[args.target]
    sources = [s for s in systems if s.name != args.target]
    if not sources:
        raise UsageError("need at least one source taxonomy besides the target")
    pivot = PivotOntology.from_file(args.ontology)
    table, thresholds = _normalizer_options(args)
    kb = build_kb(sources, target, pivot, table, thresholds, args.min_split_len)

    mapping = ["matrix\ttag\tstep\tgenre\tscore"]
    for name, mm in (("source", kb.source), ("target", kb.target)):
        for tag in mm.tags:
            row = mm.row(tag)
            step = mm.steps.get(tag, "")
            if not row:
                mapping.append(f"{name}\t{tag}\t{step}\t\t")
            for label in sorted(row):
                mapping.append(f"{name}\t{tag}\t{step}\t{label}\t{_fmt(row[label])}")

    out = Outputs(args.out_dir)
    out.add("table.tsv", kb.table.to_file)
    out.add_text("mapping.tsv", "\n".join(mapping) + "\n")
    out.add("graph.txt", kb.graph.dump)
    steps = Counter(kb.source.steps.values()) + Counter(kb.target.steps.values())
    inputs = _inputs(taxonomy=args.taxonomy, ontology=args.ontology,
                     unigrams=args.unigrams, thresholds=args.thresholds)
    print(f"table {len(kb.table.targets)}x{len(kb.table.sources)}; "
          + " ".join(f"{k}={v}" for k, v in sorted(steps.items())))
    return out.commit(_manifest(args, "kb-map", inputs, steps=dict(sorted(steps.items()))))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _lambda(value: str, n_bar: float) -> float:
    if value == "auto":
        return elicit_lambda(n_bar)
    lam = float(value)
    if not lam > 0:
        raise UsageError("--lambda must be 'auto' or a positive number")
    return lam


def _load_prior(path, corpus) -> TranslationTable:
    table = TranslationTable.from_file(path)
    if not set(table.sources) & set(corpus.sources) or not set(table.targets) & set(corpus.targets):
        raise ValueError(f"{path}: table vocabularies do not overlap the corpus")
    return table.reindex(corpus.targets, corpus.sources)


def _train_config(args, mode: str, optimizer: str | None = None) -> TrainConfig:
    return TrainConfig(mode=mode, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       l2=args.l2, optimizer=optimizer or args.optimizer, seed=args.seed)


def cmd_train(args) -> dict:
    mode = args.mode.upper()
    if mode == "MAP" and not args.prior_table:
        raise UsageError("MAP training needs --prior-table")
    _require_files(args.corpus, args.prior_table)
    corpus = load_corpus(args.corpus)
    X, Y = encode(corpus)
    cfg = _train_config(args, mode)
    prior = None
    extra = {"n_items": len(corpus), "n_dropped": corpus.n_dropped}
    if mode == "MAP":
        counts = source_tag_counts(X)
        lam = _lambda(args.lambda_, counts.mean_tags)
        prior = PriorSpec(_load_prior(args.prior_table, corpus).weights, lam, args.nu)
        extra.update(lam=lam, mean_source_tags=counts.mean_tags)
    model = train(None, X, Y, cfg, prior)
    model.sources, model.targets = list(corpus.sources), list(corpus.targets)

    def loss(m):
        return map_loss(m, X, Y, prior) if prior is not None else ml_loss(m, X, Y, cfg.l2)

    start = LogisticModel.zeros(corpus.sources, corpus.targets)
    if prior is not None:
        start.W = prior.mean.copy()
    extra.update(initial_loss=float(_fmt(loss(start))), final_loss=float(_fmt(loss(model))))

    out = Outputs(args.out_dir)
    out.add("model.txt", model.to_file)
    print(f"{mode} loss {extra['initial_loss']:.6g} -> {extra['final_loss']:.6g}")
    return out.commit(_manifest(args, "train", _inputs(corpus=args.corpus, prior_table=args.prior_table), **extra))


# ---------------------------------------------------------------------------
# translate
# ---------------------------------------------------------------------------


def _read_annotations(path) -> list[tuple[str, frozenset[str]]]:
    """``item TAB sources`` lines; corpus files (four fields) are accepted too."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) == 2:
            item, field_ = parts
        elif len(parts) == 4:
            item, field_ = parts[0], parts[2]
        else:
            raise CorpusFormatError(f"{path}:{lineno}: expected 'item<TAB>sources'")
        try:
            out.append((item.strip(), parse_sources(field_)))
        except ValueError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_translate(args) -> dict:
    if (args.model is None) == (args.table is None):
        raise UsageError("give exactly one of --model or --table")
    _require_files(args.annotations, args.model, args.table)
    if args.top_k is not None and args.top_k < 1:
        raise UsageError("--top-k must be positive")
    if args.model:
        model = LogisticModel.from_file(args.model)
        sources, targets = model.sources, model.targets
    else:
        table = TranslationTable.from_file(args.table)
        sources, targets = table.sources, table.targets
    index = {s: j for j, s in enumerate(sources)}
    items = _read_annotations(args.annotations)

    lines = []
    n_unknown = 0
    for item, tags in items:
        x = np.zeros(len(sources))
        for tag in sorted(tags):
            j = index.get(tag)
            if j is None:
                n_unknown += 1
                logger.warning("item %s: unknown source tag %r ignored", item, tag)
                continue
            x[j] = 1.0
        scores = predict_proba(model, x) if args.model else table.weights @ x
        order = sorted(range(len(targets)), key=lambda i: (-scores[i], targets[i]))
        for rank, i in enumerate(order[: args.top_k], 1):
            lines.append(f"{item}\t{rank}\t{targets[i]}\t{_fmt(scores[i])}")

    out = Outputs(args.out_dir)
    out.add_text("translations.tsv", "".join(ln + "\n" for ln in lines))
    inputs = _inputs(annotations=args.annotations, model=args.model, table=args.table)
    return out.commit(_manifest(args, "translate", inputs, n_items=len(items), n_unknown_tags=n_unknown))


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def _parse_factors(text: str | None) -> list[float]:
    if text is None or text == "default":
        return default_factors()
    factors = []
    for part in text.split(","):
        part = part.strip()
        if part.startswith("2^"):
            value = 2.0 ** float(part[2:])
        else:
            value = float(part)
        if not 0 < value <= 1:
            raise UsageError(f"factor {part!r} outside (0, 1]")
        factors.append(value)
    return factors


def cmd_experiment(args) -> dict:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise UsageError(f"unknown methods {sorted(unknown)}; choose from {', '.join(METHODS)}")
    if {"KB", "MAP", "MAP-nobias"} & set(methods) and not args.prior_table:
        raise UsageError("KB and MAP methods need --prior-table")
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    factors = _parse_factors(args.factors)
    if args.lambda_ != "auto":
        _lambda(args.lambda_, 1.0)
    _require_files(args.corpus, args.prior_table)

    corpus = load_corpus(args.corpus)
    kb = _load_prior(args.prior_table, corpus) if args.prior_table else None
    lev = None
    if "LEV" in methods:
        plain = [s.partition(":")[2] for s in corpus.sources]
        norm = Normalizer.from_tags(plain + corpus.targets)

        def key(tag):
            try:
                return norm.key(tag)
            except DegenerateTagError:
                return tag.lower()

        lev = levenshtein_baseline(corpus.sources, corpus.targets, key)
    folds = stratified_group_kfold(corpus, args.folds, args.seed)
    reports = run_experiment(
        corpus, methods, factors, k=args.folds, seed=args.seed, kb_table=kb, baseline_table=lev,
        lam=args.lambda_ if args.lambda_ == "auto" else float(args.lambda_), nu=args.nu,
        ml_config=_train_config(args, "ML", args.ml_optimizer),
        map_config=_train_config(args, "MAP", args.map_optimizer),
        folds=folds, lambda_from=args.lambda_from,
    )
    lams = sorted({r.lam for r in reports if r.lam is not None})

    out = Outputs(args.out_dir)
    out.add_text("curves.csv", curves_csv(reports))
    out.add_text("per_tag.csv", per_tag_csv(reports))
    out.add("folds.tsv", lambda p: write_folds(folds, p))
    summary = format_summary(reports)
    out.add_text("summary.txt", summary + "\n")
    print(summary)
    extra = {
        "factors": [_fmt(f) for f in factors],
        "methods": methods,
        "lambdas": [float(_fmt(v)) for v in lams],
        "n_items": len(corpus),
    }
    return out.commit(_manifest(args, "experiment", _inputs(corpus=args.corpus, prior_table=args.prior_table), **extra))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_normalizer_flags(p) -> None:
    p.add_argument("--unigrams", help="word list by descending frequency for Zipf splitting")
    p.add_argument("--thresholds", help="key=value file overriding split-assessment thresholds")
    p.add_argument("--min-split-len", type=int, default=7,
                   help="pivot tokens shorter than this enter the trie unsplit (default 7)")


def _add_train_flags(p) -> None:
    p.add_argument("--lambda", dest="lambda_", default="auto", help="prior precision or 'auto' (default)")
    p.add_argument("--nu", type=float, default=1.0, help="bias regularization strength (default 1)")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=100_000)
    p.add_argument("--l2", type=float, default=1.0, help="L2 coefficient of ML training")
    p.add_argument("--prior-table", help="knowledge-based translation table (kb-map output)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genretrans", description="Genre tag translation between tag systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("normalize", help="normalize and tokenize a list of tags")
    p.add_argument("tags", help="one raw tag per line")
    p.add_argument("--taxonomy", nargs="*", help="extra tag-system files feeding the trie")
    p.add_argument("--ontology", help="pivot ontology dump whose labels feed the trie")
    _add_normalizer_flags(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("kb-map", help="build the knowledge-based translation table")
    p.add_argument("--taxonomy", nargs="+", required=True, help="tag-system files, sources and target")
    p.add_argument("--ontology", required=True, help="pivot ontology dump")
    p.add_argument("--target", required=True, help="name (file stem) of the target tag system")
    _add_normalizer_flags(p)
    p.set_defaults(func=cmd_kb_map)

    p = sub.add_parser("train", help="train a logistic-regression model (ML or MAP)")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=["ML", "MAP", "ml", "map"], default="ML")
    p.add_argument("--optimizer", choices=["adam", "gd", "lbfgs", "newton"], default="adam")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="rank target tags for annotated items")
    p.add_argument("annotations", help="'item<TAB>sys:tag;tag|sys2:tag' lines, or a corpus file")
    p.add_argument("--model", help="checkpoint written by train")
    p.add_argument("--table", help="translation table written by kb-map")
    p.add_argument("--top-k", type=int, help="keep the k best target tags per item")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("experiment", help="cross-validated learning curves")
    p.add_argument("corpus")
    p.add_argument("--methods", default="KB,ML,MAP", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--factors", help="comma list such as '2^-13,0.5,1' (default 2^-13 ... 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-from", choices=["pool", "train"], default="pool",
                   help="items used to elicit lambda: the fold's training pool or the subsample")
    p.add_argument("--ml-optimizer", choices=["adam", "gd", "lbfgs", "newton"], default="lbfgs")
    p.add_argument("--map-optimizer", choices=["adam", "gd", "lbfgs", "newton"], default="lbfgs")
    _add_train_flags(p)
    p.set_defaults(func=cmd_experiment)

    for action in sub.choices.values():
        action.set_defaults(defaults={a.dest: a.default for a in action._actions})
    for p in sub.choices.values():
        p.add_argument("--out-dir", required=True, help="directory for outputs and manifest.json")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and bad flags
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"genretrans {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"genretrans {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError, UnicodeDecodeError) as exc:
        print(f"genretrans {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
