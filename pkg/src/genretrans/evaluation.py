"""Macro ROC-AUC evaluation, the edit-distance baseline and learning curves."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import ParallelCorpus, encode, mean_source_tags, stratified_group_kfold, subsample
from .kb import TranslationTable
from .logreg import PriorSpec, TrainConfig, decision_function, elicit_lambda, train

__all__ = [
    "roc_auc",
    "macro_auc",
    "merge_near_ties",
    "levenshtein",
    "levenshtein_baseline",
    "EvalReport",
    "MacroAUC",
    "default_factors",
    "run_experiment",
    "summarize",
    "curves_csv",
    "per_tag_csv",
    "format_summary",
]

logger = logging.getLogger(__name__)

METHODS = ("KB", "ML", "MAP", "MAP-nobias", "LEV")


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Returns NaN when ``labels`` hold a single class.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MacroAUC:
    per_tag: dict[str, float]
    skipped: list[str]

    @property
    def macro(self) -> float:
        return self.macro_over(self.per_tag)

    def macro_over(self, tags: Iterable[str]) -> float:
        vals = [self.per_tag[t] for t in tags if t in self.per_tag]
        return float(np.mean(vals)) if vals else math.nan


def merge_near_ties(scores, tol: float):
    """Snap near-equal scores in each column onto one value.

    Sorted scores whose consecutive gaps are all ``<= tol`` form one group
    and take the group's smallest value. Unlike rounding, this does not
    depend on where a value falls relative to a grid, so an additive
    per-column offset never changes the grouping.
    """
    S = np.array(scores, dtype=float)
    one_d = S.ndim == 1
    if one_d:
        S = S[:, None]
    for j in range(S.shape[1]):
        col = S[:, j]
        order = np.argsort(col, kind="stable")
        s = col[order]
        new_group = np.concatenate([[True], np.diff(s) > tol])
        starts = np.flatnonzero(new_group)
        col[order] = np.repeat(s[starts], np.diff(np.append(starts, len(s))))
    return S[:, 0] if one_d else S


def macro_auc(scores, labels, tags: Sequence[str] | None = None) -> MacroAUC:
    """Per-column AUC; single-class columns are skipped and listed."""
    scores = np.asarray(scores, dtype=float)
    labels = labels.toarray() if hasattr(labels, "toarray") else np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"score shape {scores.shape} != label shape {labels.shape}")
    tags = list(tags) if tags is not None else [str(i) for i in range(scores.shape[1])]
    per_tag, skipped = {}, []
    for j, tag in enumerate(tags):
        auc = roc_auc(scores[:, j], labels[:, j])
        if math.isnan(auc):
            skipped.append(tag)
        else:
            per_tag[tag] = auc
    return MacroAUC(per_tag, skipped)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _strip_system(tag: str) -> str:
    return tag.partition(":")[2] if ":" in tag else tag


def levenshtein_baseline(
    sources: Sequence[str],
    targets: Sequence[str],
    key: Callable[[str], str] | None = None,
) -> TranslationTable:
    """Translation table of ``1 - lev / max(len)`` between canonical keys.

    ``key`` maps a tag to its canonical key (e.g. ``Normalizer.key``);
    source tags may be qualified as ``system:tag``.
    """
    if not sources or not targets:
        raise ValueError("vocabularies must be non-empty")
    key = key or (lambda t: t)
    skeys = [key(_strip_system(s)) for s in sources]
    tkeys = [key(t) for t in targets]
    W = np.zeros((len(targets), len(sources)))
    for i, tk in enumerate(tkeys):
        for j, sk in enumerate(skeys):
            longest = max(len(tk), len(sk))
            W[i, j] = 1.0 if longest == 0 else 1.0 - levenshtein(tk, sk) / longest
    return TranslationTable(list(targets), list(sources), W)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def default_factors() -> list[float]:
    return [2.0 ** e for e in range(-13, 1)]


@dataclass
class EvalReport:
    method: str
    factor: float
    fold: int
    n_train: int
    result: MacroAUC
    absent: list[str] = field(default_factory=list)
    lam: float | None = None

    @property
    def macro(self) -> float:
        return self.result.macro

    @property
    def per_tag(self) -> dict[str, float]:
        return self.result.per_tag

    @property
    def skipped(self) -> list[str]:
        return self.result.skipped

    def macro_absent(self) -> float:
        """Macro AUC over target tags with no positive in the training data."""
        return self.result.macro_over(self.absent)


def run_experiment(
    corpus: ParallelCorpus,
    methods: Sequence[str] = ("KB", "ML", "MAP"),
    factors: Sequence[float] | None = None,
    k: int = 4,
    seed: int = 0,
    kb_table: TranslationTable | None = None,
    baseline_table: TranslationTable | None = None,
    lam: float | str = "auto",
    nu: float = 1.0,
    ml_config: TrainConfig | None = None,
    map_config: TrainConfig | None = None,
    folds: Mapping[str, int] | None = None,
    lambda_from: str = "pool",
    tie_tol: float | None = 1e-9,
) -> list[EvalReport]:
    """Cross-validated learning curves.

    Each fold is held out once; the other folds are subsampled (nested
    subsets, one permutation per fold) at every factor. KB and LEV do not
    use training data and are scored once per fold.

    With ``lam="auto"`` the precision is elicited from the mean number of
    source tags, counted over the fold's whole training pool
    (``lambda_from="pool"``, source side only) or over the subsample
    (``"train"``). Models are ranked by their logits; every score matrix is
    passed through ``merge_near_ties`` so that differences below optimizer
    tolerance do not break ties.
    """
    methods = list(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    if kb_table is None and ({"KB", "MAP", "MAP-nobias"} & set(methods)):
        raise ValueError("KB and MAP methods need a knowledge-based translation table")
    if "LEV" in methods and baseline_table is None:
        raise ValueError("LEV needs a baseline table")
    if lambda_from not in ("pool", "train"):
        raise ValueError("lambda_from must be 'pool' or 'train'")
    factors = list(factors) if factors is not None else default_factors()
    ml_config = ml_config or TrainConfig(mode="ML", optimizer="lbfgs")
    map_config = map_config or TrainConfig(mode="MAP", optimizer="lbfgs")

    def evaluate(scores) -> MacroAUC:
        scores = np.asarray(scores, dtype=float)
        if tie_tol is not None:
            scores = merge_near_ties(scores, tie_tol)
        return macro_auc(scores, Y_test, corpus.targets)

    if folds is None:
        folds = stratified_group_kfold(corpus, k, seed)
    kb = kb_table.reindex(corpus.targets, corpus.sources) if kb_table is not None else None
    lev = baseline_table.reindex(corpus.targets, corpus.sources) if baseline_table is not None else None

    reports: list[EvalReport] = []
    for fold in range(k):
        test = [it for it in corpus.items if folds[it.item_id] == fold]
        train_pool = [it for it in corpus.items if folds[it.item_id] != fold]
        X_test, Y_test = encode(corpus, test)
        static = {}
        for name, table in (("KB", kb), ("LEV", lev)):
            if name in methods:
                static[name] = evaluate(table.score(X_test))
        pool_lam = elicit_lambda(mean_source_tags(train_pool)) if train_pool else None
        for factor in factors:
            sub = subsample(train_pool, factor, seed=seed * 1000 + fold)
            X, Y = encode(corpus, sub)
            present = np.asarray(Y.sum(axis=0)).ravel() > 0
            absent = [t for t, p in zip(corpus.targets, present) if not p]
            for method in methods:
                lam_used = None
                if method in static:
                    res = static[method]
                else:
                    if method == "ML":
                        model = train(None, X, Y, ml_config)
                    else:
                        if lam != "auto":
                            lam_used = float(lam)
                        elif lambda_from == "pool":
                            lam_used = pool_lam
                        else:
                            lam_used = elicit_lambda(mean_source_tags(sub))
                        prior = PriorSpec(kb.weights, lam_used, nu if method == "MAP" else 0.0)
                        model = train(None, X, Y, map_config, prior)
                    res = evaluate(decision_function(model, X_test))
                reports.append(EvalReport(method, factor, fold, len(sub), res, absent, lam_used))
                logger.info("fold %d factor %.6g %s macro AUC %.4f", fold, factor, method, res.macro)
    return reports


def summarize(reports: Iterable[EvalReport], absent_only: bool = False) -> list[tuple[str, float, float, float, int]]:
    """``(method, factor, mean, std, n_folds)`` of macro AUC over folds."""
    cells: dict[tuple[str, float], list[float]] = {}
    for r in reports:
        value = r.macro_absent() if absent_only else r.macro
        cells.setdefault((r.method, r.factor), []).append(value)
    out = []
    for (method, factor), vals in sorted(cells.items()):
        arr = np.array(vals, dtype=float)
        arr = arr[~np.isnan(arr)]
        mean = float(arr.mean()) if arr.size else math.nan
        std = float(arr.std()) if arr.size else math.nan
        out.append((method, factor, mean, std, int(arr.size)))
    return out


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.9g}"


def curves_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "factor", "fold", "macro_auc", "n_train"])
    for r in reports:
        w.writerow([r.method, _fmt(r.factor), r.fold, _fmt(r.macro), r.n_train])
    return buf.getvalue()


def per_tag_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "factor", "fold", "tag", "auc", "absent_in_train"])
    for r in reports:
        absent = set(r.absent)
        for tag, auc in r.per_tag.items():
            w.writerow([r.method, _fmt(r.factor), r.fold, tag, _fmt(auc), int(tag in absent)])
    return buf.getvalue()


def format_summary(reports: Sequence[EvalReport], absent_only: bool = False) -> str:
    rows = summarize(reports, absent_only)
    lines = [f"{'method':<11}{'factor':>12}{'macro AUC':>12}{'std':>9}{'folds':>7}"]
    for method, factor, mean, std, n in rows:
        lines.append(f"{method:<11}{factor:>12.6g}{mean:>12.4f}{std:>9.4f}{n:>7d}")
    return "\n".join(lines)
