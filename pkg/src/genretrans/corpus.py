"""Parallel annotation corpora: loading, encoding, grouped folds, subsampling.

Corpus files are UTF-8, tab separated, one item per line::

    item_id <TAB> artist_id <TAB> lastfm:rock;pop|tagtraum:rock <TAB> rock;pop rock

The third field holds the source annotations, one ``system:tag;tag`` block
per source system separated by ``|`` (it may be empty). Source tags are
qualified as ``system:tag`` in the vocabulary.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CorpusFormatError",
    "AnnotatedItem",
    "ParallelCorpus",
    "load_corpus",
    "parse_sources",
    "format_sources",
    "encode",
    "decode",
    "stratified_group_kfold",
    "fold_stats",
    "write_folds",
    "read_folds",
    "subsample",
    "mean_source_tags",
]


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedItem:
    item_id: str
    artist_id: str
    sources: frozenset[str]
    targets: frozenset[str]


@dataclass
class ParallelCorpus:
    items: list[AnnotatedItem]
    sources: list[str]
    targets: list[str]
    n_dropped: int = 0
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {it.item_id: i for i, it in enumerate(self.items)}

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, item_id: str) -> AnnotatedItem:
        return self.items[self._index[item_id]]

    @classmethod
    def from_items(
        cls,
        items: Sequence[AnnotatedItem],
        sources: Sequence[str] | None = None,
        targets: Sequence[str] | None = None,
    ) -> "ParallelCorpus":
        """Keep items with a target annotation; vocabularies default to the tags seen."""
        kept = [it for it in items if it.targets]
        src = sorted({s for it in kept for s in it.sources}) if sources is None else list(sources)
        tgt = sorted({t for it in kept for t in it.targets}) if targets is None else list(targets)
        known_s, known_t = set(src), set(tgt)
        for it in kept:
            if not it.sources <= known_s or not it.targets <= known_t:
                raise CorpusFormatError(f"item {it.item_id} uses tags outside the vocabulary")
        return cls(kept, src, tgt, n_dropped=len(items) - len(kept))

    def to_file(self, path: str | Path) -> None:
        lines = [
            "\t".join([it.item_id, it.artist_id, format_sources(it.sources),
                       ";".join(sorted(it.targets))])
            for it in self.items
        ]
        Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def parse_sources(field_: str) -> frozenset[str]:
    """``"lastfm:rock;pop|tagtraum:rock"`` -> {"lastfm:rock", "lastfm:pop", "tagtraum:rock"}."""
    out = set()
    for block in field_.split("|"):
        block = block.strip()
        if not block:
            continue
        system, sep, tags = block.partition(":")
        if not sep or not system.strip():
            raise ValueError(f"source block {block!r} lacks a 'system:' prefix")
        for tag in tags.split(";"):
            tag = tag.strip()
            if tag:
                out.add(f"{system.strip()}:{tag}")
    return frozenset(out)


def format_sources(sources: Iterable[str]) -> str:
    by_system: dict[str, list[str]] = defaultdict(list)
    for s in sources:
        system, _, tag = s.partition(":")
        by_system[system].append(tag)
    return "|".join(f"{sys_}:{';'.join(sorted(tags))}" for sys_, tags in sorted(by_system.items()))


def load_corpus(
    path: str | Path,
    sources: Sequence[str] | None = None,
    targets: Sequence[str] | None = None,
) -> ParallelCorpus:
    """Parse a corpus file. Items without target tags are dropped and counted."""
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            item_id, artist, src, tgt = (p.strip() for p in parts)
            if not item_id or not artist:
                raise CorpusFormatError(f"{path}:{lineno}: empty item or artist id")
            if item_id in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate item id {item_id!r}")
            seen.add(item_id)
            try:
                src_tags = parse_sources(src)
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            tgt_tags = frozenset(t.strip() for t in tgt.split(";") if t.strip())
            items.append(AnnotatedItem(item_id, artist, src_tags, tgt_tags))
    try:
        return ParallelCorpus.from_items(items, sources, targets)
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from None


def _indicator(sets: Sequence[frozenset[str]], vocab: Sequence[str]) -> sp.csr_matrix:
    index = {v: j for j, v in enumerate(vocab)}
    rows, cols = [], []
    for i, tags in enumerate(sets):
        for t in tags:
            rows.append(i)
            cols.append(index[t])
    data = np.ones(len(rows))
    m = sp.csr_matrix((data, (rows, cols)), shape=(len(sets), len(vocab)))
    m.sort_indices()
    return m


def encode(corpus: ParallelCorpus, items: Sequence[AnnotatedItem] | None = None):
    """Binary design matrices ``(X, Y)`` as CSR, rows in the order of ``items``."""
    items = corpus.items if items is None else items
    X = _indicator([it.sources for it in items], corpus.sources)
    Y = _indicator([it.targets for it in items], corpus.targets)
    return X, Y


def decode(M, vocab: Sequence[str]) -> list[frozenset[str]]:
    M = sp.csr_matrix(M)
    return [frozenset(vocab[j] for j in M.indices[M.indptr[i]:M.indptr[i + 1]])
            for i in range(M.shape[0])]


def stratified_group_kfold(corpus: ParallelCorpus | Sequence[AnnotatedItem], k: int = 4, seed: int = 0) -> dict[str, int]:
    """Iterative stratification over target labels with artists as atomic units.

    The rarest label still carried by unassigned artists is handled first;
    each of its artists (largest first) goes to the fold that most lacks
    that label, then to the fold with fewest items, then by a seeded fold
    order. Returns ``{item_id: fold}``.
    """
    items = corpus.items if isinstance(corpus, ParallelCorpus) else list(corpus)
    if k < 2:
        raise ValueError("need k >= 2")
    groups: dict[str, list[AnnotatedItem]] = defaultdict(list)
    for it in items:
        groups[it.artist_id].append(it)
    if k > len(groups):
        raise ValueError(f"k={k} exceeds the number of artist groups ({len(groups)})")

    rng = np.random.default_rng(seed)
    names = sorted(groups)
    tiebreak = dict(zip(names, rng.permutation(len(names))))
    fold_rank = rng.permutation(k)
    label_counts = {g: Counter(t for it in groups[g] for t in it.targets) for g in names}
    total = Counter()
    for c in label_counts.values():
        total.update(c)
    demand = {lab: np.full(k, n / k) for lab, n in total.items()}
    size_demand = np.full(k, len(items) / k)
    n_assigned = np.zeros(k)

    remaining = Counter(total)
    carriers: dict[str, set[str]] = defaultdict(set)
    for g in names:
        for lab in label_counts[g]:
            carriers[lab].add(g)
    unassigned = set(names)
    assignment: dict[str, int] = {}

    def place(g: str, lab: str | None) -> None:
        want = demand[lab] if lab is not None else size_demand
        keys = [(-want[f], n_assigned[f], fold_rank[f]) for f in range(k)]
        f = min(range(k), key=keys.__getitem__)
        assignment[g] = f
        n_assigned[f] += len(groups[g])
        size_demand[f] -= len(groups[g])
        for lab2, n in label_counts[g].items():
            demand[lab2][f] -= n
            remaining[lab2] -= n
            carriers[lab2].discard(g)
        unassigned.discard(g)

    while True:
        open_labels = [lab for lab in remaining if remaining[lab] > 0]
        if not open_labels:
            break
        lab = min(open_labels, key=lambda lab_: (remaining[lab_], lab_))
        batch = sorted(carriers[lab], key=lambda g: (-len(groups[g]), tiebreak[g]))
        for g in batch:
            place(g, lab)
    for g in sorted(unassigned, key=lambda g: (-len(groups[g]), tiebreak[g])):
        place(g, None)

    return {it.item_id: assignment[it.artist_id] for it in items}


def fold_stats(items: Sequence[AnnotatedItem], folds: dict[str, int], k: int) -> dict[str, np.ndarray]:
    """Per-label fold counts minus the proportional ideal."""
    counts: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(k))
    for it in items:
        for t in it.targets:
            counts[t][folds[it.item_id]] += 1
    return {lab: c - c.sum() / k for lab, c in counts.items()}


def write_folds(folds: dict[str, int], path: str | Path) -> None:
    Path(path).write_text(
        "".join(f"{item}\t{fold}\n" for item, fold in folds.items()), encoding="utf-8"
    )


def read_folds(path: str | Path) -> dict[str, int]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        item, sep, fold = line.rpartition("\t")
        if not sep:
            raise CorpusFormatError(f"{path}:{lineno}: expected 'item_id<TAB>fold'")
        out[item] = int(fold)
    return out


def subsample(items: Sequence[AnnotatedItem], factor: float, seed: int = 0) -> list[AnnotatedItem]:
    """Uniform sample of ``ceil(factor * N)`` items without replacement.

    One permutation per seed, prefixes taken, so smaller factors give
    nested subsets.
    """
    if not 0 < factor <= 1:
        raise ValueError("factor must be in (0, 1]")
    n = len(items)
    if factor == 1:
        return list(items)
    take = math.ceil(factor * n)
    order = np.random.default_rng(seed).permutation(n)
    return [items[i] for i in sorted(order[:take])]


def mean_source_tags(items: Sequence[AnnotatedItem]) -> float:
    if not items:
        raise ValueError("mean_source_tags needs at least one item")
    return sum(len(it.sources) for it in items) / len(items)
