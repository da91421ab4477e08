"""Knowledge-based translation through a pivot genre ontology.

Each tag of a tag system is mapped to a sparse score row over the pivot
genres; source and target rows are then compared by cosine similarity to
get the translation table used for scoring.

Alias groups of the pivot are handled as single nodes internally, so all
members of a group always carry the same score.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .graph import TagSystem, read_sections
from .normalizer import DegenerateTagError, NormalizedForm, Normalizer

__all__ = [
    "PivotOntology",
    "PivotMapper",
    "MappingMatrix",
    "TranslationTable",
    "build_mapping_matrix",
    "build_translation_table",
    "kb_score",
]

logger = logging.getLogger(__name__)

PIVOT_EDGE_KINDS = ("subgenre", "origin", "derivative")

Row = dict[str, float]


class PivotOntology:
    """Directed genre ontology with alias groups.

    ``edges`` hold ``(from, kind, to)`` triples with the relation
    convention of :mod:`genretrans.graph`. ``aliases`` is a list of label
    groups; a label belongs to at most one group.
    """

    def __init__(
        self,
        genres: Iterable[str],
        aliases: Iterable[Iterable[str]] = (),
        edges: Iterable[tuple[str, str, str]] = (),
        name: str = "pivot",
    ):
        self.name = name
        self.genres = list(dict.fromkeys(genres))
        known = set(self.genres)
        self.aliases: list[tuple[str, ...]] = []
        owner: dict[str, int] = {}
        for group in aliases:
            group = tuple(dict.fromkeys(group))
            for label in group:
                if label not in known:
                    raise ValueError(f"alias {label!r} is not a pivot genre")
                if label in owner:
                    raise ValueError(f"{label!r} belongs to two alias groups")
                owner[label] = len(self.aliases)
            self.aliases.append(group)
        self.edges = []
        for src, kind, dst in edges:
            if kind not in PIVOT_EDGE_KINDS:
                raise ValueError(f"unknown pivot edge kind {kind!r}")
            if src not in known or dst not in known:
                raise ValueError(f"pivot edge {src!r} -> {dst!r} has an unknown endpoint")
            self.edges.append((src, kind, dst))

    @classmethod
    def from_file(cls, path: str | Path) -> "PivotOntology":
        """Read a ``[GENRES]`` / ``[ALIASES]`` / ``[EDGES]`` dump."""
        path = Path(path)
        sec = read_sections(path, ("GENRES", "ALIASES", "EDGES"))
        genres = [line.strip() for _, line in sec["GENRES"]]
        aliases = [
            [p.strip() for p in line.split("\t") if p.strip()] for _, line in sec["ALIASES"]
        ]
        edges = []
        for lineno, line in sec["EDGES"]:
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'from<TAB>kind<TAB>to'")
            edges.append(tuple(parts))
        return cls(genres, aliases, edges, name=path.stem)

    def to_file(self, path: str | Path) -> None:
        lines = ["[GENRES]", *self.genres, "[ALIASES]"]
        lines += ["\t".join(g) for g in self.aliases]
        lines.append("[EDGES]")
        lines += ["\t".join(e) for e in self.edges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def as_tag_system(self) -> TagSystem:
        rels = list(self.edges)
        for group in self.aliases:
            rels += [(group[0], "alias", other) for other in group[1:]]
        return TagSystem(self.name, self.genres, rels)


class PivotMapper:
    """Maps normalized tags onto the pivot ontology.

    ``concept_genres`` is the set of words that occur as standalone tags in
    any ingested tag system (see :meth:`GenreGraph.concept_genre_words`).
    """

    def __init__(
        self,
        pivot: PivotOntology,
        normalizer: Normalizer,
        concept_genres: Iterable[str] = (),
    ):
        self.pivot = pivot
        self.normalizer = normalizer
        self.concept_genres = frozenset(concept_genres)
        self.labels = list(pivot.genres)
        self.column = {label: i for i, label in enumerate(self.labels)}

        group_of = {}
        members: list[tuple[str, ...]] = []
        for group in pivot.aliases:
            for label in group:
                group_of[label] = len(members)
            members.append(group)
        for label in self.labels:
            if label not in group_of:
                group_of[label] = len(members)
                members.append((label,))
        self.group_of = group_of
        self.members = members

        # subgenre edges point child -> parent so in-degree counts subgenres
        self.hierarchy = nx.DiGraph()
        self.hierarchy.add_nodes_from(range(len(members)))
        self.adjacent: dict[int, set[int]] = defaultdict(set)
        for src, kind, dst in pivot.edges:
            a, b = group_of[src], group_of[dst]
            if a == b:
                continue
            self.adjacent[a].add(b)
            self.adjacent[b].add(a)
            if kind == "subgenre":
                self.hierarchy.add_edge(b, a)

        self.forms: dict[str, NormalizedForm] = {}
        self.by_key: dict[str, set[int]] = defaultdict(set)
        self.by_word: dict[str, set[str]] = defaultdict(set)
        for label in self.labels:
            try:
                form = normalizer(label)
            except DegenerateTagError:
                continue
            self.forms[label] = form
            self.by_key[form.canonical_key].add(group_of[label])
            for w in form.words:
                self.by_word[w].add(label)

    # -- helpers ----------------------------------------------------------

    def _expand(self, groups: Mapping[int, float]) -> Row:
        row = {}
        for g, v in groups.items():
            for label in self.members[g]:
                row[label] = v
        return row

    def _contract(self, row: Mapping[str, float]) -> dict[int, float]:
        return {self.group_of[label]: v for label, v in row.items()}

    def _uniform(self, groups: Iterable[int]) -> Row:
        groups = sorted(set(groups))
        share = 1.0 / len(groups)
        return self._expand({g: share for g in groups})

    # -- mapping steps ----------------------------------------------------

    def map_exact(self, form: NormalizedForm) -> Row | None:
        """Every alias of every pivot genre with the same canonical key gets 1."""
        hits = self.by_key.get(form.canonical_key)
        if not hits:
            return None
        return self._expand({g: 1.0 for g in hits})

    def map_with_parent(self, form: NormalizedForm, parents: Sequence[NormalizedForm]) -> Row | None:
        """Exact match of the tag compounded with each of its parents."""
        hits: set[int] = set()
        for parent in parents:
            key = " ".join(sorted(form.tokens + parent.tokens))
            hits |= self.by_key.get(key, set())
        if not hits:
            return None
        return self._expand({g: 1.0 for g in hits})

    def map_concept_genre(self, word: str) -> Row | None:
        """Most-subgenred pivot genres among those whose name contains ``word``."""
        labels = self.by_word.get(word)
        if not labels:
            return None
        groups = {self.group_of[label] for label in labels}
        sub = self.hierarchy.subgraph(groups)
        degree = dict(sub.in_degree())
        top = max(degree.values())
        return self._uniform(g for g, d in degree.items() if d == top)

    def map_composed_genre(self, form: NormalizedForm) -> Row | None:
        """Pivot genres sharing most words, refined by shared concept genres."""
        words = form.words
        shared: dict[int, int] = {}
        for w in words:
            for label in self.by_word.get(w, ()):
                n = len(words & self.forms[label].words)
                g = self.group_of[label]
                shared[g] = max(shared.get(g, 0), n)
        if not shared:
            return None
        top = max(shared.values())
        selected = [g for g, n in shared.items() if n == top]
        concept = words & self.concept_genres

        def n_concept(g):
            return max(
                len(concept & self.forms[label].words)
                for label in self.members[g]
                if label in self.forms
            )

        scores = {g: n_concept(g) for g in selected}
        best = max(scores.values())
        if best > 0:
            selected = [g for g in selected if scores[g] == best]
        return self._uniform(selected)

    def propagate(self, row: Mapping[str, float]) -> Row:
        """Pass half of each base score to one-hop pivot neighbours.

        Neighbour gains add up; base-scored genres keep their value.
        """
        base = self._contract({k: v for k, v in row.items() if v > 0})
        out = dict(base)
        for g, v in base.items():
            for nb in self.adjacent.get(g, ()):
                if nb in base:
                    continue
                out[nb] = out.get(nb, 0.0) + v / 2
        return self._expand(out)

    def map_form(
        self, form: NormalizedForm, parents: Sequence[NormalizedForm] = ()
    ) -> tuple[Row | None, str]:
        """Steps 2-4 in priority order, then propagation; returns (row, step)."""
        row = self.map_exact(form)
        step = "exact"
        if row is None:
            row, step = self.map_with_parent(form, parents), "parent"
        if row is None:
            if len(form.words) == 1:
                row, step = self.map_concept_genre(form.tokens[0]), "concept-genre"
            else:
                row, step = self.map_composed_genre(form), "composed-genre"
        if row is None:
            return None, "unmapped"
        return self.propagate(row), step


@dataclass
class MappingMatrix:
    """Per-tag score rows of one tag system over the pivot labels."""

    system: str
    tags: list[str]
    labels: list[str]
    matrix: sp.csr_matrix
    steps: dict[str, str] = field(default_factory=dict)

    @property
    def unmapped(self) -> list[str]:
        return [t for t in self.tags if self.steps.get(t) == "unmapped"]

    def row(self, tag: str) -> Row:
        i = self.tags.index(tag)
        r = self.matrix.getrow(i)
        return {self.labels[j]: float(v) for j, v in zip(r.indices, r.data)}

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @staticmethod
    def stack(matrices: Sequence["MappingMatrix"], qualify: bool = True) -> "MappingMatrix":
        """Union of several systems' rows; names become ``system:tag`` if ``qualify``."""
        labels = matrices[0].labels
        if any(m.labels != labels for m in matrices):
            raise ValueError("mapping matrices are over different pivots")
        tags, steps = [], {}
        for m in matrices:
            for t in m.tags:
                name = f"{m.system}:{t}" if qualify else t
                tags.append(name)
                steps[name] = m.steps.get(t, "")
        return MappingMatrix(
            "+".join(m.system for m in matrices), tags, labels,
            sp.vstack([m.matrix for m in matrices]).tocsr(), steps,
        )


def build_mapping_matrix(system: TagSystem, mapper: PivotMapper) -> MappingMatrix:
    """Map every tag of ``system``; unmapped tags average their relatives' rows."""
    norm = mapper.normalizer
    rows: dict[str, Row] = {}
    steps: dict[str, str] = {}
    for tag in system.tags:
        try:
            form = norm(tag)
        except DegenerateTagError:
            steps[tag] = "unmapped"
            continue
        parents = []
        for p in system.parents(tag):
            try:
                parents.append(norm(p))
            except DegenerateTagError:
                pass
        row, step = mapper.map_form(form, parents)
        steps[tag] = step
        if row is not None:
            rows[tag] = row

    fallback = {}
    for tag in system.tags:
        if tag in rows:
            continue
        row = fallback_average(tag, system, rows)
        if row:
            fallback[tag] = row
            steps[tag] = "fallback"
    rows.update(fallback)

    index = {t: i for i, t in enumerate(system.tags)}
    r, c, v = [], [], []
    for tag, row in rows.items():
        for label, score in row.items():
            r.append(index[tag])
            c.append(mapper.column[label])
            v.append(score)
    matrix = sp.csr_matrix((v, (r, c)), shape=(len(system.tags), len(mapper.labels)))
    matrix.sort_indices()
    return MappingMatrix(system.name, list(system.tags), list(mapper.labels), matrix, steps)


def fallback_average(tag: str, system: TagSystem, rows: Mapping[str, Row]) -> Row:
    """Element-wise mean of the rows of the tag's mapped relatives (single pass)."""
    relatives = [rows[t] for t in system.related(tag) if rows.get(t)]
    if not relatives:
        return {}
    acc: dict[str, float] = defaultdict(float)
    for row in relatives:
        for label, v in row.items():
            acc[label] += v
    return {label: v / len(relatives) for label, v in acc.items()}


# ---------------------------------------------------------------------------
# Translation table
# ---------------------------------------------------------------------------


@dataclass
class TranslationTable:
    """Target x source relatedness weights."""

    targets: list[str]
    sources: list[str]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.targets), len(self.sources)):
            raise ValueError("weights shape does not match vocabularies")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("translation weights must be finite")

    @property
    def T(self) -> "TranslationTable":
        return TranslationTable(list(self.sources), list(self.targets), self.weights.T.copy())

    def reindex(self, targets: Sequence[str], sources: Sequence[str]) -> "TranslationTable":
        """Table over other vocabularies; unknown tags get zero weights."""
        ti = {t: i for i, t in enumerate(self.targets)}
        si = {s: j for j, s in enumerate(self.sources)}
        out = np.zeros((len(targets), len(sources)))
        rows = [(a, ti[t]) for a, t in enumerate(targets) if t in ti]
        cols = [(b, si[s]) for b, s in enumerate(sources) if s in si]
        if rows and cols:
            ra, rb = zip(*rows)
            ca, cb = zip(*cols)
            out[np.ix_(ra, ca)] = self.weights[np.ix_(rb, cb)]
        return TranslationTable(list(targets), list(sources), out)

    def score(self, X) -> np.ndarray:
        """Scores for a batch of binary source rows (dense or sparse)."""
        return np.asarray(X @ self.weights.T)

    def to_file(self, path: str | Path, delimiter: str = "\t") -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(["target\\source", *self.sources])
            for t, row in zip(self.targets, self.weights):
                w.writerow([t, *(f"{x:.9g}" for x in row)])

    @classmethod
    def from_file(cls, path: str | Path, delimiter: str = "\t") -> "TranslationTable":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty translation table") from None
            sources = header[1:]
            targets, rows = [], []
            for lineno, rec in enumerate(reader, 2):
                if len(rec) != len(header):
                    raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
                targets.append(rec[0])
                rows.append([float(x) for x in rec[1:]])
        weights = np.array(rows, dtype=float).reshape(len(targets), len(sources))
        return cls(targets, sources, weights)


def build_translation_table(source: MappingMatrix, target: MappingMatrix) -> TranslationTable:
    """Cosine similarity between every target row and every source row."""
    if source.labels != target.labels:
        raise ValueError("mapping matrices are over different pivots")

    def unit_rows(m):
        norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        return sp.diags(inv) @ m

    zt, zs = unit_rows(target.matrix), unit_rows(source.matrix)
    weights = np.asarray((zt @ zs.T).todense())
    np.clip(weights, 0.0, 1.0, out=weights)
    return TranslationTable(list(target.tags), list(source.tags), weights)


def kb_score(annotation: Iterable[str], table: TranslationTable) -> np.ndarray:
    """Sum of the table columns of the annotated source tags."""
    index = {s: j for j, s in enumerate(table.sources)}
    x = np.zeros(len(table.sources))
    for tag in annotation:
        j = index.get(tag)
        if j is None:
            logger.warning("unknown source tag %r ignored", tag)
            continue
        x[j] = 1.0
    return table.weights @ x
