"""Tag systems and the multi-source genre graph.

A relation ``(from, kind, to)`` reads "``to`` is a ``kind`` of ``from``":
``("rock", "subgenre", "stoner rock")`` says stoner rock is a subgenre of
rock. The same convention holds for the pivot ontology dump.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import networkx as nx

from .normalizer import DegenerateTagError, Normalizer

__all__ = [
    "RELATION_KINDS",
    "EDGE_KINDS",
    "TagSystem",
    "GenreGraph",
    "read_sections",
]

RELATION_KINDS = ("subgenre", "alias", "origin", "derivative")
EDGE_KINDS = ("membership", "relation", "normalization", "composition")
NODE_KINDS = ("source-root", "original-tag", "composed-genre", "concept", "concept-genre")
NORMALIZED = "normalized"


def read_sections(path: str | Path, allowed: Iterable[str]) -> dict[str, list[tuple[int, str]]]:
    """Split a line-oriented file into ``[SECTION]`` blocks.

    Blank lines and lines starting with ``#`` are ignored. Returns
    ``{section: [(lineno, line), ...]}``.
    """
    allowed = tuple(allowed)
    out: dict[str, list[tuple[int, str]]] = {s: [] for s in allowed}
    current = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            stripped = line.strip()
            if stripped.startswith("[") and stripped.endswith("]"):
                current = stripped[1:-1].strip().upper()
                if current not in out:
                    raise ValueError(f"{path}:{lineno}: unknown section [{current}]")
                continue
            if current is None:
                raise ValueError(f"{path}:{lineno}: content before any section header")
            out[current].append((lineno, line))
    return out


@dataclass
class TagSystem:
    """A named tag vocabulary with typed relations between its tags."""

    name: str
    tags: list[str]
    relations: list[tuple[str, str, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.name or ":" in self.name:
            raise ValueError(f"invalid tag system name {self.name!r}")
        seen = dict.fromkeys(t.strip() for t in self.tags)
        seen.pop("", None)
        self.tags = list(seen)
        known = set(self.tags)
        rels = []
        for src, kind, dst in self.relations:
            if kind not in RELATION_KINDS:
                raise ValueError(f"unknown relation kind {kind!r}")
            for end in (src, dst):
                if end not in known:
                    raise ValueError(f"relation endpoint {end!r} is not a tag of {self.name}")
            rels.append((src, kind, dst))
            if kind == "alias":
                rels.append((dst, kind, src))
        self.relations = list(dict.fromkeys(rels))

    @classmethod
    def from_file(cls, path: str | Path, name: str | None = None) -> "TagSystem":
        """Read a ``[TAGS]`` / ``[RELATIONS]`` file; name defaults to the file stem."""
        path = Path(path)
        sec = read_sections(path, ("TAGS", "RELATIONS"))
        tags = [line.strip() for _, line in sec["TAGS"]]
        rels = []
        for lineno, line in sec["RELATIONS"]:
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'from<TAB>kind<TAB>to'")
            rels.append(tuple(p.strip() for p in parts))
        return cls(name or path.stem, tags, rels)

    def to_file(self, path: str | Path) -> None:
        lines = ["[TAGS]", *self.tags, "[RELATIONS]"]
        emitted = set()
        for src, kind, dst in self.relations:
            if kind == "alias" and (dst, kind, src) in emitted:
                continue
            emitted.add((src, kind, dst))
            lines.append(f"{src}\t{kind}\t{dst}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def parents(self, tag: str) -> list[str]:
        return [s for s, k, d in self.relations if k == "subgenre" and d == tag]

    def children(self, tag: str) -> list[str]:
        return [d for s, k, d in self.relations if k == "subgenre" and s == tag]

    def aliases(self, tag: str) -> list[str]:
        return [d for s, k, d in self.relations if k == "alias" and s == tag]

    def related(self, tag: str) -> list[str]:
        """Parents, children and aliases, without duplicates."""
        rel = self.parents(tag) + self.children(tag) + self.aliases(tag)
        return [t for t in dict.fromkeys(rel) if t != tag]


class GenreGraph:
    """Undirected genre graph over several tag systems.

    Node ids are tuples: ``("root", system)``, ``("tag", system, label)``
    and ``("norm", canonical_key)``. Every edge carries a ``kind`` from
    :data:`EDGE_KINDS`; relation edges also keep ``relation`` and the
    ``head`` label they were declared from.
    """

    def __init__(self, normalizer: Normalizer | None = None):
        self.normalizer = normalizer or Normalizer()
        self.g = nx.MultiGraph()
        self.systems: list[str] = []

    # -- construction -----------------------------------------------------

    def add_tag_system(self, system: TagSystem) -> "GenreGraph":
        if nx.is_frozen(self.g):
            raise RuntimeError("graph is frozen")
        if system.name in self.systems or system.name == NORMALIZED:
            raise ValueError(f"tag system {system.name!r} already in graph")
        self.systems.append(system.name)
        root = ("root", system.name)
        self.g.add_node(root, kind="source-root", owner=system.name, label=system.name)
        for tag in system.tags:
            node = ("tag", system.name, tag)
            self.g.add_node(node, kind="original-tag", owner=system.name, label=tag)
            self.g.add_edge(root, node, kind="membership")
            try:
                form = self.normalizer(tag)
            except DegenerateTagError:
                continue
            self._add_normalized(node, form.tokens)
        for src, kind, dst in system.relations:
            if kind == "alias" and src > dst:
                continue
            self.g.add_edge(
                ("tag", system.name, src),
                ("tag", system.name, dst),
                kind="relation",
                relation=kind,
                head=src,
            )
        self._reclassify()
        return self

    def _add_normalized(self, original, tokens) -> None:
        words = sorted(set(tokens))
        key = " ".join(sorted(tokens))
        norm = ("norm", key)
        if norm not in self.g:
            self.g.add_node(norm, kind="concept-genre" if len(words) == 1 else "composed-genre",
                            owner=NORMALIZED, label=key)
        self.g.add_edge(original, norm, kind="normalization")
        if len(tokens) < 2:
            return
        for w in words:
            wn = ("norm", w)
            if wn not in self.g:
                self.g.add_node(wn, kind="concept", owner=NORMALIZED, label=w)
            if not self._has_edge(norm, wn, "composition"):
                self.g.add_edge(norm, wn, kind="composition")

    def _has_edge(self, u, v, kind) -> bool:
        data = self.g.get_edge_data(u, v)
        return bool(data) and any(d["kind"] == kind for d in data.values())

    def _reclassify(self) -> None:
        for node, data in self.g.nodes(data=True):
            if node[0] != "norm" or " " in node[1]:
                continue
            standalone = any(
                d["kind"] == "normalization"
                for _, _, d in self.g.edges(node, data=True)
            )
            data["kind"] = "concept-genre" if standalone else "concept"

    def freeze(self) -> "GenreGraph":
        nx.freeze(self.g)
        return self

    # -- queries ----------------------------------------------------------

    def node_kind(self, node) -> str:
        return self.g.nodes[node]["kind"]

    def classify_word(self, word: str) -> str:
        node = ("norm", word)
        if " " in word or node not in self.g:
            raise KeyError(f"unknown word {word!r}")
        return self.g.nodes[node]["kind"]

    def concept_genre_words(self) -> frozenset[str]:
        return frozenset(
            n[1] for n, d in self.g.nodes(data=True) if d["kind"] == "concept-genre"
        )

    def neighbors(self, node, kinds: Iterable[str]) -> set:
        if node not in self.g:
            raise KeyError(f"unknown node {node!r}")
        kinds = set(kinds)
        return {
            v for _, v, d in self.g.edges(node, data=True) if d["kind"] in kinds
        }

    def normalized_node(self, system: str, tag: str):
        """The normalized-layer node linked to an original tag, or None."""
        nodes = self.neighbors(("tag", system, tag), {"normalization"})
        return next(iter(nodes), None)

    def signature(self) -> tuple[tuple, tuple]:
        """Sorted node and edge lists; equal signatures mean equal graphs."""
        nodes = tuple(sorted((n, d["kind"]) for n, d in self.g.nodes(data=True)))
        edges = []
        for u, v, d in self.g.edges(data=True):
            a, b = sorted((u, v))
            edges.append((a, b, d["kind"], d.get("relation", ""), d.get("head", "")))
        return nodes, tuple(sorted(edges))

    # -- serialization ----------------------------------------------------

    def dump(self, path: str | Path) -> None:
        """Write nodes per kind, then adjacency lists (each edge once)."""
        nodes, _ = self.signature()
        index = {n: i for i, (n, _) in enumerate(nodes)}
        lines = ["# genre graph", "[SYSTEMS]", *self.systems]
        for kind in NODE_KINDS:
            lines.append(f"[{kind.upper()}]")
            for n, k in nodes:
                if k == kind:
                    lines.append("\t".join([str(index[n]), *n[1:]]))
        lines.append("[ADJACENCY]")
        for n, _ in nodes:
            i = index[n]
            nbrs = []
            for _, v, d in self.g.edges(n, data=True):
                j = index[v]
                if j < i:
                    continue
                nbrs.append(
                    (j, d["kind"], d.get("relation", ""), d.get("head", ""))
                )
            for j, kind, rel, head in sorted(nbrs):
                fields_ = [str(i), str(j), kind]
                if kind == "relation":
                    fields_ += [rel, head]
                lines.append("\t".join(fields_))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, normalizer: Normalizer | None = None) -> "GenreGraph":
        sections = ("SYSTEMS", *(k.upper() for k in NODE_KINDS), "ADJACENCY")
        sec = read_sections(path, sections)
        graph = cls(normalizer)
        graph.systems = [line.strip() for _, line in sec["SYSTEMS"]]
        index = {}
        for kind in NODE_KINDS:
            for lineno, line in sec[kind.upper()]:
                parts = line.split("\t")
                idx = int(parts[0])
                if kind == "source-root":
                    node, owner, label = ("root", parts[1]), parts[1], parts[1]
                elif kind == "original-tag":
                    node, owner, label = ("tag", parts[1], parts[2]), parts[1], parts[2]
                else:
                    node, owner, label = ("norm", parts[1]), NORMALIZED, parts[1]
                index[idx] = node
                graph.g.add_node(node, kind=kind, owner=owner, label=label)
        for lineno, line in sec["ADJACENCY"]:
            parts = line.split("\t")
            try:
                u, v = index[int(parts[0])], index[int(parts[1])]
            except (KeyError, ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: bad adjacency line") from None
            attrs = {"kind": parts[2]}
            if parts[2] == "relation":
                attrs.update(relation=parts[3], head=parts[4])
            graph.g.add_edge(u, v, **attrs)
        return graph
