"""End-to-end knowledge-based table construction from taxonomy files."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .graph import GenreGraph, TagSystem
from .kb import (
    MappingMatrix,
    PivotMapper,
    PivotOntology,
    TranslationTable,
    build_mapping_matrix,
    build_translation_table,
)
from .normalizer import DIRECT_INSERT_MAX_LEN, Normalizer, SplitThresholds, WordFrequencyTable

__all__ = ["KBBuild", "build_normalizer", "build_kb"]


@dataclass
class KBBuild:
    normalizer: Normalizer
    graph: GenreGraph
    mapper: PivotMapper
    source: MappingMatrix
    target: MappingMatrix
    table: TranslationTable


def build_normalizer(
    systems: Sequence[TagSystem],
    pivot: PivotOntology,
    table: WordFrequencyTable | None = None,
    thresholds: SplitThresholds | None = None,
    min_split_len: int = DIRECT_INSERT_MAX_LEN,
) -> Normalizer:
    tags = [t for s in systems for t in s.tags]
    return Normalizer.from_tags(tags, pivot.genres, table, thresholds, min_split_len)


def build_kb(
    sources: Sequence[TagSystem],
    target: TagSystem,
    pivot: PivotOntology,
    table: WordFrequencyTable | None = None,
    thresholds: SplitThresholds | None = None,
    min_split_len: int = DIRECT_INSERT_MAX_LEN,
) -> KBBuild:
    """Normalizer, graph, mapping matrices and the cosine table.

    Source rows are named ``system:tag`` (the corpus vocabulary); target
    rows keep their plain names. Concept genres are read off a graph over
    all systems, the pivot included.
    """
    systems = [*sources, target]
    names = [s.name for s in systems]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate tag system names in {names}")
    norm = build_normalizer(systems, pivot, table, thresholds, min_split_len)
    graph = GenreGraph(norm)
    for system in systems:
        graph.add_tag_system(system)
    pivot_system = pivot.as_tag_system()
    if pivot_system.name in names:
        pivot_system = TagSystem(f"{pivot_system.name}-pivot", pivot_system.tags, pivot_system.relations)
    graph.add_tag_system(pivot_system)
    graph.freeze()

    mapper = PivotMapper(pivot, norm, graph.concept_genre_words())
    src = MappingMatrix.stack([build_mapping_matrix(s, mapper) for s in sources], qualify=True)
    tgt = build_mapping_matrix(target, mapper)
    return KBBuild(norm, graph, mapper, src, tgt, build_translation_table(src, tgt))
