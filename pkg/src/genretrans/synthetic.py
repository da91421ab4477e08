"""Synthetic parallel corpora with a planted translation.

Targets are drawn from a logistic model with a sparse planted weight
matrix: a few strong positive links per target, plus negative weights
from the most popular source tags to the targets they are not linked to.
The knowledge-based table is a corrupted, non-negative copy of the link
structure (some links lost, spurious links added); it cannot express the
negative associations, as cosine-based tables cannot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .corpus import AnnotatedItem, ParallelCorpus
from .kb import TranslationTable

__all__ = ["SyntheticSetup", "make_synthetic"]


@dataclass
class SyntheticSetup:
    corpus: ParallelCorpus
    kb_table: TranslationTable
    W_true: np.ndarray
    b_true: np.ndarray


def make_synthetic(
    n_sources: int = 60,
    n_targets: int = 40,
    n_items: int = 20_000,
    n_systems: int = 2,
    items_per_artist: float = 5.0,
    mean_extra_tags: float = 1.5,
    links_per_target: int = 3,
    drop_link: float = 0.25,
    spurious_links: int = 3,
    n_popular_negative: int = 10,
    negative_weight: tuple[float, float] = (-1.5, -0.5),
    positive_noise: float = 0.005,
    negative_noise: float = 0.1,
    seed: int = 0,
) -> SyntheticSetup:
    rng = np.random.default_rng(seed)
    per_system = -(-n_sources // n_systems)
    sources = [f"src{j // per_system}:s{j:03d}" for j in range(n_sources)]
    targets = [f"t{i:03d}" for i in range(n_targets)]

    popularity = 1.0 / (np.arange(n_sources) + 4.0) ** 0.8
    popularity = rng.permutation(popularity / popularity.sum())

    W = np.zeros((n_targets, n_sources))
    links = np.zeros_like(W, dtype=bool)
    for t in range(n_targets):
        cols = rng.choice(n_sources, size=links_per_target, replace=False)
        W[t, cols] = rng.uniform(2.0, 4.0, size=links_per_target)
        links[t, cols] = True
    # popular source tags make most unrelated targets less likely
    popular = np.argsort(-popularity)[:n_popular_negative]
    neg = rng.uniform(*negative_weight, size=(n_targets, len(popular)))
    W[:, popular] = np.where(links[:, popular], W[:, popular], neg)
    b = rng.uniform(-4.0, -2.5, size=n_targets)

    kb = np.where(links, rng.uniform(0.6, 1.0, size=W.shape), 0.0)
    kb[links & (rng.random(W.shape) < drop_link)] = 0.0
    for t in range(n_targets):
        free = np.flatnonzero(~links[t])
        cols = rng.choice(free, size=spurious_links, replace=False)
        kb[t, cols] = rng.uniform(0.2, 0.7, size=spurious_links)

    items: list[AnnotatedItem] = []
    n_artists = max(int(n_items / items_per_artist), 1)
    serial = 0
    while len(items) < n_items:
        batch = 2 * (n_items - len(items)) + 100
        n_tags = 1 + rng.poisson(mean_extra_tags, size=batch)
        X = np.zeros((batch, n_sources))
        for i, m in enumerate(np.minimum(n_tags, n_sources)):
            X[i, rng.choice(n_sources, size=m, replace=False, p=popularity)] = 1.0
        Y = rng.random((batch, n_targets)) < expit(X @ W.T + b)
        Y = (Y & (rng.random(Y.shape) >= negative_noise)) | (rng.random(Y.shape) < positive_noise)
        artists = rng.integers(0, n_artists, size=batch)
        for i in range(batch):
            tgt = frozenset(targets[t] for t in np.flatnonzero(Y[i]))
            serial += 1
            if not tgt:
                continue
            src = frozenset(sources[j] for j in np.flatnonzero(X[i]))
            items.append(AnnotatedItem(f"item{serial:07d}", f"artist{artists[i]:05d}", src, tgt))
            if len(items) == n_items:
                break

    corpus = ParallelCorpus.from_items(items, sources, targets)
    return SyntheticSetup(corpus, TranslationTable(targets, sources, kb), W, b)
