"""Walk through the knowledge-based translation on the small fixture taxonomies.

Run from the repository root:  python3 demos/kb_walkthrough.py
"""

# %%
from pathlib import Path

import numpy as np

from genretrans import PivotOntology, TagSystem, build_kb, kb_score

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

lastfm = TagSystem.from_file(DATA / "lastfm.txt")
discogs = TagSystem.from_file(DATA / "discogs.txt")
pivot = PivotOntology.from_file(DATA / "ontology.txt")
print(f"{len(lastfm.tags)} lastfm tags, {len(discogs.tags)} discogs tags, {len(pivot.genres)} pivot genres")

# %% Normalization: spelling variants collapse onto one canonical key.
kb = build_kb([lastfm], discogs, pivot)
norm = kb.normalizer
for raw in ["poprock", "Rock/Pop", "Pop Rock", "progressive death metal"]:
    form = norm(raw)
    print(f"{raw!r:28} -> {form.canonical_key!r:28} via {form.stages}")

# %% Mapping each source tag onto the pivot ontology.
# The step records which rule fired first; the row is after propagation.
src = kb.source
for tag in src.tags:
    row = src.row(tag)
    top = ", ".join(f"{g} {v:.2f}" for g, v in sorted(row.items(), key=lambda kv: -kv[1])[:3])
    print(f"{tag:32} {src.steps[tag]:15} {top}")

# %% The translation table: cosine of pivot rows, clipped to [0, 1].
table = kb.table
print("\ntable shape (targets x sources):", table.weights.shape)
j = table.sources.index("lastfm:stoner")
for i in np.argsort(-table.weights[:, j])[:3]:
    print(f"  lastfm:stoner -> {table.targets[i]:12} {table.weights[i, j]:.3f}")

# %% Translating an annotation is a single matrix-vector product.
scores = kb_score(["lastfm:acid house", "lastfm:pop"], table)
best = sorted(zip(table.targets, scores), key=lambda kv: -kv[1])[:3]
print("\n{acid house, pop} ->", ", ".join(f"{t} {s:.3f}" for t, s in best))
