"""Learning curves of KB, ML and MAP on a planted synthetic corpus.

The default run is reduced (6 factors, 2 folds, 5,000 items) and takes a
few seconds; pass --full for the 14-factor, 4-fold, 20,000-item grid.

    python3 demos/learning_curves.py [--full]
"""

# %%
import sys

from genretrans.evaluation import default_factors, format_summary, run_experiment
from genretrans.synthetic import make_synthetic

full = "--full" in sys.argv
setup = make_synthetic(n_items=20_000 if full else 5_000, seed=0)
factors = default_factors() if full else [2.0 ** e for e in (-10, -8, -6, -4, -2, 0)]
print(f"{len(setup.corpus)} items, {len(setup.corpus.sources)} source tags, {len(setup.corpus.targets)} target tags")

# %% KB ignores the data, ML ignores the table, MAP uses both.
reports = run_experiment(
    setup.corpus,
    methods=("KB", "ML", "MAP", "MAP-nobias"),
    factors=factors,
    k=4 if full else 2,
    kb_table=setup.kb_table,
)
print(format_summary(reports))

# %% Target tags that never occur in the training subsample.
# Only the table can say anything about them.
print(format_summary([r for r in reports if r.factor == min(factors)], absent_only=True))
