"""
Standardizing, fusing and filtering feature blocks
==================================================

Feature tables carry a block label per column. Blocks are fused by
concatenation; a greedy correlation filter removes redundant columns.
"""

import numpy as np

from fusionsurv import (FeatureTable, apply_standardizer, fit_standardizer, fuse_concat,
                        select_by_correlation)

rng = np.random.default_rng(0)
ids = [f"S{i}" for i in range(200)]
factor = rng.normal(size=(200, 1))
loadings = np.linspace(0.0, 0.95, 10)
radiomics = FeatureTable(ids, [("radiomics", f"r{j}") for j in range(10)],
                         5 + 3 * (loadings * factor + np.sqrt(1 - loadings ** 2)
                                  * rng.normal(size=(200, 10))))
embedding = FeatureTable(ids, [("indications", f"e{j}") for j in range(4)],
                         rng.normal(size=(200, 4)))

###############################################################################
# Fusion and standardization
# --------------------------

table = fuse_concat([embedding, radiomics])
print(table.block_widths())
params = fit_standardizer(table, rows=ids[:160], blocks=["radiomics"])
z = apply_standardizer(table, params)
train_z = z.rows(ids[:160]).blocks(["radiomics"]).values
print("largest |mean| on training rows", np.abs(train_z.mean(axis=0)).max())
print("std on training rows", np.round(train_z.std(axis=0), 12))

###############################################################################
# Correlation filter
# ------------------
# Lower thresholds keep fewer columns. Every kept pair is below the
# threshold.

for t in (0.2, 0.5, 0.8, 1.0):
    mask = select_by_correlation(table, rows=ids[:160], threshold=t, blocks=["radiomics"])
    print(f"threshold {t}: {len(mask.retained)} kept  {list(mask.retained)}")
