"""
Concordance index with a bootstrap interval
===========================================

Harrell's C-index counts comparable pairs where the higher score belongs to
the subject who failed first. The percentile bootstrap gives an interval.
"""

import numpy as np

from fusionsurv import SyntheticSpec, concordance_index, concordance_with_ci, generate

sc = generate(SyntheticSpec(n=500, seed=2))

###############################################################################
# Point estimate and pair counts
# ------------------------------

r = concordance_index(sc.times, sc.events, sc.true_risk)
print(r.concordant, "concordant,", r.discordant, "discordant,", r.tied_score, "tied")
print("C-index", round(r.value, 4))

###############################################################################
# Noise in the scores lowers the index; negating the scores mirrors it.

noisy = sc.true_risk + np.random.default_rng(0).normal(0, 1.0, 500)
print("noisy", round(concordance_index(sc.times, sc.events, noisy).value, 4))
print("negated", round(concordance_index(sc.times, sc.events, -sc.true_risk).value, 4))

###############################################################################
# Bootstrap interval
# ------------------
# Replicate ``b`` resamples with seed ``seed + b``, so the interval does not
# depend on how the work is batched.

res = concordance_with_ci(sc.times, sc.events, sc.true_risk, B=1000, seed=0)
print(res.format())
