"""
Risk groups, Kaplan-Meier curves and the log-rank test
======================================================

Scores above zero are high risk, the rest low risk. Each group gets a
product-limit survival curve and the two are compared with a log-rank test.
"""

import numpy as np

from fusionsurv import kaplan_meier, log_rank_test, stratify
from fusionsurv.simdata import simulate_two_groups

times, events, high = simulate_two_groups(1000, hazard_ratio=2.0, seed=0)
scores = np.where(high, 0.8, -0.8)

groups = stratify(scores)
print("high", groups.n_high, "low", groups.n_low)

###############################################################################
# Curves
# ------

for label, mask in (("low", ~groups.high), ("high", groups.high)):
    km = kaplan_meier(times[mask], events[mask])
    s12, s36, s60 = km.survival_at([12, 36, 60])
    print(f"{label:>4}: S(12)={s12:.3f}  S(36)={s36:.3f}  S(60)={s60:.3f}")

###############################################################################
# Test
# ----

lr = log_rank_test(groups, times, events)
print(f"chi-square {lr.statistic:.2f}, p {lr.format_p()}")
