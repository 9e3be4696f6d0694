"""
The Cox partial-likelihood loss
===============================

The training objective of every model in the package is the negative Cox
partial log-likelihood, averaged over events. This script evaluates it on a
few tiny inputs and checks the analytic gradient against finite differences.
"""

import numpy as np

from fusionsurv import cox_npll, cox_npll_gradient

###############################################################################
# Two events, equal scores
# ------------------------
# The first event has two subjects at risk, the second only itself, so the
# loss is ``(log 2 + log 1) / 2``.

print(cox_npll([0.0, 0.0], [1.0, 2.0], [1, 1]), np.log(2) / 2)

###############################################################################
# Censoring and ties
# ------------------
# Censored subjects contribute only through the risk sets of earlier
# events. Tied event times share one denominator (Breslow).

times = np.array([2.0, 2.0, 3.0, 5.0, 8.0])
events = np.array([1, 1, 0, 1, 0], bool)
scores = np.array([0.4, -0.1, 0.3, 0.0, -1.2])
print("loss", cox_npll(scores, times, events))
print("loss after shifting all scores by 3", cox_npll(scores + 3, times, events))

###############################################################################
# Gradient check
# --------------

g = cox_npll_gradient(scores, times, events)
h = 1e-6
fd = np.array([(cox_npll(scores + h * np.eye(5)[k], times, events)
                - cox_npll(scores - h * np.eye(5)[k], times, events)) / (2 * h) for k in range(5)])
print("analytic", np.round(g, 6))
print("numeric ", np.round(fd, 6))
print("gradient sums to", g.sum())
