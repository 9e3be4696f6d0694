"""Evaluation: Harrell's C-index, bootstrap intervals, Kaplan-Meier curves,
risk stratification at zero and the two-group log-rank test."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ._io import ValidationError, atomic_write_text

__all__ = [
    "CIndexResult",
    "KmCurve",
    "LogRankResult",
    "StratifiedGroups",
    "concordance_index",
    "concordance_counts",
    "bootstrap_ci",
    "concordance_with_ci",
    "kaplan_meier",
    "stratify",
    "log_rank_test",
    "km_export",
    "format_p_value",
]

# above this size the O(n^2) pair matrix is replaced by a Fenwick-tree sweep
_PAIRWISE_MAX_N = 2000


@dataclass
class CIndexResult:
    value: float
    concordant: int
    discordant: int
    tied_score: int
    comparable_pairs: int
    ci: dict | None = None

    @property
    def lower(self):
        return None if self.ci is None else self.ci["lower"]

    @property
    def upper(self):
        return None if self.ci is None else self.ci["upper"]

    def format(self, digits=4):
        """Table-style cell, e.g. ``0.6750 (0.6429, 0.7121)``."""
        s = f"{self.value:.{digits}f}"
        if self.ci is not None:
            s += f" ({self.ci['lower']:.{digits}f}, {self.ci['upper']:.{digits}f})"
        return s

    def to_dict(self):
        d = {
            "value": self.value,
            "concordant": self.concordant,
            "discordant": self.discordant,
            "tied": self.tied_score,
            "pairs": self.comparable_pairs,
        }
        if self.ci is not None:
            d["ci"] = dict(self.ci)
        return d


def _as_arrays(times, events, scores=None):
    times = np.asarray(times, dtype=float).ravel()
    events = np.asarray(events).ravel().astype(bool)
    if times.shape != events.shape:
        raise ValidationError("times and events differ in length")
    if scores is None:
        return times, events
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.shape != times.shape:
        raise ValidationError("scores and times differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite risk score")
    return times, events, scores


def _pair_matrices(times, events, scores):
    ti, tj = times[:, None], times[None, :]
    comparable = events[:, None] & ((ti < tj) | ((ti == tj) & ~events[None, :]))
    ri, rj = scores[:, None], scores[None, :]
    return comparable & (ri > rj), comparable & (ri < rj), comparable & (ri == rj)


def _counts_pairwise(times, events, scores):
    conc, disc, tied = _pair_matrices(times, events, scores)
    c, d, t = int(conc.sum()), int(disc.sum()), int(tied.sum())
    return c, d, t, c + d + t


def _counts_fenwick(times, events, scores):
    n = times.size
    _, rank = np.unique(scores, return_inverse=True)
    rank = rank.astype(np.int64) + 1
    m = int(rank.max())
    tree = [0] * (m + 1)

    def prefix(i):
        s = 0
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    order = np.argsort(-times, kind="stable")
    t_sorted = times[order]
    bounds = np.flatnonzero(np.diff(t_sorted)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [n]))

    conc = disc = tied = 0
    inserted = 0
    for a, b in zip(starts.tolist(), ends.tolist()):
        group = order[a:b]
        g_events = group[events[group]]
        if g_events.size:
            cens_ranks = np.sort(rank[group[~events[group]]])
            for i in g_events.tolist():
                ri = int(rank[i])
                less = prefix(ri - 1)
                leq = prefix(ri)
                conc += less
                tied += leq - less
                disc += inserted - leq
                lo = int(np.searchsorted(cens_ranks, ri, side="left"))
                hi = int(np.searchsorted(cens_ranks, ri, side="right"))
                conc += lo
                tied += hi - lo
                disc += cens_ranks.size - hi
        for i in group.tolist():
            j = int(rank[i])
            while j <= m:
                tree[j] += 1
                j += j & -j
        inserted += group.size
    return conc, disc, tied, conc + disc + tied


def concordance_counts(times, events, scores):
    """(concordant, discordant, tied_score, comparable_pairs) as exact integers."""
    times, events, scores = _as_arrays(times, events, scores)
    if times.size <= _PAIRWISE_MAX_N:
        return _counts_pairwise(times, events, scores)
    return _counts_fenwick(times, events, scores)


def concordance_index(times, events, scores) -> CIndexResult:
    """Harrell's C-index; a higher score means a shorter expected survival.

    Pair (i, j) is comparable when ``t_i < t_j`` and ``i`` had an event, or
    the times are equal and only ``i`` had an event. Tied scores count one
    half. Pairs with equal times and two events are skipped.
    """
    c, d, t, pairs = concordance_counts(times, events, scores)
    if pairs == 0:
        raise ValidationError("no comparable pairs")
    return CIndexResult((2 * c + t) / (2 * pairs), c, d, t, pairs)


def _resample_weights(rng, n, groups):
    if groups is None:
        return np.bincount(rng.integers(0, n, n), minlength=n)
    codes, uniq_n = groups
    draw = np.bincount(rng.integers(0, uniq_n, uniq_n), minlength=uniq_n)
    return draw[codes]


def bootstrap_ci(times, events, scores, B: int = 1000, seed: int = 0, level: float = 0.95,
                 groups=None, max_redraws: int = 100, return_values: bool = False):
    """Percentile bootstrap interval for the C-index.

    Replicate ``b`` draws from ``numpy.random.default_rng(seed + b)``, so the
    result does not depend on evaluation order. ``groups`` (e.g. subject ids)
    switches to cluster resampling: whole groups are drawn with replacement.
    Resamples without comparable pairs are redrawn.
    """
    times, events, scores = _as_arrays(times, events, scores)
    if B < 100:
        raise ValidationError("bootstrap needs B >= 100")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    n = times.size
    codes = None
    if groups is not None:
        groups = np.asarray(groups)
        if groups.shape[0] != n:
            raise ValidationError("groups and times differ in length")
        uniq, inv = np.unique(groups, return_inverse=True)
        codes = (inv, uniq.size)

    values = np.empty(B)
    rngs = [np.random.default_rng(seed + b) for b in range(B)]
    if n <= _PAIRWISE_MAX_N:
        conc_b, disc_b, tied_b = _pair_matrices(times, events, scores)
        comparable = (conc_b | disc_b | tied_b).astype(float)
        conc, tied = conc_b.astype(float), tied_b.astype(float)
        W = np.array([_resample_weights(r, n, codes) for r in rngs], dtype=float)
        pending = np.arange(B)
        for _ in range(max_redraws):
            Wp = W[pending]
            c = np.sum((Wp @ conc) * Wp, axis=1)
            t = np.sum((Wp @ tied) * Wp, axis=1)
            pairs = np.sum((Wp @ comparable) * Wp, axis=1)
            ok = pairs > 0
            values[pending[ok]] = (2 * c[ok] + t[ok]) / (2 * pairs[ok])
            pending = pending[~ok]
            if pending.size == 0:
                break
            for b in pending:
                W[b] = _resample_weights(rngs[b], n, codes)
        else:
            raise ValidationError("bootstrap resamples contain no comparable pairs")
    else:
        for b, rng in enumerate(rngs):
            for _ in range(max_redraws):
                w = _resample_weights(rng, n, codes)
                idx = np.repeat(np.arange(n), w)
                c, d, t, pairs = _counts_fenwick(times[idx], events[idx], scores[idx])
                if pairs > 0:
                    break
            else:
                raise ValidationError("bootstrap resamples contain no comparable pairs")
            values[b] = (2 * c + t) / (2 * pairs)

    alpha = (1 - level) / 2
    lower, upper = np.quantile(values, [alpha, 1 - alpha])
    out = (float(lower), float(upper))
    return (out, values) if return_values else out


def concordance_with_ci(times, events, scores, B=1000, seed=0, level=0.95, groups=None):
    res = concordance_index(times, events, scores)
    lower, upper = bootstrap_ci(times, events, scores, B=B, seed=seed, level=level,
                                groups=groups)
    res.ci = {"lower": lower, "upper": upper, "B": int(B), "seed": int(seed),
              "level": float(level)}
    return res


# ---------------------------------------------------------------------------
# Kaplan-Meier
# ---------------------------------------------------------------------------


@dataclass
class KmCurve:
    times: np.ndarray
    survival: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    n_total: int = 0

    def survival_at(self, t):
        """Right-continuous step function value at ``t`` (1 before the first event)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        s = np.concatenate(([1.0], self.survival))
        return s[k]


def kaplan_meier(times, events) -> KmCurve:
    """Product-limit estimate over the distinct event times.

    Subjects censored at an event time are still at risk for that event.
    """
    times, events = _as_arrays(times, events)
    if times.size == 0:
        raise ValidationError("Kaplan-Meier needs at least one observation")
    event_times = np.unique(times[events])
    sorted_t = np.sort(times)
    n_at_risk = sorted_t.size - np.searchsorted(sorted_t, event_times, side="left")
    sorted_ev = np.sort(times[events])
    d = (np.searchsorted(sorted_ev, event_times, side="right")
         - np.searchsorted(sorted_ev, event_times, side="left"))
    surv = np.cumprod((n_at_risk - d) / n_at_risk)
    return KmCurve(event_times, surv, n_at_risk.astype(int), d.astype(int), int(times.size))


# ---------------------------------------------------------------------------
# stratification and log-rank
# ---------------------------------------------------------------------------


@dataclass
class StratifiedGroups:
    high: np.ndarray

    @property
    def labels(self):
        return np.where(self.high, "high", "low")

    @property
    def n_high(self):
        return int(self.high.sum())

    @property
    def n_low(self):
        return int((~self.high).sum())

    def swapped(self):
        return StratifiedGroups(~self.high)


def stratify(scores, threshold: float = 0.0) -> StratifiedGroups:
    """High risk iff score > ``threshold`` (strict); ties at the threshold are low."""
    scores = np.asarray(scores, dtype=float).ravel()
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite risk score")
    return StratifiedGroups(scores > threshold)


def format_p_value(p: float) -> str:
    if p < 1e-16:
        return "<1e-16"
    return f"{p:.4g}"


@dataclass
class LogRankResult:
    statistic: float
    p_value: float
    observed: float = 0.0
    expected: float = 0.0
    variance: float = 0.0
    extra: dict = field(default_factory=dict)

    def format_p(self):
        return format_p_value(self.p_value)

    def to_dict(self):
        return {"statistic": self.statistic, "p_value": self.p_value,
                "p_display": self.format_p(), "observed_high": self.observed,
                "expected_high": self.expected, "variance": self.variance}


def log_rank_test(groups, times, events) -> LogRankResult:
    """Two-group log-rank test with the hypergeometric variance, 1 df.

    ``groups`` is a :class:`StratifiedGroups` or a boolean mask for group 1.
    """
    g = groups.high if isinstance(groups, StratifiedGroups) else np.asarray(groups)
    g = g.ravel().astype(bool)
    times, events = _as_arrays(times, events)
    if g.shape != times.shape:
        raise ValidationError("group labels and times differ in length")
    if g.all() or not g.any():
        raise ValidationError("log-rank test needs two non-empty groups")
    if not events.any():
        raise ValidationError("log-rank test needs at least one event")

    event_times = np.unique(times[events])
    sorted_all = np.sort(times)
    sorted_1 = np.sort(times[g])
    n = sorted_all.size - np.searchsorted(sorted_all, event_times, side="left")
    n1 = sorted_1.size - np.searchsorted(sorted_1, event_times, side="left")
    ev_all = np.sort(times[events])
    ev_1 = np.sort(times[events & g])
    d = np.searchsorted(ev_all, event_times, "right") - np.searchsorted(ev_all, event_times, "left")
    d1 = np.searchsorted(ev_1, event_times, "right") - np.searchsorted(ev_1, event_times, "left")

    n = n.astype(float)
    e1 = d * n1 / n
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(n > 1, d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1), 0.0)
    O, E, V = float(d1.sum()), float(e1.sum()), float(v.sum())
    if V <= 0:
        raise ValidationError("log-rank variance is zero")
    stat = (O - E) ** 2 / V
    # chi-square(1) upper tail == regularized upper incomplete gamma Q(1/2, x/2)
    p = float(special.gammaincc(0.5, stat / 2.0))
    p = max(p, np.finfo(float).tiny)
    return LogRankResult(float(stat), p, O, E, V)


def km_export(curves, path):
    """Long-format CSV ``label,time,survival,n_at_risk,n_events``.

    Each curve starts with a time-0 row (survival 1, everyone at risk).
    """
    curves = list(curves)
    if not curves:
        raise ValidationError("no curves to export")
    lines = ["label,time,survival,n_at_risk,n_events"]
    for label, km in curves:
        lines.append(f"{label},0.0,1.0,{km.n_total},0")
        for t, s, r, e in zip(km.times, km.survival, km.n_at_risk, km.n_events):
            lines.append(f"{label},{float(t)!r},{float(s)!r},{int(r)},{int(e)}")
    return atomic_write_text(path, "\n".join(lines) + "\n")
