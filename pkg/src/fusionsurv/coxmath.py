"""Cox partial likelihood: loss/gradient for arbitrary risk scores and a
Newton-Raphson linear Cox baseline.

All routines use the Breslow convention for tied event times: the risk set of
sample ``i`` is ``{j : t_j >= t_i}``, so tied events share one denominator and
samples censored at an event time remain at risk for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._io import ValidationError, atomic_write_json

__all__ = [
    "ConvergenceError",
    "SingularHessianError",
    "LinearCoxModel",
    "cox_npll",
    "cox_npll_gradient",
    "cox_npll_and_gradient",
    "cox_log_partial_likelihood",
    "fit_linear_coxph",
    "predict_linear_risk",
]


class ConvergenceError(RuntimeError):
    """Newton-Raphson did not converge (or the likelihood is monotone)."""


class SingularHessianError(RuntimeError):
    def __init__(self, message, condition):
        super().__init__(f"{message} (condition number estimate {condition:.3e})")
        self.condition = condition


def _check_survival_inputs(scores, times, events):
    scores = np.asarray(scores, dtype=float).ravel()
    times = np.asarray(times, dtype=float).ravel()
    events = np.asarray(events).ravel().astype(bool)
    if not (scores.shape == times.shape == events.shape):
        raise ValidationError(
            f"length mismatch: scores {scores.size}, times {times.size}, events {events.size}"
        )
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite risk score")
    if not np.all(np.isfinite(times)):
        raise ValidationError("non-finite survival time")
    if not events.any():
        raise ValidationError("partial likelihood requires at least one event")
    return scores, times, events


def _risk_set_logsumexp(scores, times):
    """Return (order, log sum_{j: t_j >= t_i} exp(r_j)) for every sample, in sorted order.

    ``order`` sorts times ascending; the second array is indexed like ``order``.
    """
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    r_sorted = scores[order]
    # suffix log-sum-exp; logaddexp.accumulate is max-shifted internally
    suffix = np.logaddexp.accumulate(r_sorted[::-1])[::-1]
    # tied times share the risk set starting at the first member of the tie group
    first = np.searchsorted(t_sorted, t_sorted, side="left")
    return order, suffix[first]


def cox_npll_and_gradient(scores, times, events):
    """Event-normalized negative partial log-likelihood and its gradient."""
    scores, times, events = _check_survival_inputs(scores, times, events)
    order, lse = _risk_set_logsumexp(scores, times)
    r_sorted = scores[order]
    e_sorted = events[order]
    t_sorted = times[order]
    n_events = int(e_sorted.sum())

    loss = -np.sum(r_sorted[e_sorted] - lse[e_sorted]) / n_events

    # d/dr_k = -(e_k - sum_{i event, t_i <= t_k} exp(r_k - lse_i)) / D
    neg_lse = np.where(e_sorted, -lse, -np.inf)
    cum = np.logaddexp.accumulate(neg_lse)
    last = np.searchsorted(t_sorted, t_sorted, side="right") - 1
    with np.errstate(invalid="ignore"):
        expo = r_sorted + cum[last]
    weight = np.where(np.isneginf(cum[last]), 0.0, np.exp(expo))
    grad_sorted = -(e_sorted.astype(float) - weight) / n_events

    grad = np.empty_like(grad_sorted)
    grad[order] = grad_sorted
    return float(loss), grad


def cox_npll(scores, times, events) -> float:
    """Negative partial log-likelihood of ``scores``, averaged over events.

    ``-(1/D) * sum_{i: event} [r_i - log sum_{j: t_j >= t_i} exp(r_j)]`` with
    ``D`` the number of events. Shift-invariant in ``scores``.

    Examples
    --------
    >>> round(cox_npll([0.0, 0.0], [1.0, 2.0], [1, 1]), 6)
    0.346574
    """
    scores, times, events = _check_survival_inputs(scores, times, events)
    order, lse = _risk_set_logsumexp(scores, times)
    ev = events[order]
    return float(-np.sum(scores[order][ev] - lse[ev]) / ev.sum())


def cox_npll_gradient(scores, times, events) -> np.ndarray:
    """Analytic gradient of :func:`cox_npll` with respect to every score."""
    return cox_npll_and_gradient(scores, times, events)[1]


# ---------------------------------------------------------------------------
# linear Cox model
# ---------------------------------------------------------------------------


@dataclass
class LinearCoxModel:
    columns: list
    beta: np.ndarray
    iterations: int
    grad_norm: float
    loglik_history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "columns": list(self.columns),
            "beta": [float(b) for b in self.beta],
            "iterations": int(self.iterations),
            "grad_norm": float(self.grad_norm),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            columns=list(d["columns"]),
            beta=np.asarray(d["beta"], dtype=float),
            iterations=int(d["iterations"]),
            grad_norm=float(d["grad_norm"]),
        )

    def save(self, path):
        return atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _design(features):
    """Accept a FeatureTable or a plain 2-D array; return (matrix, column names)."""
    if hasattr(features, "values") and hasattr(features, "column_names"):
        return np.asarray(features.values, dtype=float), list(features.column_names)
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, [f"x{j}" for j in range(X.shape[1])]


def _breslow_terms(X, beta, times, events, *, order=None):
    """Log partial likelihood, score vector and observed information at ``beta``."""
    if order is None:
        order = np.argsort(times, kind="stable")
    Xs = X[order]
    ts = times[order]
    es = events[order]
    eta = Xs @ beta
    m = eta.max()
    w = np.exp(eta - m)
    first = np.searchsorted(ts, ts, side="left")

    s0 = np.cumsum(w[::-1])[::-1][first]
    s1 = np.cumsum((w[:, None] * Xs)[::-1], axis=0)[::-1][first]

    loglik = float(np.sum(eta[es] - np.log(s0[es]) - m))

    xbar = s1[es] / s0[es, None]
    grad = Xs[es].sum(axis=0) - xbar.sum(axis=0)

    # sum_{events i} S2(i)/S0(i) == X^T diag(w_j c_j) X, c_j = sum_{events i, t_i <= t_j} 1/S0(i)
    inv = np.where(es, 1.0 / s0, 0.0)
    c = np.cumsum(inv)[np.searchsorted(ts, ts, side="right") - 1]
    info = (Xs * (w * c)[:, None]).T @ Xs - xbar.T @ xbar
    return loglik, grad, info


def cox_log_partial_likelihood(X, beta, times, events) -> float:
    """Unnormalized Breslow log partial likelihood of a linear predictor."""
    X = np.asarray(X, dtype=float)
    return _breslow_terms(X, np.asarray(beta, float), np.asarray(times, float),
                          np.asarray(events).astype(bool))[0]


def _scaled_condition(info):
    """Condition number of the information matrix after unit-diagonal scaling."""
    d = np.diag(info)
    if d.size == 0:
        return 1.0
    if np.any(d <= 0):
        return float("inf")
    s = 1.0 / np.sqrt(d)
    w = np.linalg.eigvalsh(info * s[:, None] * s[None, :])
    return float("inf") if w[0] <= 0 else float(w[-1] / w[0])


LOGLIK_SLACK = 1e-12


def fit_linear_coxph(features, times, events, tol=1e-9, max_iter=100,
                     max_halvings=40, max_scaled_coef=25.0,
                     max_condition=1e10) -> LinearCoxModel:
    """Fit a linear Cox model by Newton-Raphson on the Breslow partial likelihood.

    Converges when the max-norm of the score vector drops below ``tol``. A
    Newton step that lowers the likelihood by more than rounding noise
    (``1e-12`` relative) is halved until it does not.
    Coefficients whose per-standard-deviation magnitude exceeds
    ``max_scaled_coef`` are treated as a diverging (monotone) likelihood.
    An information matrix whose diagonally scaled condition number exceeds
    ``max_condition`` (collinear or constant columns) raises
    :class:`SingularHessianError`.
    """
    X, columns = _design(features)
    times = np.asarray(times, dtype=float).ravel()
    events = np.asarray(events).ravel().astype(bool)
    n, p = X.shape
    if times.shape[0] != n or events.shape[0] != n:
        raise ValidationError("features, times and events must have the same length")
    if not events.any():
        raise ValidationError("linear Cox fit requires at least one event")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite feature value")

    scale = X.std(axis=0)
    if np.any(scale == 0):
        raise SingularHessianError(
            f"constant feature column {columns[int(np.argmin(scale))]!r}", float("inf"))
    order = np.argsort(times, kind="stable")
    beta = np.zeros(p)
    loglik, grad, info = _breslow_terms(X, beta, times, events, order=order)
    history = [loglik]

    for it in range(max_iter + 1):
        gnorm = float(np.max(np.abs(grad))) if p else 0.0
        if gnorm < tol:
            return LinearCoxModel(columns, beta, it, gnorm, history)
        if it == max_iter:
            break
        cond = _scaled_condition(info)
        if cond > max_condition:
            raise SingularHessianError("singular information matrix (collinear or constant "
                                       "columns?)", cond)
        try:
            # solve in unit-diagonal coordinates so column scale does not matter
            d = 1.0 / np.sqrt(np.diag(info))
            step = d * linalg.solve(info * d[:, None] * d[None, :], d * grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            raise SingularHessianError("singular information matrix",
                                       float(np.linalg.cond(info))) from None
        if not np.all(np.isfinite(step)):
            raise SingularHessianError("non-finite Newton step", float(np.linalg.cond(info)))

        # near the optimum the likelihood is flat to rounding; a strict test
        # would reject converged steps
        floor = loglik - LOGLIK_SLACK * max(1.0, abs(loglik))
        for _ in range(max_halvings):
            candidate = beta + step
            new = _breslow_terms(X, candidate, times, events, order=order)
            if np.isfinite(new[0]) and new[0] >= floor:
                break
            step = step / 2.0
        else:
            raise ConvergenceError(f"step halving failed at iteration {it + 1}")

        beta = candidate
        loglik, grad, info = new
        history.append(loglik)
        if np.max(np.abs(beta * scale)) > max_scaled_coef:
            raise ConvergenceError(
                "coefficients diverging: monotone likelihood, likely complete separation"
            )

    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (max |score| = {gnorm:.3e})"
    )


def predict_linear_risk(model: LinearCoxModel, features) -> np.ndarray:
    X, columns = _design(features)
    if hasattr(features, "column_names"):
        if list(columns) != list(model.columns):
            raise ValidationError("feature columns do not match the fitted model")
    elif X.shape[1] != len(model.beta):
        raise ValidationError(
            f"expected {len(model.beta)} feature columns, got {X.shape[1]}"
        )
    return X @ model.beta
