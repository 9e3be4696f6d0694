"""NumPy multilayer perceptron risk model trained on the Cox partial likelihood.

Layer vocabulary is fixed (linear, batch norm, ReLU, inverted dropout, linear
output) so every gradient is written out by hand. Optimization is Adam with
decoupled weight decay and early stopping on the validation loss.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import ValidationError, atomic_write_text
from .coxmath import cox_npll, cox_npll_and_gradient

__all__ = [
    "MlpConfig",
    "TrainConfig",
    "MlpModel",
    "TrainHistory",
    "TrainingDivergedError",
    "build_mlp",
    "forward",
    "backward",
    "train",
    "predict_risk",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple = (128, 64)
    dropout_rate: float = 0.3
    batchnorm: bool = True
    seed: int = 0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) <= 0:
            raise ValidationError("input_dim must be positive")
        if any(h <= 0 for h in self.hidden_dims):
            raise ValidationError("hidden layer sizes must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-4
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValidationError("min_delta must be >= 0")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")


class MlpModel:
    """Weights, batch-norm state and mode flag of the risk network.

    ``weights[l]`` has shape ``(fan_in, fan_out)``; the last layer maps to one
    output. Batch-norm lists are empty when batch norm is disabled.
    """

    def __init__(self, config: MlpConfig, weights, biases, gammas, betas,
                 running_mean, running_var, mode="eval"):
        self.config = config
        self.weights = weights
        self.biases = biases
        self.gammas = gammas
        self.betas = betas
        self.running_mean = running_mean
        self.running_var = running_var
        self.mode = mode

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Trainable arrays in a fixed order, as (name, array) pairs."""
        out = []
        for l in range(self.n_layers):
            out.append((f"W{l}", self.weights[l]))
            out.append((f"b{l}", self.biases[l]))
            if self.config.batchnorm and l < self.n_layers - 1:
                out.append((f"gamma{l}", self.gammas[l]))
                out.append((f"beta{l}", self.betas[l]))
        return out

    def n_parameters(self):
        return int(sum(a.size for _, a in self.parameters()))

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {
            "config": asdict(self.config),
            "mode": self.mode,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "gammas": [g.tolist() for g in self.gammas],
            "betas": [b.tolist() for b in self.betas],
            "running_mean": [m.tolist() for m in self.running_mean],
            "running_var": [v.tolist() for v in self.running_var],
        }

    @classmethod
    def from_dict(cls, d):
        cfg = MlpConfig(**d["config"])
        arr = lambda xs: [np.asarray(x, dtype=float) for x in xs]  # noqa: E731
        return cls(cfg, arr(d["weights"]), arr(d["biases"]), arr(d["gammas"]),
                   arr(d["betas"]), arr(d["running_mean"]), arr(d["running_var"]),
                   d.get("mode", "eval"))


def build_mlp(config: MlpConfig) -> MlpModel:
    """Seeded initialization: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(config.seed)
    dims = [int(config.input_dim), *config.hidden_dims, 1]
    weights, biases, gammas, betas, rmean, rvar = [], [], [], [], [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    if config.batchnorm:
        for h in config.hidden_dims:
            gammas.append(np.ones(h))
            betas.append(np.zeros(h))
            rmean.append(np.zeros(h))
            rvar.append(np.ones(h))
    return MlpModel(config, weights, biases, gammas, betas, rmean, rvar)


def forward(model: MlpModel, batch, mode="eval", rng=None, return_cache=False):
    """Risk scores for ``batch``, one per row.

    ``mode="train"`` normalizes with batch statistics (and updates the running
    ones) and applies inverted dropout drawn from ``rng``. ``mode="eval"`` uses
    running statistics and no dropout.
    """
    cfg = model.config
    X = np.asarray(batch, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise ValidationError(f"expected input width {cfg.input_dim}, got shape {X.shape}")
    train_mode = mode == "train"
    if train_mode and cfg.batchnorm and X.shape[0] < 2:
        raise ValidationError("batch norm in train mode needs at least 2 rows")
    if train_mode and cfg.dropout_rate > 0 and rng is None:
        raise ValidationError("train-mode dropout needs an rng")

    cache = {"inputs": [], "xhat": [], "inv_std": [], "pre_relu": [], "masks": []}
    a = X
    for l in range(model.n_layers - 1):
        cache["inputs"].append(a)
        z = a @ model.weights[l] + model.biases[l]
        if cfg.batchnorm:
            if train_mode:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                n = z.shape[0]
                m = cfg.bn_momentum
                model.running_mean[l] = (1 - m) * model.running_mean[l] + m * mu
                model.running_var[l] = (1 - m) * model.running_var[l] + m * var * n / (n - 1)
            else:
                mu, var = model.running_mean[l], model.running_var[l]
            inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
            xhat = (z - mu) * inv_std
            y = model.gammas[l] * xhat + model.betas[l]
            cache["xhat"].append(xhat)
            cache["inv_std"].append(inv_std)
        else:
            y = z
        cache["pre_relu"].append(y)
        h = np.maximum(y, 0.0)
        mask = None
        if train_mode and cfg.dropout_rate > 0:
            keep = 1.0 - cfg.dropout_rate
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        cache["masks"].append(mask)
        a = h
    cache["inputs"].append(a)
    scores = (a @ model.weights[-1] + model.biases[-1]).ravel()
    if return_cache:
        return scores, cache
    return scores


def backward(model: MlpModel, cache, grad_scores):
    """Parameter gradients given d(loss)/d(scores); keys match ``model.parameters()``."""
    cfg = model.config
    L = model.n_layers
    grads = {}
    ds = np.asarray(grad_scores, dtype=float)[:, None]
    a = cache["inputs"][-1]
    grads[f"W{L - 1}"] = a.T @ ds
    grads[f"b{L - 1}"] = ds.sum(axis=0)
    da = ds @ model.weights[-1].T
    for l in range(L - 2, -1, -1):
        mask = cache["masks"][l]
        dh = da if mask is None else da * mask
        dy = dh * (cache["pre_relu"][l] > 0)
        if cfg.batchnorm:
            xhat = cache["xhat"][l]
            inv_std = cache["inv_std"][l]
            grads[f"gamma{l}"] = np.sum(dy * xhat, axis=0)
            grads[f"beta{l}"] = dy.sum(axis=0)
            dxhat = dy * model.gammas[l]
            n = dy.shape[0]
            dz = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                  - xhat * np.sum(dxhat * xhat, axis=0))
        else:
            dz = dy
        a_prev = cache["inputs"][l]
        grads[f"W{l}"] = a_prev.T @ dz
        grads[f"b{l}"] = dz.sum(axis=0)
        da = dz @ model.weights[l].T
    return grads


def predict_risk(model: MlpModel, features) -> np.ndarray:
    X = features.values if hasattr(features, "values") and hasattr(features, "columns") else features
    return forward(model, X, mode="eval")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stop_reason: str = ""
    threads: str = ""
    seeds: dict = field(default_factory=dict)

    @property
    def epochs_run(self):
        return len(self.val_loss)

    def to_dict(self):
        return asdict(self)


def _blas_threads():
    try:
        from threadpoolctl import threadpool_info
    except ImportError:
        return os.environ.get("OMP_NUM_THREADS", "unknown")
    info = threadpool_info()
    return ",".join(f"{i.get('internal_api')}={i.get('num_threads')}" for i in info) or "unknown"


class _Adam:
    """Adam with decoupled weight decay: p <- p(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, params, tc: TrainConfig):
        self.tc = tc
        self.m = {k: np.zeros_like(v) for k, v in params}
        self.v = {k: np.zeros_like(v) for k, v in params}
        self.t = 0

    def step(self, params, grads):
        tc = self.tc
        self.t += 1
        c1 = 1 - tc.beta1 ** self.t
        c2 = 1 - tc.beta2 ** self.t
        for name, p in params:
            g = grads[name]
            self.m[name] = tc.beta1 * self.m[name] + (1 - tc.beta1) * g
            self.v[name] = tc.beta2 * self.v[name] + (1 - tc.beta2) * g * g
            p *= 1 - tc.learning_rate * tc.weight_decay
            p -= tc.learning_rate * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + tc.adam_eps)


def _batches(rng, events, batch_size, max_redraws=100):
    n = events.size
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    for _ in range(max_redraws):
        perm = rng.permutation(n)
        chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
        if len(chunks) > 1 and chunks[-1].size < 2:
            chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
        if all(events[c].any() for c in chunks):
            return chunks
    # event-sparse data: fold event-free chunks into the next chunk (or the last)
    merged, carry = [], None
    for c in chunks:
        if carry is not None:
            c, carry = np.concatenate([carry, c]), None
        if events[c].any():
            merged.append(c)
        else:
            carry = c
    if carry is not None:
        merged[-1] = np.concatenate([merged[-1], carry])
    return merged


def _labels(labels):
    times, events = labels
    times = np.asarray(times, dtype=float).ravel()
    events = np.asarray(events).ravel().astype(bool)
    return times, events


def train(model: MlpModel, train_features, train_labels, val_features, val_labels,
          tc: TrainConfig = TrainConfig()):
    """Minimize the event-normalized Cox loss with early stopping.

    ``*_labels`` are ``(times, events)`` pairs. After every epoch the
    validation loss is computed in eval mode; training stops once it has not
    improved by more than ``min_delta`` for ``patience`` consecutive epochs.
    Returns a new model holding the best-epoch weights, and the history.
    """
    X = np.asarray(getattr(train_features, "values", train_features), dtype=float)
    Xv = np.asarray(getattr(val_features, "values", val_features), dtype=float)
    t, e = _labels(train_labels)
    tv, ev = _labels(val_labels)
    if X.shape[0] != t.size or Xv.shape[0] != tv.size:
        raise ValidationError("features and labels differ in length")
    if not e.any():
        raise ValidationError("training split has no events")
    if not ev.any():
        raise ValidationError("validation split has no events")

    model = model.copy()
    rng = np.random.default_rng(tc.seed)
    opt = _Adam(model.parameters(), tc)
    history = TrainHistory(threads=_blas_threads(),
                           seeds={"init": model.config.seed, "train": tc.seed})
    # non-finite values are caught explicitly below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(model, X, t, e, Xv, tv, ev, tc, rng, opt, history)


def _train_loop(model, X, t, e, Xv, tv, ev, tc, rng, opt, history):
    best_state = model.copy()
    wait = 0
    for epoch in range(1, tc.max_epochs + 1):
        model.mode = "train"
        losses = []
        for idx in _batches(rng, e, tc.batch_size):
            scores, cache = forward(model, X[idx], mode="train", rng=rng, return_cache=True)
            if not np.all(np.isfinite(scores)):
                raise TrainingDivergedError(f"non-finite scores at epoch {epoch}", history)
            loss, g = cox_npll_and_gradient(scores, t[idx], e[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", history)
            opt.step(model.parameters(), backward(model, cache, g))
            losses.append(loss)
        model.mode = "eval"
        val_scores = forward(model, Xv, mode="eval")
        if not np.all(np.isfinite(val_scores)):
            raise TrainingDivergedError(f"non-finite validation scores at epoch {epoch}", history)
        val = cox_npll(val_scores, tv, ev)
        history.train_loss.append(float(np.mean(losses)))
        history.val_loss.append(float(val))

        if history.best_val_loss - val > tc.min_delta:
            history.best_val_loss = float(val)
            history.best_epoch = epoch
            best_state = model.copy()
            wait = 0
        else:
            wait += 1
            if wait >= tc.patience:
                history.stop_reason = "early_stop"
                break
    else:
        history.stop_reason = "max_epochs"

    best_state.mode = "eval"
    return best_state, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: MlpModel, path, extra=None):
    """JSON checkpoint; float repr round-trips, so reloaded predictions are bitwise equal."""
    payload = {"kind": "mlp", "model": model.to_dict()}
    if extra:
        payload.update(extra)
    return atomic_write_text(path, json.dumps(payload) + "\n")


def load_checkpoint(path):
    """Return ``(model, payload)``; ``payload`` carries any extra entries saved."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != "mlp":
        raise ValidationError(f"{path}: not an MLP checkpoint")
    return MlpModel.from_dict(payload["model"]), payload
