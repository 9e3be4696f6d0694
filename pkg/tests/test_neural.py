import numpy as np
import pytest

from fusionsurv import ValidationError
from fusionsurv.coxmath import cox_npll, cox_npll_gradient
from fusionsurv.metrics import concordance_index
from fusionsurv.neural import (MlpConfig, TrainConfig, backward, build_mlp, forward,
                               load_checkpoint, predict_risk, save_checkpoint, train)
from fusionsurv.simdata import SyntheticSpec, generate

from oracles import central_difference, scalar_mlp_forward


def toy_data(n=60, p=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = rng.exponential(10 * np.exp(-X[:, 0]))
    e = rng.random(n) < 0.7
    e[0] = True
    return X, t, e


def test_parameter_count_875():
    m = build_mlp(MlpConfig(875))
    expected = 875 * 128 + 128 + 128 * 64 + 64 + 64 * 1 + 1 + 2 * (128 + 64)
    assert m.n_parameters() == expected
    assert sum(a.size for a in m.running_mean + m.running_var) == 2 * (128 + 64)
    assert [w.shape for w in m.weights] == [(875, 128), (128, 64), (64, 1)]


def test_same_seed_bitwise_identical():
    a, b = build_mlp(MlpConfig(10, seed=4)), build_mlp(MlpConfig(10, seed=4))
    for (na, xa), (nb, xb) in zip(a.parameters(), b.parameters()):
        assert na == nb and np.array_equal(xa, xb)
    c = build_mlp(MlpConfig(10, seed=5))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_no_hidden_layers_is_linear():
    m = build_mlp(MlpConfig(3, hidden_dims=()))
    assert m.n_layers == 1 and m.weights[0].shape == (3, 1)
    X = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(forward(m, X), X @ m.weights[0][:, 0] + m.biases[0][0], atol=1e-15)


def test_config_errors():
    with pytest.raises(ValidationError):
        MlpConfig(0)
    with pytest.raises(ValidationError):
        MlpConfig(3, dropout_rate=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(patience=0)
    with pytest.raises(ValidationError):
        TrainConfig(min_delta=-1.0)


def test_forward_errors():
    m = build_mlp(MlpConfig(3))
    with pytest.raises(ValidationError):
        forward(m, np.ones((4, 2)))
    with pytest.raises(ValidationError):
        forward(m, np.ones((1, 3)), mode="train", rng=np.random.default_rng(0))


def test_eval_mode_deterministic_and_rowwise():
    m = build_mlp(MlpConfig(4, seed=1))
    X = np.random.default_rng(1).uniform(-10, 10, size=(7, 4))
    a, b = predict_risk(m, X), predict_risk(m, X)
    assert np.array_equal(a, b) and np.all(np.isfinite(a))
    dup = predict_risk(m, np.vstack([X, X[2:3]]))
    assert dup[-1] == dup[2]


def test_forward_matches_scalar_oracle():
    m = build_mlp(MlpConfig(3, hidden_dims=(4, 2), dropout_rate=0.0, batchnorm=False, seed=7))
    X = np.random.default_rng(2).normal(size=(6, 3))
    out = forward(m, X, mode="train", rng=np.random.default_rng(0))
    ref = [scalar_mlp_forward(m.weights, m.biases, x) for x in X]
    assert np.allclose(out, ref, rtol=1e-13, atol=1e-14)


def test_train_mode_batchnorm_statistics():
    m = build_mlp(MlpConfig(5, hidden_dims=(8, 4), dropout_rate=0.0, seed=2))
    X = np.random.default_rng(3).normal(3, 5, size=(32, 5))
    _, cache = forward(m, X, mode="train", return_cache=True)
    for xhat in cache["xhat"]:
        assert np.all(np.abs(xhat.mean(axis=0)) < 1e-6)
        assert np.all(np.abs(xhat.var(axis=0) - 1) < 1e-6)


def test_dropout_uses_rng_and_inverted_scaling():
    m = build_mlp(MlpConfig(4, hidden_dims=(50,), dropout_rate=0.5, batchnorm=False))
    X = np.random.default_rng(0).normal(size=(10, 4))
    _, cache = forward(m, X, mode="train", rng=np.random.default_rng(1), return_cache=True)
    mask = cache["masks"][0]
    assert set(np.unique(mask)) <= {0.0, 2.0}
    again = forward(m, X, mode="train", rng=np.random.default_rng(1))
    assert np.array_equal(again, forward(m, X, mode="train", rng=np.random.default_rng(1)))


def flat_loss(model, names, X, t, e, rng_seed=None):
    def f(theta):
        m = model.copy()
        offset = 0
        for name, arr in m.parameters():
            if name in names:
                arr[...] = theta[offset:offset + arr.size].reshape(arr.shape)
                offset += arr.size
        return cox_npll(forward(m, X, mode="train"), t, e)
    return f


@pytest.mark.parametrize("batchnorm", [False, True])
def test_gradient_check_tiny_net(batchnorm):
    X, t, e = toy_data(n=12, p=4, seed=3)
    m = build_mlp(MlpConfig(4, hidden_dims=(3,), dropout_rate=0.0, batchnorm=batchnorm, seed=1))
    if batchnorm:
        m.gammas[0][:] = [1.3, 0.7, 1.1]
        m.betas[0][:] = [0.2, -0.1, 0.4]
    names = [n for n, _ in m.parameters()]
    theta = np.concatenate([a.ravel() for _, a in m.parameters()])
    scores, cache = forward(m.copy(), X, mode="train", return_cache=True)
    g = backward(m, cache, cox_npll_gradient(scores, t, e))
    analytic = np.concatenate([g[n].ravel() for n in names])
    numeric = central_difference(flat_loss(m, names, X, t, e), theta, h=1e-6)
    rel = np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric))
    assert rel < 1e-5


def test_zero_learning_rate_leaves_parameters_unchanged():
    X, t, e = toy_data()
    m = build_mlp(MlpConfig(4, hidden_dims=(6,), batchnorm=False, seed=0))
    out, hist = train(m, X[:40], (t[:40], e[:40]), X[40:], (t[40:], e[40:]),
                      TrainConfig(learning_rate=0.0, weight_decay=1e-3, max_epochs=3))
    for (_, a), (_, b) in zip(m.parameters(), out.parameters()):
        assert np.array_equal(a, b)


def test_stagnant_validation_stops_at_best_plus_patience():
    X, t, e = toy_data()
    m = build_mlp(MlpConfig(4, hidden_dims=(6,), dropout_rate=0.0, batchnorm=False))
    _, hist = train(m, X[:40], (t[:40], e[:40]), X[40:], (t[40:], e[40:]),
                    TrainConfig(learning_rate=0.0, patience=10, min_delta=1e-4, max_epochs=100))
    assert hist.best_epoch == 1 and hist.epochs_run == 11
    assert hist.stop_reason == "early_stop"


def test_history_invariants_and_max_epochs():
    X, t, e = toy_data(n=120)
    m = build_mlp(MlpConfig(4, hidden_dims=(8,), seed=3))
    _, hist = train(m, X[:90], (t[:90], e[:90]), X[90:], (t[90:], e[90:]),
                    TrainConfig(learning_rate=1e-2, max_epochs=15, patience=50))
    assert hist.epochs_run == 15 and hist.stop_reason == "max_epochs"
    assert hist.best_val_loss == min(hist.val_loss)
    assert hist.val_loss[hist.best_epoch - 1] == hist.best_val_loss


def test_returns_best_epoch_weights():
    X, t, e = toy_data(n=120, seed=5)
    m = build_mlp(MlpConfig(4, hidden_dims=(8,), seed=3))
    best, hist = train(m, X[:90], (t[:90], e[:90]), X[90:], (t[90:], e[90:]),
                       TrainConfig(learning_rate=5e-2, max_epochs=40, patience=5, min_delta=0.0))
    val = cox_npll(predict_risk(best, X[90:]), t[90:], e[90:])
    assert val == pytest.approx(hist.best_val_loss, rel=1e-12)


def test_minibatch_mode_runs_and_is_reproducible():
    X, t, e = toy_data(n=100)
    m = build_mlp(MlpConfig(4, hidden_dims=(8,), seed=0))
    tc = TrainConfig(learning_rate=1e-2, max_epochs=5, batch_size=16, seed=2)
    a, ha = train(m, X[:80], (t[:80], e[:80]), X[80:], (t[80:], e[80:]), tc)
    b, hb = train(m, X[:80], (t[:80], e[:80]), X[80:], (t[80:], e[80:]), tc)
    assert ha.val_loss == hb.val_loss
    assert np.array_equal(a.weights[0], b.weights[0])


def test_full_training_bitwise_reproducible_and_records_threads():
    sc = generate(SyntheticSpec(n=300, seed=2))
    X, t, e = sc.features.values, sc.times, sc.events
    m = build_mlp(MlpConfig(3, hidden_dims=(16, 8), seed=1))
    tc = TrainConfig(learning_rate=1e-3, max_epochs=20, seed=1)
    a, ha = train(m, X[:240], (t[:240], e[:240]), X[240:], (t[240:], e[240:]), tc)
    b, hb = train(m, X[:240], (t[:240], e[:240]), X[240:], (t[240:], e[240:]), tc)
    assert ha.train_loss == hb.train_loss and ha.val_loss == hb.val_loss
    assert np.array_equal(predict_risk(a, X), predict_risk(b, X))
    assert ha.threads is not None and ha.seeds == {"init": 1, "train": 1}


def test_training_improves_ranking():
    sc = generate(SyntheticSpec(n=600, seed=4))
    X, t, e = sc.features.values, sc.times, sc.events
    m = build_mlp(MlpConfig(3, hidden_dims=(16,), seed=0))
    best, _ = train(m, X[:480], (t[:480], e[:480]), X[480:], (t[480:], e[480:]),
                    TrainConfig(learning_rate=1e-2, max_epochs=60))
    assert concordance_index(t[480:], e[480:], predict_risk(best, X[480:])).value > 0.7


def test_train_rejects_eventless_split():
    X, t, e = toy_data()
    m = build_mlp(MlpConfig(4))
    with pytest.raises(ValidationError):
        train(m, X, (t, np.zeros_like(e)), X, (t, e))


def test_checkpoint_roundtrip_bitwise(tmp_path):
    sc = generate(SyntheticSpec(n=200, seed=0))
    X, t, e = sc.features.values, sc.times, sc.events
    m, _ = train(build_mlp(MlpConfig(3, hidden_dims=(8, 4), seed=0)), X[:150],
                 (t[:150], e[:150]), X[150:], (t[150:], e[150:]),
                 TrainConfig(learning_rate=1e-2, max_epochs=5))
    save_checkpoint(m, tmp_path / "ck.json", extra={"seeds": {"init": 0}})
    back, payload = load_checkpoint(tmp_path / "ck.json")
    assert payload["seeds"] == {"init": 0}
    assert np.array_equal(predict_risk(back, X), predict_risk(m, X))
    for (_, a), (_, b) in zip(m.parameters(), back.parameters()):
        assert np.array_equal(a, b)
    assert all(np.array_equal(a, b) for a, b in zip(m.running_var, back.running_var))


def test_load_checkpoint_wrong_kind(tmp_path):
    (tmp_path / "x.json").write_text('{"kind": "linear_cox"}')
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "x.json")
