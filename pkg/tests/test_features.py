import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionsurv import ValidationError
from fusionsurv.features import (FeatureTable, SelectionMask, abs_correlation_matrix,
                                 apply_standardizer, fit_standardizer, fuse_concat,
                                 invert_standardizer, load_feature_table,
                                 select_by_correlation, write_feature_table)


def table(values, block="b", ids=None, prefix="c"):
    values = np.asarray(values, float)
    ids = ids or [f"S{i}" for i in range(values.shape[0])]
    return FeatureTable(ids, [(block, f"{prefix}{j}") for j in range(values.shape[1])], values)


def write_csv(path, width, n=4, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["sample_id," + ",".join(f"f{j}" for j in range(width))]
    for i in range(n):
        lines.append(f"S{i}," + ",".join(repr(float(v)) for v in rng.normal(size=width)))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.mark.parametrize("width", [107, 384])
def test_load_widths(tmp_path, width):
    t = load_feature_table(write_csv(tmp_path / "f.csv", width), "radiomics")
    assert t.width == width and t.block_names == ["radiomics"]


def test_load_empty_file(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValidationError, match="no data rows"):
        load_feature_table(tmp_path / "e.csv", "x")
    (tmp_path / "h.csv").write_text("sample_id,a,b\n")
    with pytest.raises(ValidationError, match="no data rows"):
        load_feature_table(tmp_path / "h.csv", "x")


@pytest.mark.parametrize("body,message", [
    ("S1,1.0,abc\n", "non-numeric cell at row 2"),
    ("S1,1,2\nS1,3,4\n", "duplicate sample_id 'S1' at row 3"),
    ("S1,1,nan\n", "NaN or infinite value at row 2"),
    ("S1,1,inf\n", "NaN or infinite value at row 2"),
])
def test_load_errors(tmp_path, body, message):
    (tmp_path / "f.csv").write_text("sample_id,a,b\n" + body)
    with pytest.raises(ValidationError, match=message):
        load_feature_table(tmp_path / "f.csv", "x")


def test_write_load_roundtrip(tmp_path):
    t = table(np.random.default_rng(1).normal(size=(5, 3)), block="r")
    write_feature_table(t, tmp_path / "t.csv")
    assert load_feature_table(tmp_path / "t.csv", "r") == t


def test_fuse_width_875():
    ids = [f"S{i}" for i in range(6)]
    rng = np.random.default_rng(0)
    parts = [table(rng.normal(size=(6, w)), block=b, ids=ids)
             for b, w in (("indications", 384), ("pancreas", 384), ("radiomics", 107))]
    fused = fuse_concat(parts)
    assert fused.width == 875
    assert fused.block_widths() == {"indications": 384, "pancreas": 384, "radiomics": 107}


def test_fuse_single_is_identity_and_aligns_rows():
    a = table([[1.0], [2.0]], "a", ids=["x", "y"])
    assert fuse_concat([a]) == a
    b = table([[20.0], [10.0]], "b", ids=["y", "x"])
    fused = fuse_concat([a, b])
    assert list(fused.sample_ids) == ["x", "y"] and fused.values.tolist() == [[1, 10], [2, 20]]


def test_fuse_disjoint_ids():
    with pytest.raises(ValidationError):
        fuse_concat([table([[1.0]], "a", ids=["x"]), table([[1.0]], "b", ids=["y"])])


def test_fuse_associative():
    rng = np.random.default_rng(2)
    A, B, C = (table(rng.normal(size=(4, 2)), blk) for blk in "ABC")
    assert fuse_concat([fuse_concat([A, B]), C]) == fuse_concat([A, B, C])
    assert fuse_concat([A, fuse_concat([B, C])]) == fuse_concat([A, B, C])


def test_standardizer_examples():
    t = table([[0.0, 5.0], [2.0, 5.0]])
    p = fit_standardizer(t)
    assert p.mean.tolist() == [1.0, 5.0] and p.std.tolist() == [1.0, 1.0]
    assert p.constant.tolist() == [False, True]
    z = apply_standardizer(t, p)
    assert np.all(z.values[:, 1] == 0.0)
    q = fit_standardizer(t)
    assert np.array_equal(p.mean, q.mean) and np.array_equal(p.std, q.std)


def test_standardizer_on_training_rows_and_not_idempotent():
    rng = np.random.default_rng(3)
    t = table(rng.normal(4, 3, size=(50, 4)))
    train = t.sample_ids[:30]
    p = fit_standardizer(t, rows=train)
    z = apply_standardizer(t, p).rows(train).values
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)
    twice = apply_standardizer(apply_standardizer(t, p), p)
    assert not np.allclose(twice.values, apply_standardizer(t, p).values)


def test_standardizer_blocks_only():
    ids = ["a", "b", "c"]
    t = fuse_concat([table([[1.0], [2.0], [3.0]], "emb", ids), table([[10.0], [20.0], [60.0]],
                                                                     "radiomics", ids)])
    p = fit_standardizer(t, blocks=["radiomics"])
    z = apply_standardizer(t, p)
    assert z.values[:, 0].tolist() == [1.0, 2.0, 3.0]
    assert abs(z.values[:, 1].mean()) < 1e-12


def test_standardizer_errors():
    t = table([[1.0]])
    with pytest.raises(ValidationError):
        fit_standardizer(t, rows=[])
    p = fit_standardizer(table([[1.0, 2.0]], prefix="z"))
    with pytest.raises(ValidationError, match="unknown column"):
        apply_standardizer(t, p)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_standardize_inverse_recovers(n, p, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(rng.normal(0, 100, p), rng.uniform(0.01, 50, p), size=(n, p))
    t = table(vals)
    params = fit_standardizer(t)
    back = invert_standardizer(apply_standardizer(t, params), params)
    assert np.all(np.abs(back.values - vals) <= 1e-12 * np.maximum(np.abs(vals), 1.0))


def test_params_json_roundtrip():
    from fusionsurv.features import StandardizationParams
    p = fit_standardizer(table(np.random.default_rng(0).normal(size=(5, 2))))
    q = StandardizationParams.from_dict(json.loads(json.dumps(p.to_dict())))
    assert np.array_equal(p.mean, q.mean) and np.array_equal(p.std, q.std)


def test_selection_identical_columns():
    col = np.random.default_rng(0).normal(size=(20, 1))
    m = select_by_correlation(table(np.repeat(col, 107, axis=1)), threshold=0.5)
    assert m.retained == ("b:c0",)


def test_selection_orthogonal_columns():
    Q = np.linalg.qr(np.random.default_rng(1).normal(size=(12, 5)))[0]
    Q -= Q.mean(axis=0)  # centre so orthogonality means zero correlation
    Q = np.linalg.qr(np.c_[np.ones(12), Q])[0][:, 1:5]
    m = select_by_correlation(table(Q), threshold=0.05)
    assert len(m.retained) == 4


def test_selection_threshold_one_keeps_all_and_constant_column():
    v = np.random.default_rng(2).normal(size=(10, 3))
    v[:, 1] = 7.0
    t = table(v)
    assert len(select_by_correlation(t, threshold=1.0).retained) == 3
    R = abs_correlation_matrix(v)
    assert R[0, 1] == 0.0 and R[1, 1] == 1.0


def brute_force_valid(values, retained_idx, threshold):
    for a in retained_idx:
        for b in retained_idx:
            if a < b:
                x, y = values[:, a], values[:, b]
                if x.std() == 0 or y.std() == 0:
                    continue
                if abs(np.corrcoef(x, y)[0, 1]) >= threshold:
                    return False
    return True


def test_selection_known_five_column_table():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(400, 3))
    # c1 ~ c0 (corr ~0.95), c3 ~ c2 (corr ~0.6), c4 independent
    v = np.c_[z[:, 0], z[:, 0] + 0.33 * rng.normal(size=400), z[:, 1],
              z[:, 1] + 1.33 * rng.normal(size=400), z[:, 2]]
    t = table(v)
    m = select_by_correlation(t, threshold=0.5)
    assert m.retained == ("b:c0", "b:c2", "b:c4")
    assert select_by_correlation(t, threshold=0.8).retained == ("b:c0", "b:c2", "b:c3", "b:c4")
    idx = [t.column_names.index(c) for c in m.retained]
    assert brute_force_valid(v, idx, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 40), st.integers(1, 8), st.floats(0.05, 0.99), st.integers(0, 2**31 - 1))
def test_selection_pairwise_property_and_purity(n, p, threshold, seed):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(n, 2))
    v = base @ rng.normal(size=(2, p)) + 0.3 * rng.normal(size=(n, p))
    t = table(v)
    rows = t.sample_ids[: max(3, n - 2)]
    m = select_by_correlation(t, rows=rows, threshold=threshold)
    assert m == select_by_correlation(t, rows=rows, threshold=threshold)
    assert m.retained[0] == "b:c0"
    idx = [t.column_names.index(c) for c in m.retained]
    assert brute_force_valid(t.rows(rows).values, idx, threshold)
    # greedy maximality: every dropped column clashes with an earlier kept one
    R = abs_correlation_matrix(t.rows(rows).values)
    for j in set(range(p)) - set(idx):
        assert any(R[j, k] >= threshold for k in idx if k < j)


def test_selection_errors_and_json(tmp_path):
    t = table(np.ones((2, 2)))
    with pytest.raises(ValidationError, match="at least 3 rows"):
        select_by_correlation(t, threshold=0.5)
    with pytest.raises(ValidationError):
        select_by_correlation(table(np.ones((4, 2))), threshold=0.0)
    m = SelectionMask(0.3, ("b:c0", "b:c2"))
    m.save(tmp_path / "m.json")
    assert SelectionMask.load(tmp_path / "m.json") == m
