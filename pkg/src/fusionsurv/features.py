"""Block-structured feature tables, standardization, early fusion and
correlation-threshold selection."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import ValidationError, atomic_write_json, atomic_write_text

__all__ = [
    "FeatureTable",
    "StandardizationParams",
    "SelectionMask",
    "load_feature_table",
    "write_feature_table",
    "fuse_concat",
    "fit_standardizer",
    "apply_standardizer",
    "invert_standardizer",
    "select_by_correlation",
    "abs_correlation_matrix",
]


class FeatureTable:
    """Sample-aligned numeric matrix whose columns carry (block, name) labels.

    Columns are addressed by their qualified name ``"block:name"``, which is
    unique within a table even when two blocks reuse the same column names
    (e.g. two embedding blocks named ``e0 .. e383``).
    """

    def __init__(self, sample_ids, columns, values):
        sample_ids = tuple(str(s) for s in sample_ids)
        columns = tuple((str(b), str(c)) for b, c in columns)
        values = np.array(values, dtype=float, copy=True)
        if values.ndim != 2:
            raise ValidationError("feature values must be a 2-D matrix")
        if values.shape != (len(sample_ids), len(columns)):
            raise ValidationError(
                f"shape {values.shape} does not match {len(sample_ids)} samples x "
                f"{len(columns)} columns"
            )
        if len(set(sample_ids)) != len(sample_ids):
            raise ValidationError("duplicate sample_id in feature table")
        if len(set(columns)) != len(columns):
            raise ValidationError("duplicate column name in feature table")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature table contains NaN or infinite values")
        values.setflags(write=False)
        self.sample_ids = sample_ids
        self.columns = columns
        self.values = values
        self._row_index = {s: i for i, s in enumerate(sample_ids)}

    def __repr__(self):
        return (f"FeatureTable(n={self.n_samples}, width={self.width}, "
                f"blocks={self.block_names})")

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (self.sample_ids == other.sample_ids and self.columns == other.columns
                and np.array_equal(self.values, other.values))

    @property
    def n_samples(self):
        return len(self.sample_ids)

    @property
    def width(self):
        return len(self.columns)

    @property
    def column_names(self):
        return [f"{b}:{c}" for b, c in self.columns]

    @property
    def block_names(self):
        seen = []
        for b, _ in self.columns:
            if b not in seen:
                seen.append(b)
        return seen

    def block_widths(self):
        return {b: sum(1 for bb, _ in self.columns if bb == b) for b in self.block_names}

    def row_positions(self, sample_ids):
        try:
            return np.array([self._row_index[str(s)] for s in sample_ids], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"unknown sample_id {exc.args[0]!r}") from None

    def rows(self, sample_ids):
        """Sub-table with rows in the order of ``sample_ids``."""
        sample_ids = list(sample_ids)
        return FeatureTable(sample_ids, self.columns, self.values[self.row_positions(sample_ids)])

    def select_columns(self, names):
        lookup = {n: j for j, n in enumerate(self.column_names)}
        try:
            idx = [lookup[n] for n in names]
        except KeyError as exc:
            raise ValidationError(f"unknown column {exc.args[0]!r}") from None
        return FeatureTable(self.sample_ids, [self.columns[j] for j in idx], self.values[:, idx])

    def blocks(self, names):
        names = list(names)
        missing = [b for b in names if b not in self.block_names]
        if missing:
            raise ValidationError(f"unknown block(s): {', '.join(missing)}")
        keep = [n for n, (b, _) in zip(self.column_names, self.columns) if b in names]
        return self.select_columns(keep)

    def with_values(self, values):
        return FeatureTable(self.sample_ids, self.columns, values)


def load_feature_table(path, block_name: str) -> FeatureTable:
    """Read ``sample_id,<col1>,<col2>,...`` into a single-block table."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: no data rows")
        if not header or header[0].strip() != "sample_id":
            raise ValidationError(f"{path}: first column must be 'sample_id'")
        names = [h.strip() for h in header[1:]]
        if not names:
            raise ValidationError(f"{path}: no feature columns")
        ids, rows = [], []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            sid = row[0].strip()
            if sid in seen:
                raise ValidationError(f"{path}: duplicate sample_id {sid!r} at row {lineno}")
            seen.add(sid)
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError:
                raise ValidationError(f"{path}: non-numeric cell at row {lineno}") from None
            if not all(np.isfinite(vals)):
                raise ValidationError(f"{path}: NaN or infinite value at row {lineno}")
            ids.append(sid)
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return FeatureTable(ids, [(block_name, n) for n in names], np.array(rows))


def write_feature_table(table: FeatureTable, path, block_name=None):
    """Write one block (or the whole table, bare column names) as feature CSV."""
    t = table if block_name is None else table.blocks([block_name])
    lines = [",".join(["sample_id"] + [c for _, c in t.columns])]
    for sid, row in zip(t.sample_ids, t.values):
        lines.append(",".join([sid] + [repr(float(v)) for v in row]))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def fuse_concat(tables) -> FeatureTable:
    """Early fusion: concatenate blocks column-wise, rows aligned to the first table."""
    tables = list(tables)
    if not tables:
        raise ValidationError("nothing to fuse")
    base = tables[0]
    ref = set(base.sample_ids)
    columns, blocks = [], []
    for t in tables:
        if set(t.sample_ids) != ref:
            raise ValidationError("sample_id sets differ between fused tables")
        columns.extend(t.columns)
        blocks.append(t.values[t.row_positions(base.sample_ids)])
    return FeatureTable(base.sample_ids, columns, np.hstack(blocks))


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationParams:
    columns: tuple
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def to_dict(self):
        return {
            "columns": list(self.columns),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "constant": [bool(v) for v in self.constant],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["columns"]), np.asarray(d["mean"], float),
                   np.asarray(d["std"], float), np.asarray(d["constant"], bool))


def fit_standardizer(table: FeatureTable, rows=None, blocks=None) -> StandardizationParams:
    """Per-column mean and population std over ``rows`` (all rows if None).

    Only columns in ``blocks`` are covered when given; constant columns get
    std 1.0 and are flagged.
    """
    t = table if rows is None else table.rows(rows)
    if blocks is not None:
        t = t.blocks(blocks)
    if t.n_samples == 0:
        raise ValidationError("cannot fit standardizer on an empty subset")
    mean = t.values.mean(axis=0)
    std = t.values.std(axis=0)
    constant = std == 0
    std = np.where(constant, 1.0, std)
    return StandardizationParams(tuple(t.column_names), mean, std, constant)


def _param_positions(table, params):
    lookup = {n: j for j, n in enumerate(table.column_names)}
    missing = [c for c in params.columns if c not in lookup]
    if missing:
        raise ValidationError(f"unknown column {missing[0]!r} in standardization params")
    return np.array([lookup[c] for c in params.columns], dtype=int)


def apply_standardizer(table: FeatureTable, params: StandardizationParams) -> FeatureTable:
    """z-score the covered columns; other columns pass through unchanged."""
    idx = _param_positions(table, params)
    values = np.array(table.values)
    values[:, idx] = (values[:, idx] - params.mean) / params.std
    return table.with_values(values)


def invert_standardizer(table: FeatureTable, params: StandardizationParams) -> FeatureTable:
    idx = _param_positions(table, params)
    values = np.array(table.values)
    values[:, idx] = values[:, idx] * params.std + params.mean
    return table.with_values(values)


# ---------------------------------------------------------------------------
# correlation-threshold selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionMask:
    threshold: float
    retained: tuple

    def to_dict(self):
        return {"threshold": float(self.threshold), "retained": list(self.retained)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["threshold"]), tuple(d["retained"]))

    def save(self, path):
        return atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def abs_correlation_matrix(values) -> np.ndarray:
    """Absolute Pearson correlation; pairs involving a constant column are 0."""
    X = np.asarray(values, dtype=float)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Xc * Xc, axis=0))
    constant = norms == 0
    norms[constant] = 1.0
    Z = Xc / norms
    R = np.abs(Z.T @ Z)
    R[constant, :] = 0.0
    R[:, constant] = 0.0
    np.fill_diagonal(R, 1.0)
    return np.clip(R, 0.0, 1.0)


def select_by_correlation(table: FeatureTable, rows=None, threshold: float = 0.5,
                          blocks=None) -> SelectionMask:
    """Greedy redundancy filter in column order.

    A column is kept iff its absolute Pearson correlation with every column
    kept so far is strictly below ``threshold``. The first column is always
    kept; ``threshold >= 1`` keeps everything. With ``blocks`` the filter runs
    only over those blocks' columns.
    """
    threshold = float(threshold)
    if not threshold > 0:
        raise ValidationError("correlation threshold must be positive")
    t = table if rows is None else table.rows(rows)
    if blocks is not None:
        t = t.blocks(blocks)
    if t.n_samples < 3:
        raise ValidationError("at least 3 rows are needed to compute correlations")
    names = t.column_names
    if threshold >= 1.0:
        return SelectionMask(threshold, tuple(names))
    R = abs_correlation_matrix(t.values)
    kept = []
    for j in range(len(names)):
        if all(R[j, k] < threshold for k in kept):
            kept.append(j)
    return SelectionMask(threshold, tuple(names[j] for j in kept))
