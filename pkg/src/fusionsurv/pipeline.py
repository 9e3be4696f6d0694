"""End-to-end experiments: split, preprocess, fuse, fit, evaluate, ablate.

An experiment is described by one JSON config (see :class:`ExperimentConfig`).
Everything downstream of the config is deterministic: the same config and
seeds reproduce every output file byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import ValidationError, atomic_write_json, atomic_write_text
from .cohort import load_cohort, split_by_subject
from .coxmath import LinearCoxModel, fit_linear_coxph, predict_linear_risk
from .features import (SelectionMask, StandardizationParams, abs_correlation_matrix,
                       apply_standardizer, fit_standardizer, fuse_concat, load_feature_table,
                       select_by_correlation)
from .metrics import (concordance_with_ci, kaplan_meier, km_export, log_rank_test, stratify)
from .neural import (MlpConfig, MlpModel, TrainConfig, build_mlp, predict_risk, train)

__all__ = [
    "ExperimentConfig",
    "Prepared",
    "prepare",
    "run_train",
    "run_eval",
    "run_ablation",
    "load_model_checkpoint",
    "TABLE3_SECTION_COMBOS",
    "TABLE3_THRESHOLDS",
]

logger = logging.getLogger(__name__)

EVAL_SPLITS = (("validation", "internal"), ("test", "external"))

TABLE3_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, "all")
TABLE3_SECTION_COMBOS = (
    ("impressions",),
    ("findings",),
    ("pancreas",),
    ("indications",),
    ("indications", "findings"),
    ("indications", "impressions"),
    ("indications", "pancreas"),
    ("indications", "pancreas", "impressions"),
    ("indications", "pancreas", "findings"),
    ("indications", "findings", "impressions", "pancreas"),
)


@dataclass
class ExperimentConfig:
    cohort: str
    features: dict
    blocks: list
    horizon: float = 60.0
    reports: str | None = None
    report_config: str | None = None
    split: dict = field(default_factory=lambda: {"ratio": 0.8, "seed": 0,
                                                 "external_site": "external"})
    threshold: object = "all"
    select_blocks: list = field(default_factory=lambda: ["radiomics"])
    standardize_blocks: list = field(default_factory=lambda: ["radiomics"])
    model: str = "mlp"
    mlp: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=lambda: {"bootstrap": 1000, "level": 0.95, "seed": 0,
                                                "resample": "sample",
                                                "stratify_threshold": 0.0})
    out: str = "runs/experiment"
    label: str = ""

    def __post_init__(self):
        if self.model not in ("mlp", "linear_cox"):
            raise ValidationError("model must be 'mlp' or 'linear_cox'")
        if isinstance(self.blocks, str):
            self.blocks = [b.strip() for b in self.blocks.split(",") if b.strip()]
        if not self.blocks:
            raise ValidationError("at least one feature block must be selected")
        missing = [b for b in self.blocks if b not in self.features]
        if missing:
            raise ValidationError(f"no feature file configured for block(s): {', '.join(missing)}")
        self.threshold = _parse_threshold(self.threshold)
        ev = {"bootstrap": 1000, "level": 0.95, "seed": 0, "resample": "sample",
              "stratify_threshold": 0.0}
        ev.update(self.eval)
        self.eval = ev
        sp = {"ratio": 0.8, "seed": 0, "external_site": "external"}
        sp.update(self.split)
        self.split = sp

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if base_dir is not None:
            base = Path(base_dir)
            res = lambda p: p if p is None or Path(p).is_absolute() else str(base / p)  # noqa: E731
            for key in ("cohort", "reports", "report_config", "out"):
                if key in d:
                    d[key] = res(d[key])
            if "features" in d:
                d["features"] = {k: res(v) for k, v in d["features"].items()}
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad experiment config: {exc}") from None

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed config: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def with_seed(self, seed):
        """Set every seed (split, init, training, bootstrap) to ``seed``."""
        return replace(self, split={**self.split, "seed": seed}, mlp={**self.mlp, "seed": seed},
                       train={**self.train, "seed": seed}, eval={**self.eval, "seed": seed})

    def seeds(self):
        return {"split": self.split["seed"], "init": self.mlp.get("seed", 0),
                "train": self.train.get("seed", 0), "bootstrap": self.eval["seed"]}

    def to_dict(self):
        return asdict(self)


def _parse_threshold(t):
    if t is None or (isinstance(t, str) and t.strip().lower() == "all"):
        return "all"
    try:
        t = float(t)
    except (TypeError, ValueError):
        raise ValidationError(f"threshold must be a number or 'all', got {t!r}") from None
    if not t > 0:
        raise ValidationError("threshold must be positive")
    return t


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class Prepared:
    cohort: object
    split: object
    table: object  # preprocessed, model-ready columns
    raw_table: object  # fused, before selection/standardization
    preprocessing: dict
    mask: SelectionMask | None = None


def _load_fused(cfg: ExperimentConfig, cohort):
    tables = [load_feature_table(cfg.features[b], b) for b in cfg.blocks]
    ids = cohort.sample_ids
    for b, t in zip(cfg.blocks, tables):
        have = set(t.sample_ids)
        missing = [s for s in ids if s not in have]
        if missing:
            raise ValidationError(
                f"block {b!r} lacks {len(missing)} cohort sample(s), e.g. {missing[0]!r}")
    return fuse_concat([t.rows(ids) for t in tables])


def apply_preprocessing(table, preprocessing):
    out = table.select_columns(preprocessing["columns"])
    if preprocessing.get("standardizer"):
        out = apply_standardizer(out, StandardizationParams.from_dict(preprocessing["standardizer"]))
    return out


def prepare(cfg: ExperimentConfig) -> Prepared:
    cohort = load_cohort(cfg.cohort, horizon=cfg.horizon)
    split = split_by_subject(cohort, ratio=cfg.split["ratio"], seed=cfg.split["seed"],
                             external_site=cfg.split["external_site"])
    train_ids = split.sample_ids(cohort, "train")
    if not train_ids:
        raise ValidationError("training split is empty")
    raw = _load_fused(cfg, cohort)

    columns = raw.column_names
    mask = None
    select_blocks = [b for b in cfg.select_blocks if b in cfg.blocks]
    if cfg.threshold != "all" and select_blocks:
        mask = select_by_correlation(raw, train_ids, cfg.threshold, blocks=select_blocks)
        retained = set(mask.retained)
        columns = [c for c, (b, _) in zip(raw.column_names, raw.columns)
                   if b not in select_blocks or c in retained]
    table = raw.select_columns(columns)

    std_blocks = [b for b in cfg.standardize_blocks if b in cfg.blocks]
    params = fit_standardizer(table, train_ids, blocks=std_blocks) if std_blocks else None
    preprocessing = {"columns": list(columns),
                     "standardizer": params.to_dict() if params else None,
                     "selection": mask.to_dict() if mask else None}
    if params is not None:
        table = apply_standardizer(table, params)
    return Prepared(cohort, split, table, raw, preprocessing, mask)


def _arrays(prep: Prepared, split_name):
    ids = prep.split.sample_ids(prep.cohort, split_name)
    sub = prep.cohort.subset(ids)
    return ids, prep.table.rows(ids).values, sub.times, sub.events, sub.subject_ids


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _save_model_checkpoint(path, model, preprocessing, cfg):
    # output location is not part of the experiment; leaving it out keeps reruns byte-identical
    experiment = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    payload = {"kind": "mlp" if isinstance(model, MlpModel) else "linear_cox",
               "model": model.to_dict(), "preprocessing": preprocessing,
               "experiment": experiment}
    return atomic_write_text(path, json.dumps(payload) + "\n")


def load_model_checkpoint(path):
    """Return ``(model, preprocessing, payload)`` for either model family."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed checkpoint: {exc}") from None
    kind = payload.get("kind")
    if kind == "mlp":
        model = MlpModel.from_dict(payload["model"])
    elif kind == "linear_cox":
        model = LinearCoxModel.from_dict(payload["model"])
    else:
        raise ValidationError(f"{path}: unknown checkpoint kind {kind!r}")
    return model, payload["preprocessing"], payload


def _score(model, X):
    if isinstance(model, MlpModel):
        return predict_risk(model, X)
    return predict_linear_risk(model, X)


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


def _fit(cfg, prep):
    _, Xtr, ttr, etr, _ = _arrays(prep, "train")
    if cfg.model == "linear_cox":
        model = fit_linear_coxph(Xtr, ttr, etr, **{k: v for k, v in cfg.train.items()
                                                   if k in ("tol", "max_iter")})
        model.columns = prep.table.column_names
        return model, {"iterations": model.iterations, "grad_norm": model.grad_norm}
    _, Xva, tva, eva, _ = _arrays(prep, "validation")
    if Xva.shape[0] == 0:
        raise ValidationError("validation split is empty; early stopping needs it")
    mcfg = MlpConfig(input_dim=prep.table.width, **cfg.mlp)
    tc = TrainConfig(**cfg.train)
    model, history = train(build_mlp(mcfg), Xtr, (ttr, etr), Xva, (tva, eva), tc)
    return model, history.to_dict()


def _evaluate_split(cfg, prep, model, split_name):
    ids, X, t, e, subjects = _arrays(prep, split_name)
    if len(ids) == 0:
        return None
    scores = _score(model, X)
    ev = cfg.eval
    groups = np.asarray(subjects) if ev["resample"] == "subject" else None
    res = concordance_with_ci(t, e, scores, B=int(ev["bootstrap"]), seed=int(ev["seed"]),
                              level=float(ev["level"]), groups=groups)
    return ids, t, e, scores, res


def run_train(cfg: ExperimentConfig, out_dir=None):
    """split -> select -> standardize -> fuse -> fit -> internal/external C-index."""
    out = Path(out_dir or cfg.out)
    prep = prepare(cfg)
    logger.info("input_dim %d (%s)", prep.table.width,
                ", ".join(f"{b}={w}" for b, w in prep.table.block_widths().items()))
    model, history = _fit(cfg, prep)

    metrics = {"label": cfg.label, "model": cfg.model, "input_dim": prep.table.width,
               "block_widths": prep.table.block_widths(), "seeds": cfg.seeds(),
               "split_counts": prep.split.counts()}
    for split_name, tag in EVAL_SPLITS:
        r = _evaluate_split(cfg, prep, model, split_name)
        if r is not None:
            metrics[tag] = r[-1].to_dict()
            metrics[tag]["display"] = r[-1].format()

    _save_model_checkpoint(out / "checkpoint.json", model, prep.preprocessing, cfg)
    atomic_write_json(out / "history.json", history)
    atomic_write_json(out / "metrics.json", metrics)
    if prep.mask is not None:
        prep.mask.save(out / "selection.json")
    return metrics, prep, model


def run_eval(cfg: ExperimentConfig, checkpoint, out_dir=None):
    """Score each evaluation split; C-index with CI, stratification at the
    threshold, Kaplan-Meier per risk group, log-rank test; Table-2-style row."""
    out = Path(out_dir or cfg.out)
    model, preprocessing, _ = load_model_checkpoint(checkpoint)
    cohort = load_cohort(cfg.cohort, horizon=cfg.horizon)
    split = split_by_subject(cohort, ratio=cfg.split["ratio"], seed=cfg.split["seed"],
                             external_site=cfg.split["external_site"])
    table = apply_preprocessing(_load_fused(cfg, cohort), preprocessing)
    prep = Prepared(cohort, split, table, None, preprocessing)

    report = {"label": cfg.label, "model": cfg.model, "input_dim": table.width,
              "seeds": cfg.seeds()}
    curves = []
    for split_name, tag in EVAL_SPLITS:
        r = _evaluate_split(cfg, prep, model, split_name)
        if r is None:
            continue
        ids, t, e, scores, res = r
        groups = stratify(scores, cfg.eval["stratify_threshold"])
        entry = {"c_index": res.to_dict(), "display": res.format(),
                 "n_high": groups.n_high, "n_low": groups.n_low}
        for label, mask in (("low", ~groups.high), ("high", groups.high)):
            if mask.any():
                curves.append((f"{tag}_{label}", kaplan_meier(t[mask], e[mask])))
        if groups.n_high and groups.n_low and e.any():
            entry["log_rank"] = log_rank_test(groups, t, e).to_dict()
        else:
            entry["log_rank"] = "not applicable"
            logger.warning("%s: one-sided stratification, log-rank skipped", tag)
        report[tag] = entry

    atomic_write_json(out / "eval_metrics.json", report)
    if curves:
        km_export(curves, out / "km.csv")
    _write_table2(out, [report])
    return report


def _cell(entry):
    return entry["display"] if isinstance(entry, dict) and "display" in entry else "n/a"


def _write_table2(out, reports):
    header = ["model", "internal", "external"]
    rows = [[r.get("label") or r["model"], _cell(r.get("internal")), _cell(r.get("external"))]
            for r in reports]
    _write_table(out, "table2", header, rows)


def _write_table(out, stem, header, rows):
    def csv_field(v):
        v = str(v)
        return f'"{v}"' if any(ch in v for ch in ',"') else v
    csv_text = "\n".join(",".join(csv_field(v) for v in row) for row in [header, *rows]) + "\n"
    md = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    md += ["| " + " | ".join(str(v) for v in row) + " |" for row in rows]
    atomic_write_text(Path(out) / f"{stem}.csv", csv_text)
    atomic_write_text(Path(out) / f"{stem}.md", "\n".join(md) + "\n")


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------


def verify_selection(prep: Prepared, cfg: ExperimentConfig) -> bool:
    """Re-check that every retained pair has |pearson| < threshold on training rows."""
    if prep.mask is None or cfg.threshold == "all" or cfg.threshold >= 1:
        return True
    train_ids = prep.split.sample_ids(prep.cohort, "train")
    vals = prep.raw_table.rows(train_ids).select_columns(prep.mask.retained).values
    R = abs_correlation_matrix(vals)
    np.fill_diagonal(R, 0.0)
    return bool(np.all(R < cfg.threshold))


def _slug(v):
    return str(v).replace(",", "+").replace(" ", "").replace(".", "p")


def run_ablation(cfg: ExperimentConfig, thresholds=None, combos=None, out_dir=None):
    """Table-3-style sweep over correlation thresholds or block combinations.

    Every sweep point reuses the same split and seeds. A failing point is
    recorded in its row and the sweep continues.
    """
    if (thresholds is None) == (combos is None):
        raise ValidationError("give exactly one of thresholds or combos")
    out = Path(out_dir or cfg.out)
    points = []
    if thresholds is not None:
        for t in thresholds:
            t = _parse_threshold(t)
            points.append((f"threshold < {t}" if t != "all" else "all features",
                           {"threshold": t}, f"threshold_{_slug(t)}"))
    else:
        for combo in combos:
            combo = [c.strip() for c in (combo.split("+") if isinstance(combo, str) else combo)]
            points.append((", ".join(combo), {"blocks": list(combo)},
                           f"blocks_{_slug('+'.join(combo))}"))
    if not points:
        raise ValidationError("empty sweep")

    rows, records = [], []
    for label, changes, slug in points:
        rec = {"config": label}
        try:
            sub = replace(cfg, label=label, **changes)
            metrics, prep, _ = run_train(sub, out / slug)
            n_sel = (len(prep.mask.retained) if prep.mask is not None else
                     sum(w for b, w in prep.table.block_widths().items()
                         if b in sub.select_blocks))
            rec.update({"n_features": prep.table.width, "n_selected": n_sel,
                        "internal": metrics.get("internal", {}).get("display", "n/a"),
                        "external": metrics.get("external", {}).get("display", "n/a"),
                        "selection_check": "pass" if verify_selection(prep, sub) else "FAIL",
                        "error": ""})
        except Exception as exc:  # noqa: BLE001 - one failed point must not stop the sweep
            logger.exception("sweep point %s failed", label)
            rec.update({"n_features": "", "n_selected": "", "internal": "n/a",
                        "external": "n/a", "selection_check": "", "error": str(exc)})
        records.append(rec)
        rows.append([rec[k] for k in ("config", "n_features", "n_selected", "internal",
                                      "external", "selection_check", "error")])
    header = ["config", "n_features", "n_selected", "internal", "external",
              "selection_check", "error"]
    _write_table(out, "ablation", header, rows)
    atomic_write_json(out / "ablation.json", records)
    return records
