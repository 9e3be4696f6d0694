"""Command-line entry point.

Subcommands: ``sections``, ``simulate``, ``train``, ``eval``, ``ablate``,
``km-export``. Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._io import ValidationError, atomic_write_json
from .cohort import load_cohort
from .metrics import kaplan_meier, km_export, stratify
from .pipeline import (TABLE3_SECTION_COMBOS, TABLE3_THRESHOLDS, ExperimentConfig,
                       run_ablation, run_eval, run_train)
from .reports import (CATEGORIES, ReportConfig, export_sentence_bundles, load_reports,
                      process_report)
from .simdata import SyntheticSpec, generate, oracle_metrics

logger = logging.getLogger("fusionsurv")


def _experiment(args) -> ExperimentConfig:
    if not args.config:
        raise ValidationError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, out=args.out)
    if getattr(args, "bootstrap", None) is not None:
        cfg = replace(cfg, eval={**cfg.eval, "bootstrap": args.bootstrap})
    if getattr(args, "threshold", None) is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "threshold": args.threshold})
    if getattr(args, "blocks", None):
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "blocks": args.blocks})
    return cfg


def cmd_sections(args):
    config = ReportConfig.load(args.config) if args.config else ReportConfig()
    docs = load_reports(args.input)
    processed = [process_report(d, config) for d in docs]
    categories = args.categories.split(",") if args.categories else list(CATEGORIES)
    out = Path(args.out or ".") / "sentence_bundles.jsonl"
    export_sentence_bundles(processed, categories, out)
    print(f"wrote {len(processed)} bundle(s) to {out}")
    print(f"{'category':<12} {'sentences':>9} {'placeholder rate':>17}")
    for c in CATEGORIES:
        n = sum(0 if r.placeholder[c] else len(r.sections[c]) for r in processed)
        rate = np.mean([r.placeholder[c] for r in processed])
        print(f"{c:<12} {n:>9d} {rate:>17.2%}")
    return 0


def cmd_simulate(args):
    params = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            params = json.load(fh)
    if args.seed is not None:
        params["seed"] = args.seed
    if args.n is not None:
        params["n"] = args.n
    if args.kind:
        params["risk"] = args.kind
    try:
        spec = SyntheticSpec(**params)
    except TypeError as exc:
        raise ValidationError(f"bad simulation config: {exc}") from None
    sc = generate(spec)
    out = Path(args.out or "synthetic")
    paths = sc.write(out)
    blocks = sc.features.block_names
    experiment = {
        "cohort": "cohort.csv",
        "features": {b: f"features_{b}.csv" for b in blocks},
        "blocks": blocks,
        "standardize_blocks": blocks,
        "select_blocks": ["radiomics"] if "radiomics" in blocks else blocks,
        "split": {"ratio": 0.8, "seed": spec.seed, "external_site": "external"},
        "mlp": {"seed": spec.seed},
        "train": {"seed": spec.seed},
        "eval": {"bootstrap": 1000, "level": 0.95, "seed": spec.seed},
        "out": "run",
    }
    atomic_write_json(out / "experiment.json", experiment)
    print(f"wrote {len(paths)} file(s) to {out}; censorship rate "
          f"{sc.cohort.censorship_rate:.2%}; oracle C-index {oracle_metrics(sc).value:.4f}")
    return 0


def cmd_train(args):
    cfg = _experiment(args)
    metrics, _, _ = run_train(cfg)
    print(f"input_dim {metrics['input_dim']}")
    for tag in ("internal", "external"):
        if tag in metrics:
            print(f"{tag:<9} C-index {metrics[tag]['display']}")
    print(f"outputs in {cfg.out}")
    return 0


def cmd_eval(args):
    cfg = _experiment(args)
    checkpoint = args.checkpoint or str(Path(cfg.out) / "checkpoint.json")
    if not Path(checkpoint).exists():
        raise ValidationError(f"checkpoint not found: {checkpoint}")
    report = run_eval(cfg, checkpoint)
    for tag in ("internal", "external"):
        if tag in report:
            lr = report[tag]["log_rank"]
            p = lr["p_display"] if isinstance(lr, dict) else lr
            print(f"{tag:<9} C-index {report[tag]['display']}  "
                  f"high/low {report[tag]['n_high']}/{report[tag]['n_low']}  log-rank p {p}")
    return 0


def cmd_ablate(args):
    cfg = _experiment(args)
    if args.sweep == "thresholds":
        ts = args.values.split(",") if args.values else list(TABLE3_THRESHOLDS)
        records = run_ablation(cfg, thresholds=ts)
    else:
        combos = args.values.split(",") if args.values else list(TABLE3_SECTION_COMBOS)
        records = run_ablation(cfg, combos=combos)
    for r in records:
        print(f"{r['config']:<40} n={r['n_features']!s:>5}  internal {r['internal']}  "
              f"external {r['external']} {r['error']}")
    return 0


def cmd_km_export(args):
    cohort = load_cohort(args.cohort, horizon=args.horizon)
    t, e = cohort.times, cohort.events
    if args.scores:
        with open(args.scores, newline="", encoding="utf-8") as fh:
            try:
                score_map = {row["sample_id"]: float(row["score"]) for row in csv.DictReader(fh)}
            except (KeyError, ValueError):
                raise ValidationError(f"{args.scores}: needs sample_id,score columns") from None
        missing = [s for s in cohort.sample_ids if s not in score_map]
        if missing:
            raise ValidationError(f"no score for sample {missing[0]!r}")
        groups = stratify([score_map[s] for s in cohort.sample_ids], args.stratify_threshold)
        curves = [(label, kaplan_meier(t[m], e[m]))
                  for label, m in (("low", ~groups.high), ("high", groups.high)) if m.any()]
    else:
        curves = [("all", kaplan_meier(t, e))]
    path = km_export(curves, Path(args.out or ".") / "km.csv")
    print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fusionsurv",
        description="Multimodal deep survival experiments on feature tables.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="override every seed")

    p = sub.add_parser("sections", help="clean and section radiology reports")
    p.add_argument("input", help="reports as CSV or JSON lines (report_id, sample_id, text)")
    p.add_argument("--config", help="report config (JSON)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--categories", help=f"comma list from {','.join(CATEGORIES)}")
    p.set_defaults(func=cmd_sections)

    p = sub.add_parser("simulate", help="write a synthetic cohort and feature tables")
    p.add_argument("--config", help="simulation spec (JSON, SyntheticSpec fields)")
    p.add_argument("--out", help="output directory (default: synthetic)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--kind", choices=["linear", "nonlinear"])
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("train", cmd_train, "fit a model and score the held-out splits"),
                             ("eval", cmd_eval, "evaluate a checkpoint (C-index, KM, log-rank)")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--bootstrap", type=int, help="bootstrap replicates")
        p.add_argument("--threshold", help="correlation threshold or 'all'")
        p.add_argument("--blocks", help="comma list of feature blocks to fuse")
        if name == "eval":
            p.add_argument("--checkpoint", help="default: <out>/checkpoint.json")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="threshold or block-combination sweep")
    common(p)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--sweep", choices=["thresholds", "sections"], default="thresholds")
    p.add_argument("--values", help="thresholds (0.1,...,all) or combos (a+b,c)")
    p.add_argument("--threshold", help=argparse.SUPPRESS)
    p.add_argument("--blocks", help="base block list")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("km-export", help="Kaplan-Meier curves as long-format CSV")
    p.add_argument("--cohort", required=True)
    p.add_argument("--scores", help="CSV sample_id,score; stratify at the threshold")
    p.add_argument("--stratify-threshold", type=float, default=0.0)
    p.add_argument("--horizon", type=float, default=60.0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_km_export)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
