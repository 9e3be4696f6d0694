"""Multimodal deep survival toolkit.

Cox partial-likelihood losses, a NumPy MLP risk model with batch norm and
dropout, a linear Cox baseline, Harrell's C-index with bootstrap intervals,
Kaplan-Meier curves, the log-rank test, early fusion of feature blocks,
correlation-threshold selection, radiology-report sectioning and a synthetic
cohort generator.
"""

from ._io import ValidationError
from .cohort import (Cohort, SplitAssignment, SurvivalRecord, apply_horizon_censoring,
                     load_cohort, split_by_subject)
from .coxmath import (LinearCoxModel, cox_npll, cox_npll_and_gradient, cox_npll_gradient,
                      fit_linear_coxph, predict_linear_risk)
from .features import (FeatureTable, SelectionMask, StandardizationParams, apply_standardizer,
                       fit_standardizer, fuse_concat, load_feature_table, select_by_correlation)
from .metrics import (CIndexResult, KmCurve, LogRankResult, StratifiedGroups, bootstrap_ci,
                      concordance_index, concordance_with_ci, kaplan_meier, km_export,
                      log_rank_test, stratify)
from .neural import (MlpConfig, MlpModel, TrainConfig, TrainHistory, build_mlp, forward, predict_risk,
                     train)
from .reports import (ReportConfig, SectionedReport, apply_placeholders, clean_report,
                      export_sentence_bundles, extract_pancreas_sentences, segment_sections)
from .simdata import SyntheticSpec, generate, oracle_metrics

__version__ = "0.1.0"
