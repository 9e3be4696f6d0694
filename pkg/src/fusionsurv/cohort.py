"""Scan-level survival observations: loading, administrative censoring and
patient-level splitting."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._io import ValidationError, atomic_write_text

__all__ = [
    "SITES",
    "SPLITS",
    "SurvivalRecord",
    "Cohort",
    "SplitAssignment",
    "CohortValidationError",
    "load_cohort",
    "write_cohort",
    "apply_horizon_censoring",
    "split_by_subject",
]

logger = logging.getLogger(__name__)

SITES = ("internal_a", "internal_b", "external")
SPLITS = ("train", "validation", "test")
COHORT_COLUMNS = ("subject_id", "sample_id", "site", "raw_time_months", "event_observed")
DEFAULT_HORIZON = 60.0


class CohortValidationError(ValidationError):
    def __init__(self, errors):
        self.errors = list(errors)
        shown = "; ".join(self.errors[:10])
        more = f" (+{len(self.errors) - 10} more)" if len(self.errors) > 10 else ""
        super().__init__(shown + more)


@dataclass(frozen=True)
class SurvivalRecord:
    """One scan. ``raw_*`` fields are the uncensored input; ``time_months`` and
    ``event`` are the values after the horizon is applied."""

    subject_id: str
    sample_id: str
    site: str
    raw_time_months: float
    raw_event: bool
    time_months: float
    event: bool


@dataclass(frozen=True)
class Cohort:
    records: tuple
    horizon_months: float = DEFAULT_HORIZON

    def __post_init__(self):
        ids = [r.sample_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate sample_id in cohort")

    def __len__(self):
        return len(self.records)

    @property
    def sample_ids(self):
        return [r.sample_id for r in self.records]

    @property
    def subject_ids(self):
        return [r.subject_id for r in self.records]

    @property
    def times(self):
        return np.array([r.time_months for r in self.records], dtype=float)

    @property
    def events(self):
        return np.array([r.event for r in self.records], dtype=bool)

    @property
    def censorship_rate(self) -> float:
        if not self.records:
            return float("nan")
        return float(np.mean([not r.event for r in self.records]))

    def subset(self, sample_ids):
        index = {r.sample_id: r for r in self.records}
        return Cohort(tuple(index[s] for s in sample_ids), self.horizon_months)


def apply_horizon_censoring(cohort: Cohort, horizon: float = DEFAULT_HORIZON) -> Cohort:
    """Administrative censoring at ``horizon`` months.

    An event exactly at the horizon still counts as an event. Later events
    (and later censorings) become ``(horizon, censored)``. Works from the raw
    fields, so it is idempotent.
    """
    horizon = float(horizon)
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    out = []
    for r in cohort.records:
        if r.raw_time_months > horizon:
            out.append(replace(r, time_months=horizon, event=False))
        else:
            out.append(replace(r, time_months=r.raw_time_months, event=r.raw_event))
    return Cohort(tuple(out), horizon)


def _parse_row(row, lineno):
    errors = []
    subject = (row.get("subject_id") or "").strip()
    sample = (row.get("sample_id") or "").strip()
    site = (row.get("site") or "").strip()
    if not subject:
        errors.append(f"empty subject_id at row {lineno}")
    if not sample:
        errors.append(f"empty sample_id at row {lineno}")
    if site not in SITES:
        errors.append(f"unknown site {site!r} at row {lineno}")
    time = None
    try:
        time = float(row.get("raw_time_months", ""))
    except ValueError:
        errors.append(f"unparseable number at row {lineno}")
    else:
        if not np.isfinite(time):
            errors.append(f"unparseable number at row {lineno}")
        elif time <= 0:
            errors.append(f"non-positive time at row {lineno}")
    event = (row.get("event_observed") or "").strip()
    if event not in ("0", "1"):
        errors.append(f"event_observed must be 0 or 1 at row {lineno}")
    if errors:
        return None, errors
    return SurvivalRecord(subject, sample, site, time, event == "1", time, event == "1"), []


def load_cohort(path, horizon: float = DEFAULT_HORIZON, strict: bool = True) -> Cohort:
    """Read a cohort CSV and apply administrative censoring at ``horizon``.

    With ``strict`` any invalid row raises :class:`CohortValidationError`
    listing every problem by row number. Otherwise invalid rows are dropped
    with a warning.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in COHORT_COLUMNS if c not in header]
        if missing:
            raise CohortValidationError([f"missing column {c!r}" for c in missing])
        reader.fieldnames = header
        records, errors, seen = [], [], set()
        all_subjects = set()
        # header is line 1
        for lineno, row in enumerate(reader, start=2):
            if (row.get("subject_id") or "").strip():
                all_subjects.add(row["subject_id"].strip())
            rec, errs = _parse_row(row, lineno)
            if rec is not None and rec.sample_id in seen:
                rec, errs = None, [f"duplicate sample_id {rec.sample_id!r} at row {lineno}"]
            if errs:
                errors.extend(errs)
                continue
            seen.add(rec.sample_id)
            records.append(rec)

    if errors:
        if strict:
            raise CohortValidationError(errors)
        for e in errors:
            logger.warning("%s: dropped row: %s", path, e)
        dropped = all_subjects - {r.subject_id for r in records}
        if dropped:
            logger.warning("%s: %d subject(s) have no usable samples and were dropped",
                           path, len(dropped))
    if not records:
        raise CohortValidationError([f"{path}: no data rows"])
    return apply_horizon_censoring(Cohort(tuple(records), horizon), horizon)


def write_cohort(cohort: Cohort, path):
    """Write the raw (pre-horizon) view of ``cohort`` in the cohort CSV schema."""
    lines = [",".join(COHORT_COLUMNS)]
    for r in cohort.records:
        lines.append(f"{r.subject_id},{r.sample_id},{r.site},{r.raw_time_months!r},"
                     f"{int(r.raw_event)}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class SplitAssignment:
    mapping: dict

    def subjects(self, split):
        return sorted(s for s, v in self.mapping.items() if v == split)

    def split_of(self, subject_id):
        return self.mapping[subject_id]

    def sample_ids(self, cohort: Cohort, split):
        return [r.sample_id for r in cohort.records if self.mapping[r.subject_id] == split]

    def counts(self):
        return {s: sum(1 for v in self.mapping.values() if v == s) for s in SPLITS}


def split_by_subject(cohort: Cohort, ratio: float = 0.8, seed: int = 0,
                     external_site="external") -> SplitAssignment:
    """Patient-level split.

    Subjects with any sample from ``external_site`` form the test split. The
    remaining subjects are shuffled with a seeded RNG; the first
    ``floor(ratio * N)`` go to train, the rest to validation.
    """
    if not 0 < ratio < 1:
        raise ValidationError("split ratio must lie in (0, 1)")
    if not cohort.records:
        raise ValidationError("cannot split an empty cohort")
    external = set()
    if external_site is not None:
        external = {r.subject_id for r in cohort.records if r.site == external_site}
    internal = sorted({r.subject_id for r in cohort.records} - external)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(internal))
    # epsilon guards products like 0.29 * 100 == 28.999999999999996
    n_train = int(np.floor(ratio * len(internal) + 1e-9))
    mapping = {s: "test" for s in external}
    for rank, idx in enumerate(perm):
        mapping[internal[idx]] = "train" if rank < n_train else "validation"
    return SplitAssignment(dict(sorted(mapping.items())))
