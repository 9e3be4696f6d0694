"""Radiology report front end.

Cleans free-text reports, splits them into indication / findings /
impression sentences, collects pancreas-related sentences into their own
category, fills empty categories with neutral placeholders and writes
JSON-lines sentence bundles for an external sentence embedder.
"""

from __future__ import annotations

import csv
import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path

from ._io import ValidationError, atomic_write_text

__all__ = [
    "CATEGORIES",
    "PLACEHOLDERS",
    "ReportConfig",
    "ReportDocument",
    "SectionedReport",
    "clean_report",
    "split_sentences",
    "segment_sections",
    "extract_pancreas_sentences",
    "apply_placeholders",
    "process_report",
    "export_sentence_bundles",
    "load_reports",
]

CATEGORIES = ("indications", "findings", "impressions", "pancreas")

# indications/findings wording is fixed; impressions/pancreas follow the same style
PLACEHOLDERS = {
    "indications": "No recorded indications.",
    "findings": "No significant findings noted.",
    "impressions": "No impressions recorded.",
    "pancreas": "No pancreatic findings noted.",
}

DEFAULT_HEADERS = {
    "clinical indication": "indications",
    "indication": "indications",
    "clinical history": "indications",
    "history": "indications",
    "reason for exam": "indications",
    "findings": "findings",
    "impression": "impressions",
    # recognised so their text does not bleed into the previous section
    "technique": None,
    "comparison": None,
}

DEFAULT_SIGNATURE_PATTERNS = (
    r"^\s*electronically signed",
    r"^\s*(signed|dictated|transcribed|reviewed) by\b",
    r"^\s*attending radiologist\s*:",
)

DEFAULT_DROP_LINE_PATTERNS = (
    # date stamp on its own line, optionally with a clock time
    r"^\s*\d{1,2}/\d{1,2}/\d{2,4}(\s+\d{1,2}:\d{2}(:\d{2})?(\s*[ap]m)?)?\s*$",
    r"^\s*\d{4}-\d{2}-\d{2}(\s+\d{1,2}:\d{2}(:\d{2})?)?\s*$",
    # billing-code lines
    r"^\s*(cpt|icd(-?\d+)?)(\s+code)?\s*[:#]",
)

_PUNCT_MAP = str.maketrans({
    "‘": "'", "’": "'", "“": '"', "”": '"',
    "–": "-", "—": "-", "−": "-", "·": ".",
})


@dataclass(frozen=True)
class ReportConfig:
    headers: dict = field(default_factory=lambda: dict(DEFAULT_HEADERS))
    signature_patterns: tuple = DEFAULT_SIGNATURE_PATTERNS
    drop_line_patterns: tuple = DEFAULT_DROP_LINE_PATTERNS
    pancreas_stems: tuple = ("pancrea",)
    abbreviations: tuple = ("e.g.", "i.e.", "vs.", "cm.", "mm.", "approx.", "etc.")
    title_abbreviations: tuple = ("dr.", "mr.", "mrs.", "ms.")

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for key in ("signature_patterns", "drop_line_patterns", "pancreas_stems",
                    "abbreviations", "title_abbreviations"):
            if key in d:
                kwargs[key] = tuple(d[key])
        if "headers" in d:
            kwargs["headers"] = {k.lower(): v for k, v in d["headers"].items()}
        unknown = set(d) - set(kwargs) - {"headers"}
        if unknown:
            raise ValidationError(f"unknown report config key(s): {', '.join(sorted(unknown))}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed config: {exc}") from None


@dataclass(frozen=True)
class ReportDocument:
    report_id: str
    sample_id: str
    raw_text: str


@dataclass(frozen=True)
class SectionedReport:
    sections: dict
    placeholder: dict = field(default_factory=lambda: {c: False for c in CATEGORIES})
    report_id: str = ""
    sample_id: str = ""

    def __getitem__(self, category):
        return self.sections[category]


# ---------------------------------------------------------------------------
# cleaning
# ---------------------------------------------------------------------------


def _to_ascii(text):
    text = unicodedata.normalize("NFKD", text.translate(_PUNCT_MAP))
    return text.encode("ascii", "ignore").decode("ascii")


def _filter_lines(text, config):
    sig = [re.compile(p, re.IGNORECASE) for p in config.signature_patterns]
    drop = [re.compile(p, re.IGNORECASE) for p in config.drop_line_patterns]
    kept = []
    for line in text.splitlines():
        if any(p.search(line) for p in sig):
            break  # signature/footer block runs to the end of the report
        if any(p.search(line) for p in drop):
            continue
        kept.append(line)
    return kept


def clean_report(raw: str, config: ReportConfig | None = None) -> str:
    """ASCII-fold, strip signature/footer and stamp lines, collapse whitespace.

    Idempotent. May return an empty string (a report that is all footer).
    """
    config = config or ReportConfig()
    text = _to_ascii(raw)
    while True:
        lines = _filter_lines(text, config)
        out = re.sub(r"\s+", " ", " ".join(lines)).strip()
        if out == text:
            return out
        text = out


# ---------------------------------------------------------------------------
# sectioning
# ---------------------------------------------------------------------------


def _header_regex(config):
    names = sorted(config.headers, key=len, reverse=True)
    alt = "|".join(re.escape(n).replace(r"\ ", r"\s+") for n in names)
    return re.compile(rf"(?<![A-Za-z])({alt})s?\s*:", re.IGNORECASE)


_ENUM_MARKER = re.compile(r"^\(?\d{1,2}[.)]\s+")


def split_sentences(text: str, config: ReportConfig | None = None) -> list:
    """Rule-based split after ``.`` or ``;`` followed by whitespace or end of text.

    A period does not end a sentence after a title (``Dr.``), after a listed
    abbreviation when the next word is not capitalized, or after a bare list
    number (``1.``). Leading list numbers are stripped.
    """
    config = config or ReportConfig()
    abbrevs = {a.lower() for a in config.abbreviations}
    titles = {a.lower() for a in config.title_abbreviations}
    sentences, start = [], 0
    for m in re.finditer(r"[.;](?=\s|$)", text):
        end = m.end()
        if m.group() == ".":
            token = re.search(r"(\S+)$", text[start:end])
            word = token.group(1).lower() if token else ""
            nxt = text[end:].lstrip()[:1]
            if word in titles:
                continue
            if word in abbrevs and nxt and not nxt.isupper():
                continue
            if re.fullmatch(r"\(?\d{1,2}\.", word):
                continue
        piece = text[start:end].strip()
        start = end
        if piece:
            sentences.append(piece)
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    out = []
    for s in sentences:
        s = _ENUM_MARKER.sub("", s).strip()
        if re.search(r"[A-Za-z0-9]", s):
            out.append(s)
    return out


def _dedupe(items):
    seen, out = set(), []
    for s in items:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def segment_sections(text: str, config: ReportConfig | None = None,
                     report_id: str = "", sample_id: str = "") -> SectionedReport:
    """Assign sentences of cleaned ``text`` to categories by header.

    Header matching is case-insensitive and needs a trailing colon. Text
    before the first header is treated as findings. Duplicate sentences in a
    category are kept once, first occurrence first. The pancreas category is
    left empty here (see :func:`extract_pancreas_sentences`).
    """
    config = config or ReportConfig()
    lookup = {k.lower(): v for k, v in config.headers.items()}
    buckets = {c: [] for c in CATEGORIES}
    matches = list(_header_regex(config).finditer(text))
    spans = [("findings", 0, matches[0].start() if matches else len(text))]
    for i, m in enumerate(matches):
        name = re.sub(r"\s+", " ", m.group(1).lower())
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        spans.append((lookup.get(name), m.end(), end))
    for category, a, b in spans:
        if category is None:
            continue
        if category not in buckets:
            raise ValidationError(f"header mapped to unknown category {category!r}")
        buckets[category].extend(split_sentences(text[a:b], config))
    sections = {c: tuple(_dedupe(v)) for c, v in buckets.items()}
    return SectionedReport(sections, {c: False for c in CATEGORIES}, report_id, sample_id)


def extract_pancreas_sentences(sectioned: SectionedReport,
                               config: ReportConfig | None = None) -> SectionedReport:
    """Copy every sentence containing a pancreas stem into the pancreas category."""
    config = config or ReportConfig()
    stems = [s.lower() for s in config.pancreas_stems]
    hits = list(sectioned.sections.get("pancreas", ()))
    for cat in ("indications", "findings", "impressions"):
        for s in sectioned.sections[cat]:
            low = s.lower()
            if any(stem in low for stem in stems):
                hits.append(s)
    sections = dict(sectioned.sections)
    sections["pancreas"] = tuple(_dedupe(hits))
    return replace(sectioned, sections=sections)


def apply_placeholders(sectioned: SectionedReport) -> SectionedReport:
    sections = dict(sectioned.sections)
    flags = dict(sectioned.placeholder)
    for cat in CATEGORIES:
        if not sections.get(cat):
            sections[cat] = (PLACEHOLDERS[cat],)
            flags[cat] = True
    return replace(sectioned, sections=sections, placeholder=flags)


def process_report(doc: ReportDocument, config: ReportConfig | None = None) -> SectionedReport:
    """clean -> segment -> pancreas -> placeholders for one document."""
    config = config or ReportConfig()
    text = clean_report(doc.raw_text, config)
    sectioned = segment_sections(text, config, doc.report_id, doc.sample_id)
    return apply_placeholders(extract_pancreas_sentences(sectioned, config))


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def export_sentence_bundles(reports, categories, path):
    """One JSON line per report: report_id, sample_id, then the requested categories."""
    wanted = [c for c in CATEGORIES if c in set(categories)]
    unknown = set(categories) - set(CATEGORIES)
    if unknown:
        raise ValidationError(f"unknown categories: {', '.join(sorted(unknown))}")
    if not wanted:
        raise ValidationError("no categories selected")
    lines = []
    for r in reports:
        rec = {"report_id": r.report_id, "sample_id": r.sample_id}
        for c in wanted:
            rec[c] = list(r.sections[c])
        lines.append(json.dumps(rec, ensure_ascii=False))
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_reports(path) -> list:
    """Read ``report_id, sample_id, text`` records from CSV or JSON lines."""
    path = Path(path)
    docs = []
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    raise ValidationError(f"{path}: malformed JSON at line {lineno}") from None
                docs.append(_doc(rec, path, lineno))
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, rec in enumerate(csv.DictReader(fh), start=2):
                docs.append(_doc(rec, path, lineno))
    if not docs:
        raise ValidationError(f"{path}: no reports")
    return docs


def _doc(rec, path, lineno):
    try:
        text = rec["text"]
        doc = ReportDocument(str(rec["report_id"]), str(rec["sample_id"]), text)
    except (KeyError, TypeError):
        raise ValidationError(
            f"{path}: record {lineno} needs report_id, sample_id and text") from None
    if not isinstance(text, str) or not text.strip():
        raise ValidationError(f"{path}: empty report text at record {lineno}")
    return doc
