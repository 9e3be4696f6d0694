import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionsurv import ValidationError
from fusionsurv.reports import (CATEGORIES, PLACEHOLDERS, ReportConfig, ReportDocument,
                                SectionedReport, apply_placeholders, clean_report,
                                export_sentence_bundles, extract_pancreas_sentences,
                                load_reports, process_report, segment_sections,
                                split_sentences)

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def corpus():
    docs = load_reports(DATA / "reports_corpus.jsonl")
    labels = json.loads((DATA / "reports_labels.json").read_text())
    return docs, labels


def test_clean_examples():
    assert clean_report("mass  in head") == "mass in head"
    s = "The pancreas is normal in size."
    assert clean_report(s) == s
    assert clean_report("café “quoted” – x") == 'cafe "quoted" - x'


def test_clean_drops_signature_block_and_stamps():
    raw = "FINDINGS: Normal.\n12/01/2020\nIMPRESSION: Fine.\nElectronically signed by Dr. X\nmore footer"
    assert clean_report(raw) == "FINDINGS: Normal. IMPRESSION: Fine."
    assert clean_report("ICD-10: K86.1\nElectronically signed") == ""


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=st.characters(min_codepoint=9, max_codepoint=0x2100), max_size=200))
def test_clean_idempotent(text):
    once = clean_report(text)
    assert clean_report(once) == once
    assert once.isascii()


def test_segment_three_headers():
    s = segment_sections("INDICATION: abdominal pain. FINDINGS: Pancreas unremarkable. "
                         "IMPRESSION: No acute process.")
    assert s["indications"] == ("abdominal pain.",)
    assert s["findings"] == ("Pancreas unremarkable.",)
    assert s["impressions"] == ("No acute process.",)


def test_segment_headerless_and_dedup():
    s = segment_sections("Liver normal. Spleen normal.")
    assert s["findings"] == ("Liver normal.", "Spleen normal.")
    assert s["indications"] == () and s["impressions"] == ()
    assert segment_sections("FINDINGS: Cyst. Cyst. Cyst.")["findings"] == ("Cyst.",)


def test_header_needs_colon_and_custom_lexicon():
    s = segment_sections("Findings were discussed. IMPRESSION: ok.")
    assert s["findings"] == ("Findings were discussed.",)
    cfg = ReportConfig.from_dict({"headers": {"REASON": "indications", "BODY": "findings"}})
    s = segment_sections("REASON: pain. BODY: normal. IMPRESSION: x.", cfg)
    assert s["indications"] == ("pain.",) and s["findings"] == ("normal.", "IMPRESSION: x.")


def test_sentence_splitter_guards():
    assert split_sentences("Seen by Dr. Smith today. Normal.") == ["Seen by Dr. Smith today.",
                                                                  "Normal."]
    assert split_sentences("Lesion 2 cm. in size; stable.") == ["Lesion 2 cm. in size;", "stable."]
    assert split_sentences("1. Mass. 2. Cyst.") == ["Mass.", "Cyst."]
    assert split_sentences("Compare vs. prior. Done") == ["Compare vs. prior.", "Done"]
    assert split_sentences("Value 3.5 mm. Next.") == ["Value 3.5 mm.", "Next."]


def test_pancreas_extraction():
    s = extract_pancreas_sentences(segment_sections(
        "FINDINGS: Pancreatic duct is dilated. Liver normal. "
        "INDICATION: status post pancreaticoduodenectomy."))
    assert s["pancreas"] == ("status post pancreaticoduodenectomy.", "Pancreatic duct is dilated.")
    assert s["findings"] == ("Pancreatic duct is dilated.", "Liver normal.")
    assert extract_pancreas_sentences(segment_sections("Liver normal."))["pancreas"] == ()


def test_placeholders():
    s = apply_placeholders(segment_sections("IMPRESSION: ok."))
    assert s["indications"] == ("No recorded indications.",)
    assert s["findings"] == ("No significant findings noted.",)
    assert s["impressions"] == ("ok.",)
    assert s["pancreas"] == (PLACEHOLDERS["pancreas"],)
    assert s.placeholder == {"indications": True, "findings": True, "impressions": False,
                             "pancreas": True}


def test_corpus_sections_exact(corpus):
    docs, labels = corpus
    assert len(docs) == 10
    total = correct = 0
    for d in docs:
        s = extract_pancreas_sentences(segment_sections(clean_report(d.raw_text)))
        for c in CATEGORIES:
            total += 1
            correct += list(s[c]) == labels[d.report_id][c]
    assert correct == total


def test_corpus_pancreas_recall_and_substrings(corpus):
    docs, _ = corpus
    for d in docs:
        cleaned = clean_report(d.raw_text)
        s = process_report(d)
        for c in ("indications", "findings", "impressions"):
            if s.placeholder[c]:
                continue
            for sentence in s[c]:
                assert sentence in cleaned
                if "pancrea" in sentence.lower():
                    assert sentence in s["pancreas"]
        assert all(s[c] for c in CATEGORIES)


def test_corpus_placeholders_exactly_on_empty(corpus):
    docs, labels = corpus
    for d in docs:
        s = process_report(d)
        for c in CATEGORIES:
            empty = not labels[d.report_id][c]
            assert s.placeholder[c] == empty
            if empty:
                assert s[c] == (PLACEHOLDERS[c],)
    assert process_report(docs[2])["indications"] == ("No recorded indications.",)
    assert process_report(docs[7])["findings"] == ("No significant findings noted.",)


def test_export_bundles(tmp_path, corpus):
    docs, _ = corpus
    reports = [process_report(d) for d in docs[:2]]
    p = export_sentence_bundles(reports, ["pancreas", "indications"], tmp_path / "b.jsonl")
    lines = p.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert list(rec) == ["report_id", "sample_id", "indications", "pancreas"]
    first = p.read_bytes()
    export_sentence_bundles(reports, ["pancreas", "indications"], tmp_path / "b.jsonl")
    assert p.read_bytes() == first
    assert export_sentence_bundles([], ["findings"], tmp_path / "e.jsonl").read_text() == ""
    with pytest.raises(ValidationError):
        export_sentence_bundles(reports, ["bogus"], tmp_path / "x.jsonl")
    with pytest.raises(ValidationError):
        export_sentence_bundles(reports, [], tmp_path / "x.jsonl")


def test_load_reports_csv_and_errors(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text('report_id,sample_id,text\nA,S1,"FINDINGS: ok."\n')
    assert load_reports(p) == [ReportDocument("A", "S1", "FINDINGS: ok.")]
    bad = tmp_path / "r.jsonl"
    bad.write_text('{"report_id": "A", "sample_id": "S1", "text": ""}\n')
    with pytest.raises(ValidationError, match="empty report text"):
        load_reports(bad)
    bad.write_text("{not json\n")
    with pytest.raises(ValidationError, match="malformed JSON at line 1"):
        load_reports(bad)


def test_config_load_and_unknown_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"pancreas_stems": ["pancrea", "ampull"]}))
    cfg = ReportConfig.load(p)
    s = extract_pancreas_sentences(segment_sections("Ampullary mass.", cfg), cfg)
    assert s["pancreas"] == ("Ampullary mass.",)
    with pytest.raises(ValidationError):
        ReportConfig.from_dict({"nope": 1})


def test_sectioned_report_has_every_category():
    s = apply_placeholders(SectionedReport({c: () for c in CATEGORIES}))
    assert all(len(s[c]) == 1 for c in CATEGORIES)
