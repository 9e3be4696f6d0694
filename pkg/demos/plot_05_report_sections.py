"""
Sectioning a radiology report
=============================

Reports are cleaned, split into indication, findings and impression
sentences, pancreas sentences are copied into their own category, and empty
categories get a neutral placeholder.
"""

from fusionsurv.reports import ReportDocument, clean_report, process_report

raw = """CLINICAL INDICATION: Weight loss; rule out mass.
FINDINGS: The liver is normal in size.  Pancreatic duct is dilated to 5 mm.
The spleen is normal.  The spleen is normal.
IMPRESSION: Dilated pancreatic duct. Recommend MRCP.

Electronically signed by: Dr. Smith
03/14/2019 10:22"""

print(clean_report(raw))

###############################################################################
# Sections
# --------
# The repeated spleen sentence is kept once and the signature block is gone.

report = process_report(ReportDocument("R1", "S1", raw))
for category, sentences in report.sections.items():
    print(f"{category}: {list(sentences)}")

###############################################################################
# A report with no headers lands entirely in findings; the other categories
# receive placeholders.

bare = process_report(ReportDocument("R2", "S2", "Liver and spleen unremarkable."))
for category, sentences in bare.sections.items():
    print(f"{category}: {list(sentences)}  placeholder={bare.placeholder[category]}")
