"""
Reading data and writing reports
================================

Datasets are delimited text with ``effect`` and ``se`` columns. Reports come
out as a readable table or as versioned JSON that reads back exactly.
"""

import tempfile
from pathlib import Path

from trimeta import PipelineConfig, analyze, build_report, read_dataset, read_report, write_report

tmp = Path(tempfile.mkdtemp())
csv = tmp / "example.csv"
csv.write_text(
    "id\teffect\tse\n"
    "A\t-0.31\t0.20\nB\t-0.12\t0.15\nC\t-0.25\t0.18\nD\t-0.40\t0.30\n"
    "E\t-0.18\t0.12\nF\t-1.90\t0.35\nG\t-0.22\t0.25\nH\t-0.05\t0.22\n"
)

ds = read_dataset(csv)
cfg = PipelineConfig(n_replicates=2000)
report = build_report(analyze(ds, cfg), ds, cfg.as_dict())

print(write_report(report, "text"))

text = write_report(report, "structured")
assert read_report(text).trimmed == report.trimmed
print(text[:400], "...")
