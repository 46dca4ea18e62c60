"""Tabular report emission: grouped Markdown and flat CSV.

Rows are MetricsReports. The Markdown table groups rows by (task, target
model) in first-seen order and bolds the best value of each metric column
within a group; the CSV carries the same rows unstyled for downstream
tooling. Both ASR modes appear side by side so no mode is silently chosen.
"""

from __future__ import annotations

import csv
import io
from typing import Optional

from .evaluation import MetricsReport

MARKDOWN_HEADER = (
    "Task", "Model", "Method", "n",
    "ASR (strict)", "ASR (incorrect)", "N-Score", "C-Score",
)
CSV_HEADER = (
    "task", "model", "method", "n",
    "asr_strict", "asr_incorrect", "n_score", "c_score",
)

# column index -> MetricsReport attribute, for the bold-best rule
_METRIC_COLUMNS = {
    4: "asr_strict",
    5: "asr_incorrect",
    6: "n_score_mean",
    7: "c_score",
}

# judging convention, stated with the numbers it shaped
MATCHING_NOTE = (
    "Answer matching: lowercased, Unicode punctuation stripped, "
    "whitespace collapsed, then contiguous token-run containment."
)


def _fmt(value, missing: str) -> str:
    if value is None:
        return missing
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _cells(report: MetricsReport, missing: str) -> list:
    return [
        report.task_tag if report.task_tag is not None else missing,
        report.target_model if report.target_model is not None else missing,
        report.method,
        str(report.n),
        _fmt(report.asr_strict, missing),
        _fmt(report.asr_incorrect, missing),
        _fmt(report.n_score_mean, missing),
        _fmt(report.c_score, missing),
    ]


def _grouped(reports) -> list:
    """Rows bucketed by (task, model), groups in first-seen order."""
    order = []
    buckets = {}
    for report in reports:
        key = (report.task_tag, report.target_model)
        if key not in buckets:
            order.append(key)
            buckets[key] = []
        buckets[key].append(report)
    return [buckets[key] for key in order]


def _bold_best(rows_cells: list, group: list) -> None:
    """Bold the maximum of each metric column, ties included."""
    for col, attr in _METRIC_COLUMNS.items():
        values = [getattr(r, attr) for r in group]
        present = [v for v in values if v is not None]
        if not present:
            continue
        best = max(present)
        for cells, value in zip(rows_cells, values):
            if value is not None and value == best:
                cells[col] = f"**{cells[col]}**"


def emit_table(reports) -> tuple[str, str]:
    """Render reports as (markdown, csv_text).

    Markdown groups by task/model and bolds per-column bests within each
    group; the CSV is one flat row per report in the same order.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("emit_table requires at least one report")

    md_rows = []
    for group in _grouped(reports):
        cells_per_row = [_cells(r, missing="-") for r in group]
        _bold_best(cells_per_row, group)
        md_rows.extend(cells_per_row)

    lines = [
        "| " + " | ".join(MARKDOWN_HEADER) + " |",
        "|" + "|".join(" --- " for _ in MARKDOWN_HEADER) + "|",
    ]
    for cells in md_rows:
        lines.append("| " + " | ".join(cells) + " |")
    lines.extend(["", MATCHING_NOTE])
    markdown = "\n".join(lines) + "\n"

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for group in _grouped(reports):
        for report in group:
            writer.writerow(_cells(report, missing=""))
    return markdown, out.getvalue()


def render_text_type_table(asr_by_class: dict, n: int) -> str:
    """Small Markdown table for the four text-type classes."""
    lines = [
        "| Class | Question-relevant | Scene-relevant | ASR (incorrect) |",
        "| --- | --- | --- | --- |",
    ]
    for label, asr in asr_by_class.items():
        qr = "yes" if "qr1" in label else "no"
        cr = "yes" if "cr1" in label else "no"
        lines.append(f"| {label} | {qr} | {cr} | {asr:.2f} |")
    lines.append("")
    lines.append(f"n = {n}")
    return "\n".join(lines) + "\n"
