# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Benchmark and sweep rendering: JSON records, markdown tables and long-format CSV."""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd
from jinja2 import BaseLoader, Environment

from dg_methods import METHOD_LABELS, parse_method
from exceptions import ReportError
from harness import BenchmarkReport, FoldResult, SweepRecord
from models import baseline_label

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.json"
SWEEP_FILE = "sweep.json"

TABLE_TEMPLATE = """\
| Baseline |{% for column in columns %} {{ column }} |{% endfor %} Avg. |
|---|{% for column in columns %}---|{% endfor %}---|
{% for row in rows -%}
| {{ row.label }} |{% for cell in row.cells %} {{ cell }} |{% endfor %} {{ row.average }} |
{% endfor -%}
| Avg. |{% for cell in averages %} {{ cell }} |{% endfor %} {{ overall }} |
"""

SWEEP_TEMPLATE = """\
| Method | Baseline | Epochs | Batch | Accuracy |
|---|---|---|---|---|
{% for record in records -%}
| {{ record.method }} | {{ record.baseline }} | {{ record.epochs }} | {{ record.batch }} \
| {{ record.value }} |
{% endfor -%}
"""


def _environment() -> Environment:
    """Jinja2 environment for the markdown templates."""
    return Environment(loader=BaseLoader(), autoescape=True)


def method_label(method: str) -> str:
    """Display name of a method id.

    Args:
        method: method id.

    Returns:
        The column header, e.g. "MMD" for ddc.
    """
    return METHOD_LABELS[parse_method(method)]


def _pair(mean: float, std: float) -> str:
    """Format a cell as mean/std."""
    return f"{mean:.4f}/{std:.4f}"


def render_markdown(report: BenchmarkReport) -> str:
    """Render the benchmark table: baselines as rows, methods as columns, averages last.

    Args:
        report: aggregated benchmark.

    Returns:
        The markdown table.
    """
    rows = [
        {
            "label": baseline_label(baseline),
            "cells": [
                _pair(report.cell(baseline, m).mean, report.cell(baseline, m).std)
                for m in report.methods
            ],
            "average": _pair(*report.row_average[baseline]),
        }
        for baseline in report.baselines
    ]
    row_means = [report.row_average[b] for b in report.baselines]
    overall = _pair(
        sum(mean for mean, _ in row_means) / len(row_means),
        sum(std for _, std in row_means) / len(row_means),
    )
    return (
        _environment()
        .from_string(TABLE_TEMPLATE)
        .render(
            columns=[method_label(m) for m in report.methods],
            rows=rows,
            averages=[_pair(*report.column_average[m]) for m in report.methods],
            overall=overall,
        )
    )


def folds_frame(folds: Sequence[FoldResult]) -> pd.DataFrame:
    """Long-format table with one row per fold.

    Args:
        folds: fold results.

    Returns:
        Columns baseline, method, fold, target_subject, target_accuracy,
        best_val_accuracy, final_val_accuracy, best_epoch, status.
    """
    columns = [
        "baseline",
        "method",
        "fold",
        "target_subject",
        "target_accuracy",
        "best_val_accuracy",
        "final_val_accuracy",
        "best_epoch",
        "status",
    ]
    return pd.DataFrame([{c: getattr(f, c) for c in columns} for f in folds], columns=columns)


def render_csv(folds: Sequence[FoldResult]) -> str:
    """Render fold results as long-format CSV.

    Args:
        folds: fold results.

    Returns:
        The CSV text.
    """
    return folds_frame(folds).to_csv(index=False, lineterminator="\n", float_format="%.10g")


def results_document(
    report: BenchmarkReport,
    folds: Sequence[FoldResult],
    config: dict,
    created_at: Optional[str] = None,
) -> dict:
    """Assemble the results.json document.

    Args:
        report: aggregated benchmark.
        folds: fold results.
        config: run configuration with defaults applied.
        created_at: timestamp kept under metadata, outside the reproducible part.

    Returns:
        The document.
    """
    return {
        "report": report.to_dict(),
        "folds": [fold.to_dict() for fold in folds],
        "config": config,
        "metadata": {"created_at": created_at},
    }


def render_json(document: dict) -> str:
    """Serialize a document as canonical JSON.

    Args:
        document: JSON-serializable document.

    Returns:
        Indented JSON text with sorted keys and a trailing newline.
    """
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def sweep_document(
    records: Sequence[SweepRecord], grid: dict, created_at: Optional[str] = None
) -> dict:
    """Assemble the sweep.json document.

    Args:
        records: sweep records.
        grid: the grid that was run.
        created_at: timestamp kept under metadata.

    Returns:
        The document.
    """
    return {
        "grid": grid,
        "records": [asdict(record) for record in records],
        "metadata": {"created_at": created_at},
    }


def render_sweep_csv(records: Sequence[SweepRecord]) -> str:
    """Render sweep records as long-format CSV.

    Args:
        records: sweep records.

    Returns:
        The CSV text.
    """
    frame = pd.DataFrame([asdict(r) for r in records], columns=list(SweepRecord.__annotations__))
    return frame.to_csv(index=False, lineterminator="\n", float_format="%.10g")


def render_sweep_markdown(records: Sequence[SweepRecord]) -> str:
    """Render sweep records as a markdown table.

    Args:
        records: sweep records.

    Returns:
        The markdown table; failed cells show "failed".
    """
    rows = [
        {
            "method": method_label(r.method),
            "baseline": baseline_label(r.baseline),
            "epochs": r.epochs,
            "batch": r.batch,
            "value": _pair(r.mean, r.std) if r.status == "ok" else "failed",
        }
        for r in records
    ]
    return _environment().from_string(SWEEP_TEMPLATE).render(records=rows)


def load_results(directory: Union[str, Path]) -> Tuple[str, dict]:
    """Read the stored results of a benchmark or sweep directory.

    Args:
        directory: output directory of benchmark, train or sweep.

    Returns:
        ("benchmark" or "sweep", decoded document).

    Raises:
        ReportError: if the directory holds no readable results.
    """
    directory = Path(directory)
    for kind, name in (("benchmark", RESULTS_FILE), ("sweep", SWEEP_FILE)):
        path = directory / name
        if path.is_file():
            try:
                return kind, json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ReportError(f"cannot read {path}: {exc}") from exc
    raise ReportError(f"no {RESULTS_FILE} or {SWEEP_FILE} in {directory}")


def render_stored(kind: str, document: dict, output_format: str = "md") -> str:
    """Render a stored results document.

    Args:
        kind: "benchmark" or "sweep".
        document: decoded results document.
        output_format: md, csv or json.

    Returns:
        The rendered text.

    Raises:
        ReportError: on an unknown format or a malformed document.
    """
    if output_format == "json":
        return render_json(document)
    try:
        if kind == "sweep":
            records: List[SweepRecord] = [SweepRecord(**r) for r in document["records"]]
            if output_format == "csv":
                return render_sweep_csv(records)
            if output_format == "md":
                return render_sweep_markdown(records)
        else:
            if output_format == "csv":
                return render_csv([FoldResult.from_dict(f) for f in document["folds"]])
            if output_format == "md":
                return render_markdown(BenchmarkReport.from_dict(document["report"]))
    except (KeyError, TypeError) as exc:
        raise ReportError(f"malformed {kind} results: {exc}") from exc
    raise ReportError(f"unknown report format {output_format!r}, expected md, csv or json")
