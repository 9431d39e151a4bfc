"""
Report output: JSON (full structure), CSV (one row per cell or point) and
an aligned text table. Every file is written to a temporary sibling first
and renamed into place.
"""

import csv
import io
import json
import logging
import os
import tempfile
from collections.abc import Iterable
from pathlib import Path
from typing import Any

from .grid import EstimatorSeries, Report
from .serializers import EstimatorSeriesSerializer, ReportSerializer

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv", "text")
EXTENSIONS = {"json": "json", "csv": "csv", "text": "txt"}
UNREACHABLE = "*"

CELL_COLUMNS = (
    "class_name",
    "width",
    "height",
    "target_fps",
    "target_kpps",
    "reachable",
    "epsilon_v",
    "runs",
    "failed_runs",
)
POINT_COLUMNS = (
    "completed",
    "estimated_fps",
    "actual_fps",
    "running_fps",
    "ratio",
    "buffer_boundary",
)


class ReportWriteError(OSError):
    pass


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(
            "w",
            encoding="utf-8",
            newline="",
            dir=path.parent,
            prefix=f".{path.name}.",
            delete=False,
        ) as handle:
            handle.write(text)
            temp_name = handle.name
        os.replace(temp_name, path)
    except OSError as exc:
        raise ReportWriteError(f"{path}: {exc}") from exc


def render_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def render_csv(rows: Iterable[dict[str, Any]], columns: tuple[str, ...]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: "" if row[c] is None else row[c] for c in columns})
    return buffer.getvalue()


def percent(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.1f} %"


def render_report_text(report: Report) -> str:
    targets = list(dict.fromkeys(c.target_fps for c in report.cells))
    labels = {s.name: f"{s.name} ({s.width}x{s.height})" for s in report.classes}
    first_width = max([len("Class"), len("All"), *map(len, labels.values())])
    column_width = 9

    header = ["Class".ljust(first_width)]
    header += [f"{t:g}".rjust(column_width) for t in targets]
    header.append("Average".rjust(column_width))
    lines = [" ".join(header), "-" * len(" ".join(header))]

    for summary in report.classes:
        row = [labels[summary.name].ljust(first_width)]
        for target in targets:
            cell = report.cell(summary.name, target)
            text = percent(cell.epsilon_v) if cell.reachable else UNREACHABLE
            row.append(text.rjust(column_width))
        row.append(percent(summary.average).rjust(column_width))
        lines.append(" ".join(row))

    lines.append("-" * len(lines[0]))
    blank = [" " * column_width for _ in targets]
    overall = percent(report.overall_cell_mean).rjust(column_width)
    lines.append(" ".join(["All".ljust(first_width), *blank, overall]))
    lines.append("")
    lines.append(f"Target speeds in fps. {UNREACHABLE} = not reachable, excluded from averages.")
    per_run = percent(report.overall_run_mean)
    lines.append(f"Per-run weighted average over reachable cells: {per_run}")
    failed = sum(c.failed_runs for c in report.cells)
    if failed:
        lines.append(f"Failed runs: {failed}")
    return "\n".join(lines) + "\n"


def render_series_text(series: EstimatorSeries) -> str:
    lines = [
        f"Estimator validation: class {series.class_name}, preset {series.preset}, "
        f"buffer {series.buffer_size}",
        f"{'frames':>7} {'estimate':>10} {'actual':>10} {'ratio':>8}",
    ]
    for point in series.points:
        estimate = "-" if point.estimated_fps is None else f"{point.estimated_fps:10.4f}"
        ratio = "-" if point.ratio is None else f"{point.ratio:8.4f}"
        marker = "  |" if point.buffer_boundary else ""
        lines.append(
            f"{point.completed:>7} {estimate:>10} {point.actual_fps:10.4f} {ratio:>8}{marker}"
        )
    lines.append("")
    lines.append("| = buffer boundary")
    return "\n".join(lines) + "\n"


def emit_report(
    report: Report, out_dir: str | Path, formats: Iterable[str] = FORMATS, stem: str = "report"
) -> list[Path]:
    out_dir = Path(out_dir)
    data = ReportSerializer(report).data
    written: list[Path] = []
    for fmt in formats:
        path = out_dir / f"{stem}.{EXTENSIONS[fmt]}"
        if fmt == "json":
            atomic_write(path, render_json(data))
        elif fmt == "csv":
            atomic_write(path, render_csv(data["cells"], CELL_COLUMNS))
        elif fmt == "text":
            atomic_write(path, render_report_text(report))
        else:
            raise ValueError(f"Unknown report format {fmt!r}")
        logger.info("Wrote %s", path)
        written.append(path)
    return written


def emit_series(
    series: EstimatorSeries,
    out_dir: str | Path,
    formats: Iterable[str] = FORMATS,
    stem: str = "estimator",
) -> list[Path]:
    out_dir = Path(out_dir)
    data = EstimatorSeriesSerializer(series).data
    written: list[Path] = []
    for fmt in formats:
        path = out_dir / f"{stem}.{EXTENSIONS[fmt]}"
        if fmt == "json":
            atomic_write(path, render_json(data))
        elif fmt == "csv":
            atomic_write(path, render_csv(data["points"], POINT_COLUMNS))
        elif fmt == "text":
            atomic_write(path, render_series_text(series))
        else:
            raise ValueError(f"Unknown report format {fmt!r}")
        logger.info("Wrote %s", path)
        written.append(path)
    return written
