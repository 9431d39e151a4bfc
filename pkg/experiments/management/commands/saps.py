"""
`manage.py saps` - run closed-loop experiments and inspect the speed table.

    python manage.py saps grid --config configs/grid.json --out reports
    python manage.py saps validate-estimator --preset 8 --frames 160
    python manage.py saps replay --trace traces/a.csv --trace traces/b.csv
    python manage.py saps show-table --qp 27 --width 1920 --height 1080
"""

import argparse
from pathlib import Path
from typing import Any

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

from estimation.estimator import fps_to_pixel_rate, pixel_rate_to_fps
from experiments.config import ConfigError, ExperimentConfig, load_config
from experiments.grid import run_grid, validate_estimator
from experiments.reports import FORMATS, ReportWriteError, emit_report, emit_series, percent
from pipeline.traces import TraceError
from presets.serializers import TableFileError, load_table
from presets.speed_model import (
    MAX_QP,
    MIN_QP,
    PRESETS,
    QP_ANCHOR,
    PresetSpeedTable,
    QpContext,
    QpDomainError,
    default_table,
    expected_speed,
    nearest_preset,
)

HANDLED_ERRORS = (
    ConfigError,
    TraceError,
    TableFileError,
    ReportWriteError,
    QpDomainError,
)


class Command(BaseCommand):  # type: ignore[misc]
    help = "Speed-adaptive preset switching experiments"

    def add_arguments(self, parser: CommandParser) -> None:
        subparsers = parser.add_subparsers(dest="subcommand", required=True)

        grid = subparsers.add_parser("grid", help="Closed-loop grid on synthetic sequences")
        self._add_experiment_arguments(grid)
        grid.add_argument("--frames", type=int, help="Frames per sequence")
        grid.add_argument("--noise-sigma", type=float, help="Per-frame cost noise spread")
        grid.add_argument(
            "--frame-logs", action="store_true", help="Include per-frame logs in the JSON report"
        )

        validation = subparsers.add_parser(
            "validate-estimator", help="Estimated against actual speed at a constant preset"
        )
        self._add_experiment_arguments(validation)
        validation.add_argument("--preset", type=int, help="Constant preset (default 8)")
        validation.add_argument("--frames", type=int, help="Frames to encode (default 160)")
        validation.add_argument("--class", dest="class_name", help="Class to take geometry from")

        replay = subparsers.add_parser("replay", help="Closed-loop grid on recorded frame traces")
        self._add_experiment_arguments(replay)
        replay.add_argument(
            "--trace", action="append", required=True, help="Trace CSV; may be repeated"
        )

        show = subparsers.add_parser("show-table", help="Print the preset-speed table")
        show.add_argument("--table", help="JSON table override")
        show.add_argument("--qp", type=int, default=QP_ANCHOR, help="QP to predict speeds at")
        show.add_argument("--width", type=int, help="Frame width for fps columns")
        show.add_argument("--height", type=int, help="Frame height for fps columns")
        show.add_argument("--target", type=float, help="Target fps; marks the initial preset")

    def _add_experiment_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", help="JSON experiment config")
        parser.add_argument("--out", default="reports", help="Report directory")
        parser.add_argument(
            "--format",
            action="append",
            choices=FORMATS,
            dest="formats",
            help="Report format; may be repeated (default: all)",
        )
        parser.add_argument("--seed", type=int)
        parser.add_argument("--buffer-size", type=int)
        parser.add_argument("--update-weight", type=float)
        parser.add_argument(
            "--literal-alg1",
            action="store_true",
            help="Check the single-step branch before the double-step branch",
        )
        parser.add_argument("--table", help="JSON table override")
        parser.add_argument("--workers", type=int, help="Worker processes for the grid")

    def handle(self, *args: Any, **options: Any) -> None:
        subcommand = options["subcommand"]
        try:
            if subcommand == "show-table":
                self.show_table(options)
            elif subcommand == "validate-estimator":
                self.run_validation(options)
            else:
                self.run_grid(options)
        except HANDLED_ERRORS as exc:
            raise CommandError(str(exc)) from exc

    # -- subcommands --------------------------------------------------------

    def run_grid(self, options: dict[str, Any]) -> None:
        config = self.load_config(options)
        report = run_grid(config)
        paths = emit_report(report, options["out"], self.formats(options))

        self.stdout.write(f"Overall speed error: {percent(report.overall_cell_mean)}")
        failed = sum(1 for run in report.runs if run.error is not None)
        if failed:
            self.stdout.write(self.style.WARNING(f"{failed} runs failed; see the report"))
        for path in paths:
            self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))

    def run_validation(self, options: dict[str, Any]) -> None:
        config = self.load_config(options)
        series = validate_estimator(config)
        paths = emit_series(series, options["out"], self.formats(options))

        final = series.points[-1] if series.points else None
        if final is not None and final.ratio is not None:
            self.stdout.write(f"Estimate/actual at drain: {final.ratio:.4f}")
        for path in paths:
            self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))

    def show_table(self, options: dict[str, Any]) -> None:
        table = self.active_table(options["table"])
        if not MIN_QP <= options["qp"] <= MAX_QP:
            raise CommandError(f"QP must lie in [{MIN_QP}, {MAX_QP}]")
        qp = QpContext(options["qp"])
        width, height = options["width"], options["height"]
        if (width is None) != (height is None):
            raise CommandError("--width and --height go together")
        if width is not None and (width <= 0 or height <= 0):
            raise CommandError("Frame dimensions must be positive")

        marked = None
        if options["target"] is not None:
            if width is None:
                raise CommandError("--target needs --width and --height")
            if options["target"] <= 0:
                raise CommandError("Target speed must be positive")
            rate = fps_to_pixel_rate(options["target"], width, height)
            marked = nearest_preset(table, rate, qp)

        header = f"{'preset':>6} {'table kpps':>12} {f'kpps @ QP {qp.qp}':>14}"
        if width is not None:
            header += f" {f'fps @ {width}x{height}':>18}"
        self.stdout.write(header)
        for preset in PRESETS:
            predicted = expected_speed(table, preset, qp)
            line = f"{preset:>6} {table.entry(preset):>12.1f} {predicted:>14.1f}"
            if width is not None:
                line += f" {pixel_rate_to_fps(predicted, width, height):>18.4f}"
            if preset == marked:
                line += "  <- initial preset"
            self.stdout.write(line)

    # -- helpers ------------------------------------------------------------

    def load_config(self, options: dict[str, Any]) -> ExperimentConfig:
        overrides: dict[str, Any] = {}
        controller: dict[str, Any] = {}
        for option, key in (
            ("seed", "seed"),
            ("buffer_size", "buffer_size"),
            ("table", "table_path"),
            ("workers", "workers"),
            ("frames", "frames"),
            ("noise_sigma", "noise_sigma"),
            ("preset", "validation_preset"),
            ("class_name", "validation_class"),
        ):
            if options.get(option) is not None:
                overrides[key] = options[option]
        if options.get("subcommand") == "validate-estimator" and options.get("frames"):
            overrides.pop("frames")
            overrides["validation_frames"] = options["frames"]
        if options.get("frame_logs"):
            overrides["frame_logs"] = True
        if options.get("trace"):
            overrides["mode"] = "trace"
            overrides["traces"] = options["trace"]
        if options.get("update_weight") is not None:
            controller["update_weight"] = options["update_weight"]
        if options.get("literal_alg1"):
            controller["literal_branch_order"] = True
        if controller:
            overrides["controller"] = controller

        return load_config(options.get("config"), overrides)

    def formats(self, options: dict[str, Any]) -> list[str]:
        chosen = options.get("formats") or settings.SAPS["REPORT_FORMATS"]
        return list(dict.fromkeys(chosen))

    def active_table(self, path: str | None) -> PresetSpeedTable:
        if path is None:
            path = settings.SAPS["TABLE_PATH"]
        return load_table(Path(path)) if path else default_table()
