import csv
import io
import json
import tempfile
from pathlib import Path
from typing import Any
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from controller.saps import AverageMode, ControllerConfig
from pipeline.simulator import PipelineError
from presets.speed_model import QpContext, default_table

from .config import ClassSpec, ConfigError, Mode, load_config, read_config_file
from .grid import (
    cell_reachable,
    plan_runs,
    reachability,
    run_qps,
    run_grid,
    speed_error,
    validate_estimator,
)
from .reports import CELL_COLUMNS, emit_report, emit_series, render_csv

A2 = ClassSpec("A2", 1920, 1080)
A3 = ClassSpec("A3", 1280, 720)
A4 = ClassSpec("A4", 640, 360)
GRID_QPS = (23, 27, 33, 37)

SMALL_GRID: dict[str, Any] = {
    "classes": [{"name": "A4", "width": 640, "height": 360, "sequences": 2}],
    "targets": [4.0, 0.125],
    "qps": [27],
    "frames": 60,
    "buffer_size": 8,
}

NOISE_FREE: dict[str, Any] = {
    "classes": [{"name": "A4", "width": 640, "height": 360, "sequences": 1}],
    "noise_sigma": 0.0,
    "gop_spike": None,
    "scale_range": [1.0, 1.0],
}


class TempDirMixin:
    def make_tmp(self) -> Path:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)  # type: ignore[attr-defined]
        return Path(tmp.name)

    def write_json(self, directory: Path, name: str, data: Any) -> Path:
        path = directory / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path


class SpeedErrorTests(SimpleTestCase):  # type: ignore[misc]
    def test_exact_runs(self) -> None:
        self.assertEqual(speed_error([(1.0, 1.0), (4.0, 4.0)]), 0.0)

    def test_symmetric_deviation(self) -> None:
        self.assertAlmostEqual(speed_error([(1.1, 1.0), (0.9, 1.0)]), 0.10)

    def test_single_run(self) -> None:
        self.assertEqual(speed_error([(2.0, 1.0)]), 1.0)

    def test_relative_to_each_target(self) -> None:
        self.assertAlmostEqual(speed_error([(8.8, 8.0), (0.25, 0.25)]), 0.05)

    def test_invalid_input_rejected(self) -> None:
        with self.assertRaises(ValueError):
            speed_error([])
        with self.assertRaises(ValueError):
            speed_error([(1.0, 0.0)])


class ReachabilityTests(SimpleTestCase):  # type: ignore[misc]
    def test_too_fast_for_fastest_preset(self) -> None:
        self.assertFalse(reachability(A2, 16.0, default_table(), QpContext(17)))

    def test_too_slow_for_slowest_preset(self) -> None:
        self.assertFalse(reachability(A4, 0.125, default_table(), QpContext(17)))

    def test_inside_range(self) -> None:
        self.assertTrue(reachability(A3, 1.0, default_table(), QpContext(27)))

    def test_bounds_are_inclusive(self) -> None:
        spec = ClassSpec("unit", 1000, 1)
        self.assertTrue(reachability(spec, 62.6, default_table(), QpContext(17)))
        self.assertTrue(reachability(spec, 24463.0, default_table(), QpContext(17)))

    def test_cell_needs_every_qp(self) -> None:
        # 16 fps at 1920x1080 is 33177.6 kpps: within reach at QP 37 only
        self.assertTrue(reachability(A2, 16.0, default_table(), QpContext(37)))
        self.assertFalse(cell_reachable(A2, 16.0, default_table(), GRID_QPS))
        self.assertTrue(cell_reachable(A2, 8.0, default_table(), GRID_QPS))

    def test_default_grid_exclusions(self) -> None:
        targets = (16.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.125)
        unreachable = {
            (spec.name, target)
            for spec in (A2, A3, A4)
            for target in targets
            if not cell_reachable(spec, target, default_table(), GRID_QPS)
        }
        self.assertEqual(unreachable, {("A2", 16.0), ("A4", 0.25), ("A4", 0.125)})


class ConfigTests(TempDirMixin, SimpleTestCase):  # type: ignore[misc]
    def test_defaults_from_settings(self) -> None:
        config = load_config()
        self.assertEqual([c.name for c in config.classes], ["A2", "A3", "A4"])
        self.assertEqual(config.targets, tuple(settings.SAPS["TARGETS"]))
        self.assertEqual(config.qps, GRID_QPS)
        self.assertEqual(config.frames, 300)
        self.assertEqual(config.buffer_size, 16)
        self.assertEqual(config.controller, ControllerConfig())
        self.assertIs(config.controller.average_mode, AverageMode.CONTRIBUTING)
        self.assertEqual(config.table, default_table())
        self.assertEqual(config.mode, Mode.SYNTHETIC)
        self.assertEqual(config.classes[0].sequences, 8)

    def test_file_then_overrides(self) -> None:
        path = self.write_json(
            self.make_tmp(),
            "config.json",
            {"seed": 7, "buffer_size": 4, "controller": {"update_weight": 0.1}},
        )
        config = load_config(path, {"buffer_size": 12})
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.buffer_size, 12)
        self.assertEqual(config.controller.update_weight, 0.1)
        self.assertEqual(config.controller.down_threshold, 0.9)

    def test_invalid_values_rejected(self) -> None:
        for overrides in (
            {"buffer_size": 0},
            {"targets": []},
            {"targets": [-1.0]},
            {"qps": [0]},
            {"controller": {"down_threshold": 1.5}},
            {"controller": {"update_weight": 2.0}},
            {"mode": "trace"},
            {"classes": []},
            {"scale_range": [2.0, 0.5]},
            {"validation_class": "Z"},
            {
                "classes": [
                    {"name": "X", "width": 64, "height": 64},
                    {"name": "X", "width": 32, "height": 32},
                ]
            },
        ):
            with self.subTest(overrides=overrides), self.assertRaises(ConfigError):
                load_config(overrides=overrides)

    def test_missing_table_file_rejected(self) -> None:
        with self.assertRaises(ConfigError) as cm:
            load_config(overrides={"table_path": str(self.make_tmp() / "absent.json")})
        self.assertIn("absent.json", str(cm.exception))

    def test_table_file_is_loaded(self) -> None:
        table = {str(p): 2 * r for p, r in enumerate(default_table().rates, start=1)}
        path = self.write_json(self.make_tmp(), "table.json", table)
        config = load_config(overrides={"table_path": str(path)})
        self.assertAlmostEqual(config.table.scale_relative_to(default_table()), 2.0)

    def test_unreadable_files_rejected(self) -> None:
        tmp = self.make_tmp()
        broken = tmp / "broken.json"
        broken.write_text("{", encoding="utf-8")
        with self.assertRaises(ConfigError):
            read_config_file(broken)
        with self.assertRaises(ConfigError):
            read_config_file(self.write_json(tmp, "list.json", [1, 2]))
        with self.assertRaises(ConfigError):
            load_config(tmp / "absent.json")

    def test_echo_reloads_to_same_config(self) -> None:
        config = load_config(overrides={"seed": 11, "controller": {"literal_branch_order": True}})
        echo = config.echo()
        self.assertEqual(json.loads(json.dumps(echo)), echo)
        self.assertEqual(load_config(overrides=echo), config)
        self.assertEqual(echo["table"]["12"], 24463.0)


class PlanTests(SimpleTestCase):  # type: ignore[misc]
    def test_full_grid_size(self) -> None:
        runs = plan_runs(load_config())
        self.assertEqual(len(runs), 3 * 8 * 4 * 8)

    def test_sequence_shared_across_qps_and_targets(self) -> None:
        runs = plan_runs(load_config())
        by_sequence: dict[tuple[str, int], set[tuple[int, float]]] = {}
        for run in runs:
            by_sequence.setdefault((run.class_name, run.sequence), set()).add(
                (run.seed, run.sequence_scale)
            )
        self.assertEqual(len(by_sequence), 24)
        for draws in by_sequence.values():
            self.assertEqual(len(draws), 1)
        scales = [next(iter(d))[1] for d in by_sequence.values()]
        self.assertEqual(len(set(scales)), 24)
        for scale in scales:
            self.assertGreaterEqual(scale, 0.5)
            self.assertLessEqual(scale, 2.0)

    def test_replay_runs_at_first_qp(self) -> None:
        trace = str(Path(settings.BASE_DIR) / "traces" / "example_640x360.csv")
        config = load_config(
            overrides={"mode": "trace", "traces": [trace], "qps": [27, 37], "targets": [2.0, 1.0]}
        )
        self.assertEqual(run_qps(config), (27,))
        runs = plan_runs(config)
        self.assertEqual([(r.qp, r.target_fps) for r in runs], [(27, 2.0), (27, 1.0)])
        self.assertEqual({r.trace_path for r in runs}, {trace})
        self.assertEqual(run_qps(load_config()), GRID_QPS)

    def test_seed_changes_sequences(self) -> None:
        first = plan_runs(load_config(overrides={"seed": 1}))
        second = plan_runs(load_config(overrides={"seed": 2}))
        self.assertNotEqual(
            [r.sequence_scale for r in first], [r.sequence_scale for r in second]
        )


class GridTests(TempDirMixin, SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.config = load_config(overrides=SMALL_GRID)

    def test_cells_and_averages(self) -> None:
        report = run_grid(self.config)
        self.assertEqual(len(report.runs), 4)
        self.assertEqual(len(report.cells), 2)

        reachable = report.cell("A4", 4.0)
        unreachable = report.cell("A4", 0.125)
        self.assertTrue(reachable.reachable)
        self.assertFalse(unreachable.reachable)
        self.assertEqual((reachable.runs, reachable.failed_runs), (2, 0))
        assert reachable.epsilon_v is not None
        self.assertEqual(report.overall_cell_mean, reachable.epsilon_v)
        assert report.overall_run_mean is not None
        self.assertAlmostEqual(report.overall_run_mean, reachable.epsilon_v)
        self.assertEqual(report.classes[0].average, reachable.epsilon_v)
        self.assertEqual(report.classes[0].reachable_cells, 1)

    def test_runs_record_the_closed_loop(self) -> None:
        report = run_grid(self.config)
        for run in report.runs:
            self.assertIsNone(run.error)
            self.assertIsNone(run.frame_log)
            assert run.v_real is not None and run.total_cpu is not None
            self.assertAlmostEqual(run.v_real, 60 / run.total_cpu)
            self.assertAlmostEqual(run.t_target, 60 / run.target_fps)
        slow = [r for r in report.runs if r.target_fps == 0.125]
        self.assertTrue(all(r.initial_preset == 1 and r.switches == 0 for r in slow))

    def test_frame_logs_on_request(self) -> None:
        config = load_config(overrides={**SMALL_GRID, "frame_logs": True})
        report = run_grid(config)
        log = report.runs[0].frame_log
        assert log is not None
        self.assertEqual(len(log), 60)
        self.assertEqual([row["frame"] for row in log], list(range(60)))

    def test_failed_runs_are_recorded(self) -> None:
        with mock.patch("experiments.grid.run_encode", side_effect=PipelineError("boom")):
            report = run_grid(self.config)
        self.assertTrue(all(r.error == "PipelineError: boom" for r in report.runs))
        cell = report.cell("A4", 4.0)
        self.assertEqual((cell.runs, cell.failed_runs), (0, 2))
        self.assertIsNone(cell.epsilon_v)
        self.assertIsNone(report.overall_cell_mean)

    def test_report_files_agree(self) -> None:
        report = run_grid(self.config)
        out = self.make_tmp()
        paths = emit_report(report, out)
        self.assertEqual(sorted(p.name for p in paths), ["report.csv", "report.json", "report.txt"])
        self.assertEqual(sorted(p.name for p in out.iterdir()), sorted(p.name for p in paths))

        data = json.loads((out / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(data["schema_version"], 1)
        self.assertEqual(data["kind"], "synthetic")
        self.assertEqual(data["config"]["frames"], 60)
        self.assertEqual(len(data["runs"]), 4)
        self.assertNotIn("frame_log", data["runs"][0])

        with (out / "report.csv").open(encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(list(rows[0]), list(CELL_COLUMNS))
        for row, cell in zip(rows, data["cells"]):
            self.assertEqual(row["class_name"], cell["class_name"])
            self.assertEqual(float(row["target_fps"]), cell["target_fps"])
            self.assertEqual(float(row["epsilon_v"]), cell["epsilon_v"])

        text = (out / "report.txt").read_text(encoding="utf-8")
        self.assertIn("A4 (640x360)", text)
        self.assertIn("*", text)

    def test_selected_formats_only(self) -> None:
        out = self.make_tmp()
        paths = emit_report(run_grid(self.config), out, ["json"])
        self.assertEqual([p.name for p in paths], ["report.json"])
        self.assertEqual([p.name for p in out.iterdir()], ["report.json"])

    def test_csv_renders_missing_values_empty(self) -> None:
        text = render_csv([{"a": 1, "b": None}], ("a", "b"))
        self.assertEqual(text, "a,b\n1,\n")


class EstimatorValidationTests(TempDirMixin, SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.config = load_config(overrides=NOISE_FREE)

    def test_series_converges(self) -> None:
        series = validate_estimator(self.config)
        self.assertEqual(series.preset, 8)
        self.assertEqual(series.class_name, "A4")
        self.assertEqual(len(series.points), 160)
        self.assertEqual([p.completed for p in series.points], list(range(1, 161)))
        for point in series.points[31:]:
            assert point.ratio is not None
            self.assertLess(abs(point.ratio - 1), 0.15)
        final = series.points[-1].ratio
        assert final is not None
        self.assertLess(abs(final - 1), 0.02)

    def test_first_point_deviates_most(self) -> None:
        series = validate_estimator(self.config)
        deviations = [abs(p.ratio - 1) for p in series.points if p.ratio is not None]
        self.assertEqual(max(deviations), deviations[0])
        self.assertGreater(deviations[0], 1.0)
        self.assertLess(max(deviations[32:]), 0.02)

    def test_unit_buffer_is_exact(self) -> None:
        series = validate_estimator(load_config(overrides={**NOISE_FREE, "buffer_size": 1}))
        self.assertEqual(len(series.points), 160)
        for point in series.points:
            assert point.ratio is not None
            self.assertAlmostEqual(point.ratio, 1.0)
            self.assertTrue(point.buffer_boundary)

    def test_buffer_boundaries_marked(self) -> None:
        series = validate_estimator(self.config)
        boundaries = [p.completed for p in series.points if p.buffer_boundary]
        self.assertEqual(boundaries, list(range(16, 161, 16)))

    def test_series_files(self) -> None:
        series = validate_estimator(load_config(overrides={**NOISE_FREE, "validation_frames": 40}))
        out = self.make_tmp()
        paths = emit_series(series, out, ["json", "csv"])
        self.assertEqual([p.name for p in paths], ["estimator.json", "estimator.csv"])
        data = json.loads(paths[0].read_text(encoding="utf-8"))
        self.assertEqual(data["kind"], "estimator-validation")
        self.assertEqual(len(data["points"]), 40)
        lines = paths[1].read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), 41)


class SapsCommandTests(TempDirMixin, SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.tmp = self.make_tmp()
        self.out = self.tmp / "reports"
        self.config_path = self.write_json(self.tmp, "grid.json", SMALL_GRID)

    def call(self, *args: str) -> str:
        stdout = io.StringIO()
        call_command("saps", *args, stdout=stdout)
        return stdout.getvalue()

    def test_show_table(self) -> None:
        output = self.call("show-table", "--qp", "27", "--width", "640", "--height", "360")
        lines = output.strip().splitlines()
        self.assertEqual(len(lines), 13)
        self.assertIn("fps @ 640x360", lines[0])
        self.assertEqual(lines[1].split()[:2], ["1", "62.6"])

    def test_show_table_marks_initial_preset(self) -> None:
        output = self.call(
            "show-table", "--qp", "27", "--width", "640", "--height", "360", "--target", "4"
        )
        marked = [line for line in output.splitlines() if "initial preset" in line]
        self.assertEqual(len(marked), 1)
        self.assertEqual(marked[0].split()[0], "5")

    def test_show_table_argument_errors(self) -> None:
        with self.assertRaises(CommandError):
            self.call("show-table", "--width", "640")
        with self.assertRaises(CommandError):
            self.call("show-table", "--qp", "70")
        with self.assertRaises(CommandError):
            self.call("show-table", "--table", str(self.tmp / "absent.json"))

    def test_grid(self) -> None:
        output = self.call(
            "grid",
            "--config",
            str(self.config_path),
            "--out",
            str(self.out),
            "--format",
            "json",
            "--format",
            "text",
            "--seed",
            "3",
            "--literal-alg1",
        )
        self.assertIn("Overall speed error", output)
        self.assertEqual(sorted(p.name for p in self.out.iterdir()), ["report.json", "report.txt"])
        data = json.loads((self.out / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(data["config"]["seed"], 3)
        self.assertTrue(data["config"]["controller"]["literal_branch_order"])

    def test_validate_estimator(self) -> None:
        config_path = self.write_json(self.tmp, "noise_free.json", NOISE_FREE)
        output = self.call(
            "validate-estimator",
            "--config",
            str(config_path),
            "--out",
            str(self.out),
            "--preset",
            "6",
            "--frames",
            "48",
            "--format",
            "csv",
        )
        self.assertIn("Estimate/actual at drain", output)
        lines = (self.out / "estimator.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), 49)

    def test_replay(self) -> None:
        trace = Path(settings.BASE_DIR) / "traces" / "example_640x360.csv"
        self.call(
            "replay",
            "--trace",
            str(trace),
            "--config",
            str(self.config_path),
            "--out",
            str(self.out),
            "--format",
            "json",
        )
        data = json.loads((self.out / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(data["kind"], "trace")
        self.assertEqual({c["class_name"] for c in data["cells"]}, {"640x360"})
        self.assertEqual(len(data["runs"]), 2)

    def test_configuration_errors_become_command_errors(self) -> None:
        with self.assertRaises(CommandError):
            self.call("grid", "--config", str(self.config_path), "--buffer-size", "0")
        with self.assertRaises(CommandError):
            self.call("grid", "--config", str(self.tmp / "absent.json"))
        with self.assertRaises(CommandError):
            self.call("replay", "--trace", str(self.tmp / "absent.csv"))
