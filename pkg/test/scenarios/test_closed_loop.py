"""
Scenario tests for the closed-loop experiments.

These run the full default grid and the bundled configs end to end, so they
take a few minutes. They check the accuracy, saturation and determinism
properties a complete grid must have.
"""

import tempfile
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

from estimation.estimator import pixel_rate_to_fps
from experiments.config import load_config
from experiments.grid import run_grid
from experiments.reports import emit_report
from presets.speed_model import MAX_PRESET, MIN_PRESET, QpContext, expected_speed

CONFIGS = Path(settings.BASE_DIR) / "configs"


class ClosedLoopScenarioTest(SimpleTestCase):  # type: ignore[misc]
    """
    Scenario: an operator inspects the speed table, checks that impossible
    targets pin the controller at a boundary preset, runs a noise-free
    sanity grid and finally the full grid twice.
    """

    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = Path(tmp.name)

    def test_complete_experiment_workflow(self) -> None:
        """Execute the whole experiment workflow from table to report."""

        # ============================================================================
        # PHASE 1: Controllable range
        # ============================================================================
        print("\n=== Phase 1: Controllable range ===")

        config = load_config(CONFIGS / "grid.json")
        for spec in config.classes:
            for qp in config.qps:
                ctx = QpContext(qp)
                slowest = pixel_rate_to_fps(
                    expected_speed(config.table, MIN_PRESET, ctx), spec.width, spec.height
                )
                fastest = pixel_rate_to_fps(
                    expected_speed(config.table, MAX_PRESET, ctx), spec.width, spec.height
                )
                self.assertGreaterEqual(fastest / slowest, 100.0)
            print(f"✓ {spec.label}: presets span more than two orders of magnitude")

        # ============================================================================
        # PHASE 2: Saturation at unreachable targets
        # ============================================================================
        print("\n=== Phase 2: Saturation at unreachable targets ===")

        saturation = load_config(
            overrides={
                "classes": [
                    {"name": "A2", "width": 1920, "height": 1080, "sequences": 1},
                    {"name": "A4", "width": 640, "height": 360, "sequences": 1},
                ],
                "targets": [24.0, 0.125],
                "qps": [23],
                "frames": 120,
                "scale_range": [1.0, 1.0],
                "frame_logs": True,
            }
        )
        report = run_grid(saturation)
        pinned = {("A2", 24.0): MAX_PRESET, ("A4", 0.125): MIN_PRESET}
        for run in report.runs:
            boundary = pinned.get((run.class_name, run.target_fps))
            if boundary is None:
                self.assertTrue(run.reachable)
                continue
            self.assertFalse(run.reachable)
            assert run.frame_log is not None
            self.assertEqual({row["preset"] for row in run.frame_log}, {boundary})
            self.assertEqual(run.switches, 0)
            print(f"✓ {run.class_name} at {run.target_fps:g} fps pinned at preset {boundary}")

        # ============================================================================
        # PHASE 3: Noise-free grid
        # ============================================================================
        print("\n=== Phase 3: Noise-free grid ===")

        noise_free = run_grid(load_config(CONFIGS / "noise_free.json"))
        self.assertFalse(noise_free.cell("A4", 0.25).reachable)
        assert noise_free.overall_cell_mean is not None
        self.assertEqual(len(noise_free.runs), 3 * 8 * 4)
        self.assertLessEqual(noise_free.overall_cell_mean, 0.02)
        print(f"✓ Noise-free speed error {100 * noise_free.overall_cell_mean:.2f} %")

        # ============================================================================
        # PHASE 4: Full grid accuracy
        # ============================================================================
        print("\n=== Phase 4: Full grid accuracy ===")

        first = run_grid(config)
        self.assertEqual(len(first.runs), 3 * 8 * 4 * 8)
        self.assertFalse(any(run.error for run in first.runs))
        excluded = {(c.class_name, c.target_fps) for c in first.cells if not c.reachable}
        self.assertEqual(excluded, {("A2", 16.0), ("A4", 0.25), ("A4", 0.125)})
        assert first.overall_cell_mean is not None
        self.assertLessEqual(first.overall_cell_mean, 0.10)
        print(f"✓ Overall speed error {100 * first.overall_cell_mean:.2f} % over reachable cells")

        # ============================================================================
        # PHASE 5: Determinism
        # ============================================================================
        print("\n=== Phase 5: Determinism ===")

        [first_json] = emit_report(first, self.out / "first", ["json"])
        second = run_grid(config)
        [second_json] = emit_report(second, self.out / "second", ["json"])
        self.assertEqual(first_json.read_bytes(), second_json.read_bytes())
        print("✓ Repeated grid gives a byte-identical JSON report")

        parallel = run_grid(load_config(CONFIGS / "grid.json", {"workers": 2}))
        [parallel_json] = emit_report(parallel, self.out / "parallel", ["json"])
        self.assertEqual(parallel_json.read_bytes(), first_json.read_bytes())
        print("✓ Worker processes do not change the results")
