import math
import tempfile
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings as django_settings
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from controller.saps import FixedPresetPolicy, SapsController, initialize
from estimation.estimator import EstimatorState, fps_to_pixel_rate, pixel_rate_to_fps
from presets.speed_model import PresetRangeError, QpContext, default_table, expected_speed

from .sequence import NoiseFamily, NoiseModel, SequenceModel, keyframe_period
from .simulator import EncodeResult, PipelineError, PipelineState, run_encode
from .traces import TraceError, TraceSequence, load_trace, replay_cost

QP17 = QpContext(17)


@dataclass
class ListCostModel:
    """Fixed per-frame costs regardless of preset."""

    costs: list[float]
    width: int = 640
    height: int = 360

    @property
    def n_total(self) -> int:
        return len(self.costs)

    def frame_cost(self, frame_idx: int, preset: int) -> float:
        return self.costs[frame_idx]


@dataclass
class ScriptedPolicy:
    """Presets in admission order, cycling."""

    presets: list[int]

    def step(self, estimator: EstimatorState) -> int:
        return self.presets[estimator.n_in % len(self.presets)]


def fixed_run(model: SequenceModel, preset: int, buffer_size: int) -> EncodeResult:
    estimator = EstimatorState.for_sequence(
        model.n_total, float(model.n_total), model.width, model.height, buffer_size
    )
    return run_encode(model, FixedPresetPolicy(preset), estimator, buffer_size)


def closed_loop(model: SequenceModel, target_fps: float, buffer_size: int = 16) -> EncodeResult:
    controller = SapsController(initialize(target_fps, model.width, model.height, model.qp))
    estimator = EstimatorState.for_sequence(
        model.n_total, model.n_total / target_fps, model.width, model.height, buffer_size
    )
    return run_encode(model, controller, estimator, buffer_size)


class SequenceModelTests(SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.model = SequenceModel(width=640, height=360, n_total=10, qp=QP17)

    def test_frame_cost_from_pixel_rate(self) -> None:
        self.assertAlmostEqual(self.model.frame_cost(0, 8), 230.4 / 7907)
        self.assertAlmostEqual(self.model.frame_cost(0, 8), 0.02914, 5)

    def test_deterministic(self) -> None:
        self.assertEqual(self.model.frame_cost(3, 5), self.model.frame_cost(3, 5))

    def test_fastest_preset_is_cheapest(self) -> None:
        for frame in range(10):
            self.assertLess(self.model.frame_cost(frame, 12), self.model.frame_cost(frame, 1))

    def test_scale_and_qp(self) -> None:
        faster = SequenceModel(
            width=640, height=360, n_total=10, qp=QpContext(37), sequence_scale=2.0
        )
        self.assertAlmostEqual(faster.frame_cost(0, 8), 0.7 * 230.4 / 7907 / 2)
        self.assertAlmostEqual(faster.true_speed(8), 2 * 7907 / 0.7)

    def test_keyframes_at_gop_period(self) -> None:
        model = SequenceModel(
            width=640, height=360, n_total=601, qp=QP17, gop_spike=3.0, gop_period=300
        )
        base = 230.4 / 7907
        for frame in (0, 300, 600):
            self.assertTrue(model.is_keyframe(frame))
            self.assertAlmostEqual(model.frame_cost(frame, 8), 3 * base)
        for frame in (1, 299, 301):
            self.assertFalse(model.is_keyframe(frame))
            self.assertAlmostEqual(model.frame_cost(frame, 8), base)

    def test_single_keyframe_without_period(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=400, qp=QP17, gop_spike=2.0)
        self.assertTrue(model.is_keyframe(0))
        self.assertFalse(model.is_keyframe(300))

    def test_keyframe_period_from_gop_length(self) -> None:
        self.assertEqual(keyframe_period(10.0, 30.0), 300)
        self.assertEqual(keyframe_period(0.01, 30.0), 1)

    def test_noise_is_independent_of_preset(self) -> None:
        model = SequenceModel(
            width=640, height=360, n_total=50, qp=QP17, noise=NoiseModel(0.3, seed=5)
        )
        for frame in range(50):
            ratio = model.frame_cost(frame, 1) / model.frame_cost(frame, 8)
            self.assertAlmostEqual(ratio, 7907 / 62.6)

    def test_invalid_arguments_rejected(self) -> None:
        with self.assertRaises(ValueError):
            SequenceModel(width=0, height=360, n_total=10, qp=QP17)
        with self.assertRaises(ValueError):
            SequenceModel(width=640, height=360, n_total=10, qp=QP17, sequence_scale=0.0)
        with self.assertRaises(ValueError):
            SequenceModel(width=640, height=360, n_total=10, qp=QP17, gop_spike=-1.0)
        with self.assertRaises(IndexError):
            self.model.frame_cost(10, 5)
        with self.assertRaises(PresetRangeError):
            self.model.frame_cost(0, 13)


class NoiseModelTests(SimpleTestCase):  # type: ignore[misc]
    def test_off_is_unity(self) -> None:
        self.assertTrue(np.array_equal(NoiseModel(0.0).multipliers(5), np.ones(5)))

    def test_same_seed_same_draws(self) -> None:
        first = NoiseModel(0.2, seed=42).multipliers(100)
        second = NoiseModel(0.2, seed=42).multipliers(100)
        other = NoiseModel(0.2, seed=43).multipliers(100)
        self.assertTrue(np.array_equal(first, second))
        self.assertFalse(np.array_equal(first, other))

    def test_mean_one(self) -> None:
        for family in NoiseFamily:
            draws = NoiseModel(0.2, seed=1, family=family).multipliers(20000)
            self.assertTrue(np.all(draws > 0))
            self.assertAlmostEqual(float(np.mean(draws)), 1.0, delta=0.01)

    def test_negative_spread_rejected(self) -> None:
        with self.assertRaises(ValueError):
            NoiseModel(-0.1)


class PipelineStateTests(SimpleTestCase):  # type: ignore[misc]
    def test_unit_buffer_has_no_overlap(self) -> None:
        pipeline = PipelineState(1)
        observed: list[tuple[int, float]] = []
        for index, cost in enumerate([0.5, 1.0, 2.0]):
            pipeline.admit(index, 5, cost)
            observed.append(pipeline.advance_to_next_completion())
        self.assertEqual(observed, [(0, 0.5), (1, 1.5), (2, 3.5)])

    def test_two_frame_buffer_credits_half_progress(self) -> None:
        pipeline = PipelineState(2)
        pipeline.admit(0, 5, 1.0)
        pipeline.admit(1, 5, 1.0)
        self.assertEqual(pipeline.advance_to_next_completion(), (0, 1.5))
        pipeline.admit(2, 5, 1.0)
        self.assertEqual(pipeline.advance_to_next_completion(), (1, 2.5))
        self.assertEqual(pipeline.advance_to_next_completion(), (2, 3.0))

    def test_filling_buffer_credits_one_share_per_completion(self) -> None:
        pipeline = PipelineState(16)
        for index in range(16):
            pipeline.admit(index, 8, 1.0)
        self.assertEqual(pipeline.advance_to_next_completion(), (0, 1.9375))
        self.assertEqual([f.progress for f in pipeline.in_flight], [1 / 16] * 15)

    def test_full_buffer_rejects_admission(self) -> None:
        pipeline = PipelineState(2)
        pipeline.admit(0, 5, 1.0)
        pipeline.admit(1, 5, 1.0)
        self.assertTrue(pipeline.full)
        with self.assertRaises(PipelineError):
            pipeline.admit(2, 5, 1.0)

    def test_empty_pipeline_cannot_advance(self) -> None:
        with self.assertRaises(PipelineError):
            PipelineState(4).advance_to_next_completion()

    def test_invalid_buffer_rejected(self) -> None:
        with self.assertRaises(PipelineError):
            PipelineState(0)

    def test_negative_cost_rejected(self) -> None:
        with self.assertRaises(PipelineError):
            PipelineState(2).admit(0, 5, -1.0)


class RunEncodeTests(SimpleTestCase):  # type: ignore[misc]
    @given(
        buffer_size=st.integers(min_value=1, max_value=32),
        presets=st.lists(st.integers(min_value=1, max_value=12), min_size=1, max_size=20),
        n_total=st.integers(min_value=1, max_value=120),
        sigma=st.sampled_from([0.0, 0.2, 0.5]),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=100, deadline=None)
    def test_cpu_time_is_conserved(
        self, buffer_size: int, presets: list[int], n_total: int, sigma: float, seed: int
    ) -> None:
        model = SequenceModel(
            width=640,
            height=360,
            n_total=n_total,
            qp=QP17,
            noise=NoiseModel(sigma, seed),
            gop_spike=3.0,
            gop_period=30,
        )
        estimator = EstimatorState.for_sequence(n_total, 10.0, 640, 360, buffer_size)
        result = run_encode(model, ScriptedPolicy(presets), estimator, buffer_size)
        self.assertTrue(math.isclose(result.total_cpu, math.fsum(result.costs), rel_tol=1e-9))
        self.assertEqual([c.frame for c in result.completions], list(range(n_total)))
        self.assertEqual(estimator.n_out, n_total)

    def test_completion_times_include_in_flight_work(self) -> None:
        model = ListCostModel([1.0] * 6)
        estimator = EstimatorState.for_sequence(6, 6.0, 640, 360, 2)
        result = run_encode(model, FixedPresetPolicy(5), estimator, 2)
        self.assertEqual([c.t_cpu for c in result.completions], [1.5, 2.5, 3.5, 4.5, 5.5, 6.0])
        for record in result.completions[:-1]:
            self.assertGreater(record.t_cpu, record.completed_cost)
        self.assertEqual(result.total_cpu, 6.0)

    def test_unit_buffer_times_are_exact(self) -> None:
        model = ListCostModel([0.25, 0.5, 1.0])
        estimator = EstimatorState.for_sequence(3, 3.0, 640, 360, 1)
        result = run_encode(model, FixedPresetPolicy(5), estimator, 1)
        self.assertEqual([c.t_cpu for c in result.completions], [0.25, 0.75, 1.75])

    def test_estimate_converges_within_two_buffers(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=160, qp=QP17)
        result = fixed_run(model, 8, 16)
        actual = result.v_real
        self.assertAlmostEqual(actual, 7907 / 230.4)
        for record in result.completions[31:]:
            assert record.v_enc is not None
            self.assertLess(abs(record.v_enc / actual - 1), 0.15)
        final = result.completions[-1].v_enc
        assert final is not None
        self.assertLess(abs(final / actual - 1), 0.02)

    def test_first_completion_deviates_most(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=160, qp=QP17)
        result = fixed_run(model, 8, 16)
        ratios = [record.v_enc / result.v_real for record in result.completions if record.v_enc]
        self.assertEqual(len(ratios), 160)
        self.assertAlmostEqual(ratios[0], 8.5 / 1.9375)
        deviations = [abs(ratio - 1) for ratio in ratios]
        self.assertEqual(max(deviations), deviations[0])
        self.assertEqual(deviations[:14], sorted(deviations[:14], reverse=True))
        self.assertLess(max(deviations[32:]), 0.02)

    def test_first_estimate_once_buffer_has_filled(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=40, qp=QP17)
        result = fixed_run(model, 8, 16)
        self.assertIsNotNone(result.completions[0].v_enc)
        self.assertEqual(result.completions[0].n_in, 16)

    def test_settles_on_matching_preset(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=300, qp=QP17)
        target = pixel_rate_to_fps(expected_speed(default_table(), 5, QP17), 640, 360)
        result = closed_loop(model, target)
        self.assertEqual(Counter(result.presets).most_common(1)[0][0], 5)
        self.assertLess(abs(result.total_cpu / result.t_target - 1), 0.05)

    def test_closed_loop_completes_in_admission_order(self) -> None:
        model = SequenceModel(
            width=1280,
            height=720,
            n_total=240,
            qp=QpContext(27),
            noise=NoiseModel(0.5, seed=7),
            gop_spike=3.0,
            gop_period=60,
        )
        result = closed_loop(model, 2.0, buffer_size=8)
        self.assertEqual([c.frame for c in result.completions], list(range(240)))
        self.assertEqual([c.preset for c in result.completions], result.presets)

    def test_adapts_to_a_slower_sequence(self) -> None:
        model = SequenceModel(
            width=1280, height=720, n_total=300, qp=QpContext(27), sequence_scale=0.6
        )
        result = closed_loop(model, 1.0)
        self.assertLess(abs(result.v_real - 1.0), 0.1)

    def test_pins_slowest_preset_below_range(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=300, qp=QP17)
        self.assertLess(fps_to_pixel_rate(0.1, 640, 360), 62.6)
        result = closed_loop(model, 0.1)
        self.assertEqual(set(result.presets), {1})
        self.assertLess(result.total_cpu, result.t_target)

    def test_pins_fastest_preset_above_range(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=300, qp=QP17)
        result = closed_loop(model, 200.0)
        self.assertEqual(set(result.presets), {12})
        self.assertGreater(result.overrun, 0)

    def test_sequence_within_one_buffer_keeps_initial_preset(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=16, qp=QP17)
        result = closed_loop(model, 0.5)
        self.assertEqual(len(set(result.presets)), 1)

    def test_identical_inputs_give_identical_logs(self) -> None:
        def run() -> EncodeResult:
            model = SequenceModel(
                width=1280,
                height=720,
                n_total=200,
                qp=QpContext(33),
                sequence_scale=1.4,
                noise=NoiseModel(0.2, seed=99),
                gop_spike=3.0,
                gop_period=60,
            )
            return closed_loop(model, 2.0)

        first, second = run(), run()
        self.assertEqual(first.presets, second.presets)
        self.assertEqual(first.completions, second.completions)
        self.assertEqual(first.total_cpu, second.total_cpu)

    def test_mismatched_estimator_rejected(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=10, qp=QP17)
        wrong = EstimatorState.for_sequence(10, 1.0, 1280, 720)
        with self.assertRaises(PipelineError):
            run_encode(model, FixedPresetPolicy(5), wrong, 4)

    def test_used_estimator_rejected(self) -> None:
        model = SequenceModel(width=640, height=360, n_total=10, qp=QP17)
        used = EstimatorState.for_sequence(10, 1.0, 640, 360)
        used.record_admission(5)
        with self.assertRaises(PipelineError):
            run_encode(model, FixedPresetPolicy(5), used, 4)


class TraceTests(SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text: str, name: str = "trace.csv") -> Path:
        path = Path(self.tmp.name) / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_recorded_and_interpolated_costs(self) -> None:
        trace = load_trace(self.write("frame,width,height,p4,p6\n0,640,360,0.8,0.2\n"))
        self.assertEqual(replay_cost(trace, 0, 4), 0.8)
        self.assertEqual(replay_cost(trace, 0, 6), 0.2)
        self.assertAlmostEqual(replay_cost(trace, 0, 5), 0.4)

    def test_extrapolated_costs(self) -> None:
        trace = load_trace(self.write("frame,width,height,p4,p6\n0,640,360,0.8,0.2\n"))
        self.assertAlmostEqual(replay_cost(trace, 0, 1), 6.4)
        self.assertAlmostEqual(replay_cost(trace, 0, 12), 0.2 / 64)

    def test_out_of_range_requests_rejected(self) -> None:
        trace = load_trace(self.write("frame,width,height,p4,p6\n0,640,360,0.8,0.2\n"))
        with self.assertRaises(PresetRangeError):
            replay_cost(trace, 0, 13)
        with self.assertRaises(IndexError):
            replay_cost(trace, 1, 5)

    def test_empty_cells_are_missing_presets(self) -> None:
        text = "frame,width,height,p1,p2,p3\n0,640,360,4.0,,1.0\n1,640,360,,2.0,1.0\n"
        trace = load_trace(self.write(text))
        self.assertAlmostEqual(replay_cost(trace, 0, 2), 2.0)
        self.assertAlmostEqual(replay_cost(trace, 1, 1), 4.0)

    def test_non_monotone_row_reports_line(self) -> None:
        text = "frame,width,height,p4,p6\n0,640,360,0.8,0.2\n1,640,360,0.2,0.8\n"
        with self.assertRaises(TraceError) as cm:
            load_trace(self.write(text))
        self.assertEqual(cm.exception.row, 3)
        self.assertIn("row 3", str(cm.exception))

    def test_single_recorded_preset_rejected(self) -> None:
        with self.assertRaises(TraceError) as cm:
            load_trace(self.write("frame,width,height,p4\n0,640,360,0.8\n"))
        self.assertEqual(cm.exception.row, 2)

    def test_missing_column_reports_header(self) -> None:
        with self.assertRaises(TraceError) as cm:
            load_trace(self.write("frame,width,p1,p2\n0,640,1.0,0.5\n"))
        self.assertEqual(cm.exception.row, 1)

    def test_unknown_column_rejected(self) -> None:
        with self.assertRaises(TraceError):
            load_trace(self.write("frame,width,height,p1,p13\n0,640,360,1.0,0.5\n"))

    def test_gap_in_frames_rejected(self) -> None:
        text = "frame,width,height,p1,p2\n0,640,360,1.0,0.5\n2,640,360,1.0,0.5\n"
        with self.assertRaises(TraceError) as cm:
            load_trace(self.write(text))
        self.assertEqual(cm.exception.row, 3)

    def test_geometry_change_rejected(self) -> None:
        text = "frame,width,height,p1,p2\n0,640,360,1.0,0.5\n1,1280,720,1.0,0.5\n"
        with self.assertRaises(TraceError):
            load_trace(self.write(text))

    def test_non_numeric_cell_rejected(self) -> None:
        text = "frame,width,height,p1,p2\n0,640,360,fast,0.5\n"
        with self.assertRaises(TraceError) as cm:
            load_trace(self.write(text))
        self.assertEqual(cm.exception.row, 2)

    def test_empty_trace_rejected(self) -> None:
        with self.assertRaises(TraceError):
            load_trace(self.write("frame,width,height,p1,p2\n"))

    def test_missing_file_rejected(self) -> None:
        with self.assertRaises(TraceError) as cm:
            load_trace(Path(self.tmp.name) / "absent.csv")
        self.assertIn("absent.csv", str(cm.exception))

    def test_trace_drives_the_simulator(self) -> None:
        rows = "".join(f"{i},640,360,{2.0 + i % 3},{0.5 + i % 3 / 4}\n" for i in range(20))
        trace = load_trace(self.write("frame,width,height,p1,p12\n" + rows))
        sequence = TraceSequence(trace, QP17)
        self.assertEqual((sequence.width, sequence.height, sequence.n_total), (640, 360, 20))

        estimator = EstimatorState.for_sequence(20, 10.0, 640, 360, 4)
        result = run_encode(sequence, FixedPresetPolicy(12), estimator, 4)
        expected = math.fsum(0.5 + i % 3 / 4 for i in range(20))
        self.assertAlmostEqual(result.total_cpu, expected)

    def test_bundled_example_trace(self) -> None:
        trace = load_trace(Path(django_settings.BASE_DIR) / "traces" / "example_640x360.csv")
        self.assertEqual(len(trace), 60)
        self.assertEqual((trace.width, trace.height), (640, 360))
        for frame in range(len(trace)):
            costs = [replay_cost(trace, frame, p) for p in range(1, 13)]
            self.assertEqual(costs, sorted(costs, reverse=True))
