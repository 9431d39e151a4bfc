import math

from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import strategies as st

from .estimator import (
    BudgetStatus,
    EstimatorContractError,
    EstimatorState,
    fps_to_pixel_rate,
    pixel_rate_to_fps,
)


def state(**fields: float) -> EstimatorState:
    values: dict[str, float] = {"n_total": 300, "t_target": 200.0, "width": 640, "height": 360}
    values.update(fields)
    return EstimatorState(**values)  # type: ignore[arg-type]


class ContributingFramesTests(SimpleTestCase):  # type: ignore[misc]
    def test_empty_pipeline(self) -> None:
        self.assertEqual(state().contributing_frames(), 0)

    def test_half_of_admitted_and_completed(self) -> None:
        self.assertEqual(state(n_in=8, n_out=0).contributing_frames(), 4)

    def test_drained_pipeline(self) -> None:
        self.assertEqual(state(n_in=300, n_out=300).contributing_frames(), 300)

    @given(n_in=st.integers(min_value=0, max_value=300), data=st.data())
    def test_within_completed_and_admitted(self, n_in: int, data: st.DataObject) -> None:
        n_out = data.draw(st.integers(min_value=0, max_value=n_in))
        n_enc = state(n_in=n_in, n_out=n_out).contributing_frames()
        self.assertLessEqual(n_out, n_enc)
        self.assertLessEqual(n_enc, n_in)


class CurrentSpeedTests(SimpleTestCase):  # type: ignore[misc]
    def test_pipelined_estimate(self) -> None:
        self.assertEqual(state(n_in=8, n_out=4, t_cpu=3.0).current_speed(), 2.0)

    def test_single_frame(self) -> None:
        self.assertEqual(state(n_in=1, n_out=1, t_cpu=0.5).current_speed(), 2.0)

    def test_unavailable_before_first_completion(self) -> None:
        self.assertIsNone(state().current_speed())
        self.assertIsNone(state(n_in=4, n_out=0, t_cpu=1.0).current_speed())
        self.assertIsNone(state(n_in=4, n_out=1, t_cpu=0.0).current_speed())
        self.assertIsNone(state().current_pixel_rate())

    def test_drained_pipeline_is_plain_average(self) -> None:
        self.assertEqual(state(n_in=120, n_out=120, t_cpu=40.0).current_speed(), 3.0)

    def test_pixel_rate(self) -> None:
        self.assertAlmostEqual(state(n_in=1, n_out=1, t_cpu=1.0).current_pixel_rate(), 230.4)


class BudgetSpeedTests(SimpleTestCase):  # type: ignore[misc]
    def test_available_budget(self) -> None:
        budget = state(n_in=100, n_out=100, t_cpu=50.0).budget_speed()
        self.assertEqual(budget.status, BudgetStatus.AVAILABLE)
        self.assertTrue(budget.available)
        assert budget.fps is not None
        self.assertAlmostEqual(budget.fps, 200 / 150)

    def test_exhausted_budget(self) -> None:
        budget = state(n_in=100, n_out=100, t_cpu=200.0).budget_speed()
        self.assertEqual(budget.status, BudgetStatus.EXHAUSTED)
        self.assertIsNone(budget.fps)
        self.assertFalse(budget.available)

    def test_overrun_is_exhausted(self) -> None:
        budget = state(n_in=100, n_out=90, t_cpu=250.0).budget_speed()
        self.assertEqual(budget.status, BudgetStatus.EXHAUSTED)

    def test_done(self) -> None:
        budget = state(n_in=300, n_out=300, t_cpu=150.0).budget_speed()
        self.assertEqual(budget.status, BudgetStatus.DONE)
        self.assertIsNone(state(n_in=300, n_out=300, t_cpu=150.0).budget_pixel_rate())

    def test_not_done_until_every_frame_completes(self) -> None:
        budget = state(n_in=300, n_out=299, t_cpu=150.0).budget_speed()
        self.assertEqual(budget.status, BudgetStatus.AVAILABLE)
        assert budget.fps is not None
        self.assertAlmostEqual(budget.fps, 0.5 / 50)

    def test_pixel_rate(self) -> None:
        rate = state(n_in=200, n_out=100, t_cpu=60.0, t_target=100.0).budget_pixel_rate()
        self.assertAlmostEqual(rate, 150 / 40 * 230.4)

    def test_rises_as_time_is_spent(self) -> None:
        speeds = [state(n_in=50, n_out=40, t_cpu=t).budget_speed().fps for t in (0, 10, 50, 150)]
        for earlier, later in zip(speeds, speeds[1:]):
            self.assertGreater(later, earlier)

    @given(
        n_total=st.integers(min_value=1, max_value=200),
        cost=st.floats(min_value=0.001, max_value=10.0),
    )
    def test_spending_at_budget_speed_finishes_on_target(self, n_total: int, cost: float) -> None:
        estimator = EstimatorState.for_sequence(n_total, n_total * cost, 640, 360, 1)
        for frame in range(n_total):
            if frame:
                budget = estimator.budget_speed().fps
                current = estimator.current_speed()
                assert budget is not None and current is not None
                self.assertTrue(math.isclose(current, budget, rel_tol=1e-9))
            estimator.record_admission(5)
            estimator.record_completion((frame + 1) * cost)
        self.assertTrue(math.isclose(estimator.t_cpu, estimator.t_target, rel_tol=1e-12))
        self.assertEqual(estimator.budget_speed().status, BudgetStatus.DONE)

    @given(
        t_first=st.floats(min_value=0.0, max_value=199.0),
        t_second=st.floats(min_value=0.0, max_value=199.0),
    )
    def test_budget_grows_with_spent_time(self, t_first: float, t_second: float) -> None:
        low, high = sorted((t_first, t_second))
        early = state(n_in=60, n_out=44, t_cpu=low).budget_speed().fps
        late = state(n_in=60, n_out=44, t_cpu=high).budget_speed().fps
        self.assertLessEqual(early, late)


class UnitConversionTests(SimpleTestCase):  # type: ignore[misc]
    def test_fps_to_pixel_rate(self) -> None:
        self.assertAlmostEqual(fps_to_pixel_rate(1.0, 640, 360), 230.4)
        self.assertEqual(fps_to_pixel_rate(0.0, 1920, 1080), 0.0)
        self.assertAlmostEqual(fps_to_pixel_rate(2.0, 1920, 1080), 4147.2)

    def test_pixel_rate_to_fps(self) -> None:
        self.assertAlmostEqual(pixel_rate_to_fps(230.4, 640, 360), 1.0)
        self.assertEqual(pixel_rate_to_fps(0.0, 1920, 1080), 0.0)

    def test_invalid_inputs_rejected(self) -> None:
        with self.assertRaises(ValueError):
            pixel_rate_to_fps(100.0, 0, 1080)
        with self.assertRaises(ValueError):
            fps_to_pixel_rate(-1.0, 640, 360)

    @given(
        v=st.floats(min_value=1e-6, max_value=1e6),
        width=st.integers(min_value=1, max_value=8192),
        height=st.integers(min_value=1, max_value=8192),
    )
    def test_round_trip(self, v: float, width: int, height: int) -> None:
        back = pixel_rate_to_fps(fps_to_pixel_rate(v, width, height), width, height)
        self.assertAlmostEqual(back / v, 1.0, delta=1e-12)


class ObservationTests(SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.state = EstimatorState.for_sequence(10, 20.0, 640, 360, buffer_size=4)

    def test_admission_and_completion(self) -> None:
        self.state.record_admission(6)
        self.assertEqual((self.state.n_in, self.state.preset_sum), (1, 6))
        self.state.record_completion(0.4)
        self.assertEqual((self.state.n_out, self.state.t_cpu), (1, 0.4))

    def test_time_going_backwards_rejected(self) -> None:
        self.state.record_admission(6)
        self.state.record_admission(6)
        self.state.record_completion(0.4)
        with self.assertRaises(EstimatorContractError):
            self.state.record_completion(0.3)

    def test_completion_without_admission_rejected(self) -> None:
        with self.assertRaises(EstimatorContractError):
            self.state.record_completion(1.0)

    def test_admission_beyond_sequence_rejected(self) -> None:
        small = EstimatorState.for_sequence(1, 1.0, 640, 360)
        small.record_admission(3)
        with self.assertRaises(EstimatorContractError):
            small.record_admission(3)

    def test_admission_beyond_buffer_rejected(self) -> None:
        for _ in range(4):
            self.state.record_admission(5)
        with self.assertRaises(EstimatorContractError):
            self.state.record_admission(5)

    def test_counters_validated_on_construction(self) -> None:
        with self.assertRaises(EstimatorContractError):
            state(n_in=2, n_out=3)
        with self.assertRaises(EstimatorContractError):
            state(n_in=301)
        with self.assertRaises(EstimatorContractError):
            state(t_cpu=-1.0)

    def test_snapshot_is_independent(self) -> None:
        self.state.record_admission(6)
        copy = self.state.snapshot()
        self.state.record_admission(7)
        self.state.record_completion(1.0)
        self.assertEqual((copy.n_in, copy.n_out), (1, 0))
        self.assertEqual(list(copy.in_flight_presets), [6])


class AveragePresetTests(SimpleTestCase):  # type: ignore[misc]
    def run_presets(self, presets: list[int], completions: int) -> EstimatorState:
        estimator = EstimatorState.for_sequence(len(presets), 100.0, 640, 360)
        for preset in presets:
            estimator.record_admission(preset)
        for i in range(completions):
            estimator.record_completion(float(i + 1))
        return estimator

    def test_unavailable_before_admission(self) -> None:
        estimator = EstimatorState.for_sequence(10, 10.0, 640, 360)
        self.assertIsNone(estimator.average_preset())
        self.assertIsNone(estimator.contributing_average_preset())

    def test_constant_preset(self) -> None:
        estimator = self.run_presets([6] * 10, 10)
        self.assertEqual(estimator.average_preset(), 6.0)
        self.assertEqual(estimator.contributing_average_preset(), 6.0)

    def test_fully_encoded_pair(self) -> None:
        estimator = self.run_presets([4, 8], 2)
        self.assertEqual(estimator.average_preset(), 6.0)

    def test_admitted_sum_is_clamped(self) -> None:
        # 12 / n_enc with n_enc = 1
        estimator = self.run_presets([4, 8], 0)
        self.assertEqual(estimator.average_preset(), 12.0)

    def test_contributing_average_weights_in_flight_frames_half(self) -> None:
        estimator = self.run_presets([4, 8], 0)
        self.assertEqual(estimator.contributing_average_preset(), 6.0)
        estimator = self.run_presets([2, 2, 10, 10], 2)
        # (2 + 2 + 0.5 * 20) / 3
        self.assertAlmostEqual(estimator.contributing_average_preset(), 14 / 3)

    @given(
        presets=st.lists(st.integers(min_value=1, max_value=12), min_size=1, max_size=40),
        data=st.data(),
    )
    def test_contributing_average_stays_in_preset_range(
        self, presets: list[int], data: st.DataObject
    ) -> None:
        completions = data.draw(st.integers(min_value=0, max_value=len(presets)))
        p_avg = self.run_presets(presets, completions).contributing_average_preset()
        assert p_avg is not None
        self.assertGreaterEqual(p_avg, min(presets) - 1e-12)
        self.assertLessEqual(p_avg, max(presets) + 1e-12)
