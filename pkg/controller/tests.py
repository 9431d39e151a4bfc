from django.apps import apps
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from estimation.estimator import EstimatorState
from presets.speed_model import (
    PresetSpeedTable,
    QpContext,
    default_table,
    expected_speed,
    lookup,
    qp_scale,
)

from .apps import ControllerAppConfig
from .saps import (
    AverageMode,
    ControllerConfig,
    ControllerState,
    FixedPresetPolicy,
    SapsController,
    delta_from_accelerations,
    initialize,
)

QP17 = QpContext(17)
FROZEN_TABLE = ControllerConfig(update_weight=0.0)


def estimator_with_budget(
    budget_kpps: float, width: int = 640, height: int = 360
) -> EstimatorState:
    """100 of 300 frames done after 10 s, with the deadline placed to give `budget_kpps`."""
    budget_fps = budget_kpps * 1000.0 / (width * height)
    return EstimatorState(
        n_total=300,
        t_target=10.0 + 200.0 / budget_fps,
        width=width,
        height=height,
        n_in=100,
        n_out=100,
        t_cpu=10.0,
        preset_sum=600,
        completed_preset_sum=600,
    )


def controller(
    preset: int,
    config: ControllerConfig = FROZEN_TABLE,
    table: PresetSpeedTable | None = None,
    qp: QpContext = QP17,
) -> SapsController:
    return SapsController(
        ControllerState(
            current_preset=preset,
            table=table or default_table(),
            config=config,
            qp=qp,
        )
    )


class DecisionRuleTests(SimpleTestCase):  # type: ignore[misc]
    """Hand-traced (a(p), a(p+1), a(p-1)) cases for both branch orders."""

    def setUp(self) -> None:
        self.corrected = ControllerConfig()
        self.literal = ControllerConfig(literal_branch_order=True)

    def check(
        self, a_p: float, a_up: float | None, a_down: float | None, corrected: int, literal: int
    ) -> None:
        self.assertEqual(delta_from_accelerations(self.corrected, a_p, a_up, a_down), corrected)
        self.assertEqual(delta_from_accelerations(self.literal, a_p, a_up, a_down), literal)

    def test_speed_up_by_one(self) -> None:
        self.check(1.2, 0.8, 1.5, corrected=1, literal=1)

    def test_speed_up_by_two(self) -> None:
        self.check(3.0, 2.5, 4.0, corrected=2, literal=1)

    def test_speed_up_blocked_when_next_preset_overshoots(self) -> None:
        self.check(1.1, 0.4, 2.0, corrected=0, literal=0)

    def test_speed_up_at_keep_boundary(self) -> None:
        self.check(1.5, 0.5, 2.0, corrected=0, literal=0)

    def test_speed_up_at_double_boundary(self) -> None:
        self.check(5.0, 2.0, 8.0, corrected=1, literal=1)

    def test_slow_down_by_one(self) -> None:
        self.check(0.8, 1.0, 0.6, corrected=-1, literal=-1)

    def test_slow_down_by_two(self) -> None:
        self.check(0.5, 0.7, 0.4, corrected=-2, literal=-1)

    def test_slow_down_blocked_when_previous_preset_too_slow(self) -> None:
        self.check(0.85, 1.0, 1.9, corrected=0, literal=0)

    def test_slow_down_at_keep_boundary(self) -> None:
        self.check(0.7, 0.9, 1.8, corrected=0, literal=0)

    def test_slow_down_at_double_boundary(self) -> None:
        self.check(0.2, 0.3, 0.45, corrected=-1, literal=-1)

    def test_dead_zone(self) -> None:
        for a_p in (0.9, 0.95, 0.999, 1.0):
            self.check(a_p, 3.0, 0.1, corrected=0, literal=0)

    def test_just_outside_dead_zone(self) -> None:
        self.check(1.0001, 0.9, 1.2, corrected=1, literal=1)
        self.check(0.8999, 0.9, 1.2, corrected=-1, literal=-1)

    def test_missing_neighbour_blocks_move(self) -> None:
        self.check(3.0, None, 4.0, corrected=0, literal=0)
        self.check(0.1, 0.2, None, corrected=0, literal=0)


class ControllerConfigTests(SimpleTestCase):  # type: ignore[misc]
    def test_defaults(self) -> None:
        config = ControllerConfig()
        self.assertEqual((config.up_threshold, config.down_threshold), (1.0, 0.9))
        self.assertEqual((config.up_keep, config.up_double), (0.5, 2.0))
        self.assertEqual((config.down_keep, config.down_double), (1.8, 0.45))
        self.assertEqual(config.update_weight, 0.05)
        self.assertFalse(config.literal_branch_order)
        self.assertEqual(config.average_mode, AverageMode.CONTRIBUTING)

    def test_inconsistent_thresholds_rejected(self) -> None:
        for kwargs in (
            {"down_threshold": 1.0},
            {"up_keep": 2.5},
            {"down_double": 2.0},
            {"update_weight": 1.5},
            {"update_cadence": 0},
        ):
            with self.assertRaises(ValueError):
                ControllerConfig(**kwargs)  # type: ignore[arg-type]

    def test_state_rejects_out_of_range_preset(self) -> None:
        with self.assertRaises(ValueError):
            ControllerState(0, default_table(), ControllerConfig(), QP17)
        with self.assertRaises(ValueError):
            ControllerState(13, default_table(), ControllerConfig(), QP17)


class AccelerationTests(SimpleTestCase):  # type: ignore[misc]
    def test_on_budget_is_unity(self) -> None:
        estimator = estimator_with_budget(7907.0)
        self.assertAlmostEqual(controller(8).acceleration(estimator, 8), 1.0)

    def test_twice_the_budget(self) -> None:
        estimator = estimator_with_budget(2 * 1048.0)
        self.assertAlmostEqual(controller(5).acceleration(estimator, 5), 2.0)

    def test_worked_example(self) -> None:
        estimator = EstimatorState(
            n_total=300, t_target=100.0, width=640, height=360, n_in=150, n_out=150, t_cpu=60.0
        )
        a = controller(8).acceleration(estimator, 8)
        assert a is not None
        self.assertAlmostEqual(a, 150 / 40 * 230.4 / 7907)
        self.assertAlmostEqual(a, 0.10927, 5)

    def test_fractional_preset_uses_interpolation(self) -> None:
        estimator = estimator_with_budget(91.2)
        self.assertAlmostEqual(controller(1).acceleration(estimator, 1.5), 1.0)

    def test_qp_scales_the_table_side(self) -> None:
        estimator = estimator_with_budget(7907.0)
        a = controller(8, qp=QpContext(37)).acceleration(estimator, 8)
        self.assertAlmostEqual(a, 0.7)

    def test_unavailable_when_exhausted(self) -> None:
        estimator = EstimatorState(
            n_total=300, t_target=10.0, width=640, height=360, n_in=20, n_out=10, t_cpu=12.0
        )
        self.assertIsNone(controller(8).acceleration(estimator, 8))


class DecideDeltaTests(SimpleTestCase):  # type: ignore[misc]
    def test_exhausted_budget_jumps_to_fastest(self) -> None:
        estimator = EstimatorState(
            n_total=300, t_target=10.0, width=640, height=360, n_in=20, n_out=10, t_cpu=12.0
        )
        self.assertEqual(controller(3).decide_delta(estimator), 9)
        self.assertEqual(controller(12).decide_delta(estimator), 0)

    def test_done_holds(self) -> None:
        estimator = EstimatorState(
            n_total=300, t_target=100.0, width=640, height=360, n_in=300, n_out=300, t_cpu=90.0
        )
        self.assertEqual(controller(5).decide_delta(estimator), 0)

    def test_no_estimate_holds(self) -> None:
        estimator = EstimatorState.for_sequence(300, 100.0, 640, 360)
        self.assertEqual(controller(5).decide_delta(estimator), 0)

    def test_double_step_needs_corrected_order(self) -> None:
        # a(6) = 12000 / 2610, a(7) = 12000 / 4450 > 2
        estimator = estimator_with_budget(12000.0)
        self.assertEqual(controller(6).decide_delta(estimator), 2)
        literal = ControllerConfig(literal_branch_order=True, update_weight=0.0)
        self.assertEqual(controller(6, literal).decide_delta(estimator), 1)

    def test_truncated_at_upper_boundary(self) -> None:
        # a(11) and a(12) both far above the double-step threshold
        estimator = estimator_with_budget(200000.0)
        self.assertEqual(controller(11).decide_delta(estimator), 1)
        self.assertEqual(controller(12).decide_delta(estimator), 0)

    def test_truncated_at_lower_boundary(self) -> None:
        estimator = estimator_with_budget(1.0)
        self.assertEqual(controller(2).decide_delta(estimator), -1)
        self.assertEqual(controller(1).decide_delta(estimator), 0)

    @given(
        preset=st.integers(min_value=1, max_value=12),
        budgets=st.lists(
            st.floats(min_value=1.0, max_value=1e6), min_size=2, max_size=10, unique=True
        ),
        literal=st.booleans(),
    )
    @settings(max_examples=200)
    def test_monotone_in_budget(self, preset: int, budgets: list[float], literal: bool) -> None:
        config = ControllerConfig(literal_branch_order=literal, update_weight=0.0)
        estimators = [estimator_with_budget(b) for b in budgets]
        estimators.sort(key=lambda e: e.budget_pixel_rate() or 0.0)
        deltas = [controller(preset, config).decide_delta(e) for e in estimators]
        self.assertEqual(deltas, sorted(deltas))

    @given(
        preset=st.integers(min_value=1, max_value=12),
        t_target=st.floats(min_value=10.01, max_value=1e5),
        factor=st.sampled_from([2, 4, 8]),
    )
    @settings(max_examples=200)
    def test_invariant_under_common_scaling(
        self, preset: int, t_target: float, factor: int
    ) -> None:
        # a wider frame scales the budget pixel rate exactly by `factor`
        def decide(width: int, table: PresetSpeedTable) -> int:
            estimator = EstimatorState(
                n_total=300,
                t_target=t_target,
                width=width,
                height=360,
                n_in=100,
                n_out=100,
                t_cpu=10.0,
                preset_sum=600,
                completed_preset_sum=600,
            )
            return controller(preset, table=table).decide_delta(estimator)

        scaled_table = PresetSpeedTable(tuple(r * factor for r in default_table().rates))
        self.assertEqual(decide(640, default_table()), decide(640 * factor, scaled_table))


class StepTests(SimpleTestCase):  # type: ignore[misc]
    def test_holds_initial_preset_before_first_completion(self) -> None:
        saps = controller(4, ControllerConfig())
        estimator = EstimatorState.for_sequence(300, 1.0, 640, 360)
        estimator.record_admission(4)
        self.assertEqual(saps.step(estimator), 4)
        self.assertEqual(saps.table, default_table())
        self.assertEqual(saps.switches, 0)

    def test_additive_step(self) -> None:
        saps = controller(6)
        self.assertEqual(saps.step(estimator_with_budget(3000.0)), 7)
        self.assertEqual(saps.preset, 7)
        self.assertEqual(saps.initial_preset, 6)
        self.assertEqual(saps.switches, 1)

    def test_upper_clamp(self) -> None:
        saps = controller(12)
        self.assertEqual(saps.step(estimator_with_budget(200000.0)), 12)
        self.assertEqual(saps.switches, 0)

    def test_lower_clamp(self) -> None:
        saps = controller(1)
        self.assertEqual(saps.step(estimator_with_budget(1.0)), 1)

    def test_exhausted_budget_pins_fastest_preset(self) -> None:
        estimator = EstimatorState(
            n_total=300, t_target=10.0, width=640, height=360, n_in=20, n_out=10, t_cpu=12.0
        )
        saps = controller(4)
        self.assertEqual(saps.step(estimator), 12)

    def test_table_follows_measured_speed(self) -> None:
        # every completed frame at preset 6; measured 2x the table's 2610 kpps
        estimator = estimator_with_budget(2610.0)
        estimator.t_cpu = 100 * 230.4 / (2 * 2610.0)
        saps = controller(6, ControllerConfig(update_weight=0.05))
        saps.step(estimator)
        self.assertAlmostEqual(saps.table.scale_relative_to(default_table()), 1.05)

    def test_table_update_removes_qp_factor(self) -> None:
        qp = QpContext(27)
        measured = expected_speed(default_table(), 6, qp)
        estimator = estimator_with_budget(measured)
        estimator.t_cpu = 100 * 230.4 / measured
        saps = controller(6, ControllerConfig(update_weight=0.5), qp=qp)
        saps.step(estimator)
        self.assertAlmostEqual(saps.table.scale_relative_to(default_table()), 1.0, delta=1e-12)
        self.assertNotAlmostEqual(qp_scale(qp), 1.0)

    def test_update_cadence(self) -> None:
        estimator = estimator_with_budget(2610.0)
        estimator.t_cpu = 100 * 230.4 / (2 * 2610.0)
        saps = controller(6, ControllerConfig(update_weight=0.05, update_cadence=3))
        saps.step(estimator)
        saps.step(estimator)
        self.assertEqual(saps.table, default_table())
        saps.step(estimator)
        self.assertAlmostEqual(saps.table.scale_relative_to(default_table()), 1.05)

    def test_default_update_anchors_at_the_preset_in_use(self) -> None:
        # first completion of a full 16-frame buffer, every frame at preset 6
        estimator = EstimatorState(
            n_total=300,
            t_target=1000.0,
            width=640,
            height=360,
            n_in=16,
            n_out=1,
            t_cpu=8.5 * 230.4 / (2 * 2610.0),
            preset_sum=96,
            completed_preset_sum=6,
        )
        self.assertEqual(estimator.contributing_average_preset(), 6.0)
        self.assertAlmostEqual(estimator.average_preset(), 96 / 8.5)
        saps = controller(6, ControllerConfig())
        saps.step(estimator)
        self.assertAlmostEqual(saps.table.scale_relative_to(default_table()), 1.05)

    def test_admitted_average_mode(self) -> None:
        # preset 6 completed, preset 10 in flight
        def updated_scale(mode: AverageMode) -> float:
            estimator = EstimatorState(
                n_total=300,
                t_target=1000.0,
                width=640,
                height=360,
                n_in=140,
                n_out=100,
                t_cpu=10.0,
                preset_sum=1000,
                completed_preset_sum=600,
            )
            saps = controller(6, ControllerConfig(update_weight=1.0, average_mode=mode))
            saps.step(estimator)
            return saps.table.scale_relative_to(default_table())

        # 12 fps over n_enc = 120 frames in 10 s
        measured = 12 * 230.4
        self.assertAlmostEqual(
            updated_scale(AverageMode.ADMITTED), measured / lookup(default_table(), 1000 / 120)
        )
        self.assertAlmostEqual(
            updated_scale(AverageMode.CONTRIBUTING), measured / lookup(default_table(), 800 / 120)
        )


class InitializeTests(SimpleTestCase):  # type: ignore[misc]
    def test_initial_preset_from_target(self) -> None:
        state = initialize(0.125, 1920, 1080, QP17)
        self.assertEqual(state.current_preset, 3)
        self.assertEqual(state.table, default_table())
        self.assertEqual(state.config, ControllerConfig())

    def test_saturates(self) -> None:
        self.assertEqual(initialize(1000.0, 640, 360, QP17).current_preset, 12)
        self.assertEqual(initialize(0.001, 1920, 1080, QP17).current_preset, 1)

    def test_uses_given_table_and_config(self) -> None:
        table = PresetSpeedTable(tuple(r / 2 for r in default_table().rates))
        config = ControllerConfig(update_weight=0.1)
        state = initialize(0.125, 1920, 1080, QP17, table, config)
        self.assertEqual(state.current_preset, 4)
        self.assertIs(state.config, config)

    def test_nonpositive_target_rejected(self) -> None:
        with self.assertRaises(ValueError):
            initialize(0.0, 640, 360, QP17)


class FixedPresetPolicyTests(SimpleTestCase):  # type: ignore[misc]
    def test_constant(self) -> None:
        policy = FixedPresetPolicy(8)
        estimator = estimator_with_budget(1.0)
        self.assertEqual([policy.step(estimator) for _ in range(3)], [8, 8, 8])

    def test_out_of_range_rejected(self) -> None:
        with self.assertRaises(ValueError):
            FixedPresetPolicy(13)


class AppConfigTests(SimpleTestCase):  # type: ignore[misc]
    def test_installed_app_config(self) -> None:
        app_config = apps.get_app_config("controller")
        self.assertIsInstance(app_config, ControllerAppConfig)
        self.assertFalse(isinstance(app_config, ControllerConfig))
