import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from .serializers import PresetTableSerializer, TableFileError, load_table
from .speed_model import (
    DEFAULT_RATES,
    PRESETS,
    PresetRangeError,
    PresetSpeedTable,
    QpContext,
    QpDomainError,
    default_table,
    expected_speed,
    lookup,
    nearest_preset,
    qp_scale,
    table_to_dict,
    update_table,
)
from .validators import (
    validate_strictly_decreasing,
    validate_strictly_increasing,
    validate_strictly_positive,
    validate_unit_interval,
)

QP17 = QpContext(17)

tables = st.lists(
    st.floats(min_value=0.01, max_value=1000.0), min_size=12, max_size=12
).map(lambda steps: PresetSpeedTable(tuple(np.cumsum(steps).tolist())))
presets = st.floats(min_value=1.0, max_value=12.0)


class DefaultTableTests(SimpleTestCase):  # type: ignore[misc]
    def test_reproduces_measured_constants(self) -> None:
        table = default_table()
        expected = [
            62.6, 119.8, 284.3, 564.3, 1048.0, 2610.0,
            4450.0, 7907.0, 11328.0, 13664.0, 17838.0, 24463.0,
        ]  # fmt: skip
        self.assertEqual([table.entry(p) for p in PRESETS], expected)

    def test_named_entries(self) -> None:
        table = default_table()
        self.assertEqual(table.entry(1), 62.6)
        self.assertEqual(table.entry(6), 2610.0)
        self.assertEqual(table.entry(12), 24463.0)

    def test_spans_two_orders_of_magnitude(self) -> None:
        table = default_table()
        ratio = table.entry(12) / table.entry(1)
        self.assertGreaterEqual(ratio, 100.0)
        self.assertAlmostEqual(ratio, 24463 / 62.6)

    def test_entry_outside_range_rejected(self) -> None:
        with self.assertRaises(PresetRangeError):
            default_table().entry(0)
        with self.assertRaises(PresetRangeError):
            default_table().entry(13)


class PresetSpeedTableTests(SimpleTestCase):  # type: ignore[misc]
    def test_wrong_length_rejected(self) -> None:
        with self.assertRaises(ValueError):
            PresetSpeedTable(DEFAULT_RATES[:11])

    def test_nonpositive_rate_rejected(self) -> None:
        with self.assertRaises(ValueError):
            PresetSpeedTable((0.0, *DEFAULT_RATES[1:]))

    def test_non_increasing_rejected(self) -> None:
        rates = list(DEFAULT_RATES)
        rates[5] = rates[4]
        with self.assertRaises(ValueError):
            PresetSpeedTable(tuple(rates))

    def test_from_mapping_requires_every_preset(self) -> None:
        entries = dict(zip(PRESETS, DEFAULT_RATES))
        self.assertEqual(PresetSpeedTable.from_mapping(entries), default_table())
        del entries[7]
        with self.assertRaises(ValueError):
            PresetSpeedTable.from_mapping(entries)

    def test_scale_relative_to(self) -> None:
        doubled = PresetSpeedTable(tuple(2 * r for r in DEFAULT_RATES))
        self.assertAlmostEqual(doubled.scale_relative_to(default_table()), 2.0)
        self.assertAlmostEqual(default_table().scale_relative_to(default_table()), 1.0)

    def test_table_to_dict_uses_string_keys(self) -> None:
        data = table_to_dict(default_table())
        self.assertEqual(list(data), [str(p) for p in PRESETS])
        self.assertEqual(data["8"], 7907.0)


class LookupTests(SimpleTestCase):  # type: ignore[misc]
    def test_integer_presets_are_exact(self) -> None:
        table = default_table()
        self.assertEqual(lookup(table, 2.0), 119.8)
        self.assertEqual(lookup(table, 1.0), 62.6)
        for p in PRESETS:
            self.assertEqual(lookup(table, p), table.entry(p))

    def test_midpoint_is_interpolated(self) -> None:
        self.assertAlmostEqual(lookup(default_table(), 1.5), 91.2)

    def test_out_of_range_rejected(self) -> None:
        for p in (0.999, 12.001, 0, -3):
            with self.assertRaises(PresetRangeError):
                lookup(default_table(), p)

    @given(table=tables, a=presets, b=presets)
    @settings(max_examples=200)
    def test_nondecreasing_in_preset(self, table: PresetSpeedTable, a: float, b: float) -> None:
        low, high = sorted((a, b))
        self.assertLessEqual(lookup(table, low), lookup(table, high))


class QpScaleTests(SimpleTestCase):  # type: ignore[misc]
    def test_anchor_is_unity(self) -> None:
        self.assertEqual(qp_scale(QP17), 1.0)

    def test_known_values(self) -> None:
        self.assertAlmostEqual(qp_scale(QpContext(27)), 1 / 0.85, delta=1e-12)
        self.assertAlmostEqual(qp_scale(QpContext(37)), 1 / 0.7, delta=1e-12)

    def test_strictly_increasing_over_valid_range(self) -> None:
        scales = [qp_scale(QpContext(qp)) for qp in range(1, 64)]
        for low, high in zip(scales, scales[1:]):
            self.assertLess(low, high)

    def test_invalid_qp_rejected(self) -> None:
        for qp in (0, 64, -1):
            with self.assertRaises(QpDomainError):
                QpContext(qp)


class ExpectedSpeedTests(SimpleTestCase):  # type: ignore[misc]
    def test_anchor_qp_is_table_value(self) -> None:
        table = default_table()
        self.assertEqual(expected_speed(table, 1.0, QP17), 62.6)
        self.assertEqual(expected_speed(table, 12.0, QP17), 24463.0)

    def test_higher_qp_predicts_faster(self) -> None:
        self.assertAlmostEqual(expected_speed(default_table(), 1.0, QpContext(37)), 62.6 / 0.7)
        self.assertAlmostEqual(expected_speed(default_table(), 1.0, QpContext(37)), 89.428571, 5)


class UpdateTableTests(SimpleTestCase):  # type: ignore[misc]
    def test_zero_weight_is_identity(self) -> None:
        table = default_table()
        self.assertEqual(update_table(table, 12345.0, 4.5, 0.0), table)

    def test_matching_measurement_is_identity(self) -> None:
        table = default_table()
        for p_avg in (1.0, 3.25, 7.0, 12.0):
            for w in (0.05, 0.5, 1.0):
                self.assertEqual(update_table(table, lookup(table, p_avg), p_avg, w), table)

    def test_fixed_point_under_repetition(self) -> None:
        table = default_table()
        for _ in range(100):
            table = update_table(table, lookup(table, 5.5), 5.5, 0.05)
        self.assertEqual(table, default_table())

    def test_full_weight_doubles_every_entry(self) -> None:
        table = default_table()
        updated = update_table(table, 2 * lookup(table, 3.0), 3.0, 1.0)
        for p in PRESETS:
            self.assertAlmostEqual(updated.entry(p), 2 * table.entry(p))

    def test_invalid_arguments_rejected(self) -> None:
        table = default_table()
        with self.assertRaises(ValueError):
            update_table(table, 100.0, 5.0, 1.5)
        with self.assertRaises(ValueError):
            update_table(table, 100.0, 5.0, -0.1)
        with self.assertRaises(ValueError):
            update_table(table, 0.0, 5.0, 0.5)
        with self.assertRaises(PresetRangeError):
            update_table(table, 100.0, 12.5, 0.5)

    def test_thousand_updates_preserve_ratios(self) -> None:
        rng = np.random.default_rng(17)
        original = default_table()
        table = original
        for _ in range(1000):
            table = update_table(
                table,
                v_enc=float(np.exp(rng.uniform(np.log(10.0), np.log(1e5)))),
                p_avg=float(rng.uniform(1.0, 12.0)),
                w=float(rng.uniform(0.0, 1.0)),
            )
            self.assertTrue(all(b > a > 0 for a, b in zip(table.rates, table.rates[1:])))
        ratios = table.array / table.array[0]
        expected = original.array / original.array[0]
        np.testing.assert_allclose(ratios, expected, rtol=1e-12)

    @given(
        table=tables,
        v_enc=st.floats(min_value=1e-2, max_value=1e6),
        p_avg=presets,
        w=st.floats(min_value=0.0, max_value=1.0),
    )
    @settings(max_examples=300)
    def test_pairwise_ratios_and_order_preserved(
        self, table: PresetSpeedTable, v_enc: float, p_avg: float, w: float
    ) -> None:
        updated = update_table(table, v_enc, p_avg, w)
        before = table.array[:, None] / table.array[None, :]
        after = updated.array[:, None] / updated.array[None, :]
        np.testing.assert_allclose(after, before, rtol=1e-12)
        self.assertTrue(all(b > a > 0 for a, b in zip(updated.rates, updated.rates[1:])))


class NearestPresetTests(SimpleTestCase):  # type: ignore[misc]
    def test_exact_hit(self) -> None:
        self.assertEqual(nearest_preset(default_table(), 62.6, QP17), 1)

    def test_saturates(self) -> None:
        self.assertEqual(nearest_preset(default_table(), 10.0, QP17), 1)
        self.assertEqual(nearest_preset(default_table(), 1e7, QP17), 12)

    def test_between_entries_picks_log_closest(self) -> None:
        # |ln 3400 - ln 2610| = 0.2644 < |ln 4450 - ln 3400| = 0.2691
        self.assertEqual(nearest_preset(default_table(), 3400.0, QP17), 6)

    def test_matches_brute_force(self) -> None:
        table = default_table()
        for v in np.geomspace(1.0, 1e6, 400):
            brute = min(PRESETS, key=lambda p: abs(math.log(v) - math.log(table.entry(p))))
            self.assertEqual(nearest_preset(table, float(v), QP17), brute)

    def test_nonpositive_target_rejected(self) -> None:
        with self.assertRaises(ValueError):
            nearest_preset(default_table(), 0.0, QP17)

    @given(
        v=st.floats(min_value=1.0, max_value=1e6),
        factor=st.sampled_from([0.25, 0.5, 2.0, 4.0, 8.0]),
        qp=st.integers(min_value=1, max_value=63),
    )
    @settings(max_examples=200)
    def test_invariant_under_uniform_scaling(self, v: float, factor: float, qp: int) -> None:
        table = default_table()
        scaled = PresetSpeedTable(tuple(r * factor for r in table.rates))
        ctx = QpContext(qp)
        self.assertEqual(nearest_preset(table, v, ctx), nearest_preset(scaled, v * factor, ctx))


class ValidatorTests(SimpleTestCase):  # type: ignore[misc]
    def test_strictly_positive(self) -> None:
        validate_strictly_positive(0.5)
        for value in (0.0, -1.0, math.inf, math.nan):
            with self.assertRaises(ValidationError) as cm:
                validate_strictly_positive(value)
            self.assertEqual(cm.exception.code, "not_positive")

    def test_unit_interval(self) -> None:
        validate_unit_interval(0.0)
        validate_unit_interval(1.0)
        with self.assertRaises(ValidationError) as cm:
            validate_unit_interval(1.01)
        self.assertEqual(cm.exception.code, "outside_unit_interval")

    def test_strictly_increasing(self) -> None:
        validate_strictly_increasing([1.0, 2.0, 3.0])
        with self.assertRaises(ValidationError) as cm:
            validate_strictly_increasing([1.0, 3.0, 3.0])
        self.assertEqual(cm.exception.code, "not_increasing")

    def test_strictly_decreasing(self) -> None:
        validate_strictly_decreasing([3.0, 2.0, 1.0])
        with self.assertRaises(ValidationError) as cm:
            validate_strictly_decreasing([3.0, 1.0, 2.0])
        self.assertEqual(cm.exception.code, "not_decreasing")


class TableFileTests(SimpleTestCase):  # type: ignore[misc]
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.valid = {str(p): rate for p, rate in zip(PRESETS, DEFAULT_RATES)}

    def write(self, data: object) -> Path:
        path = Path(self.tmp.name) / "table.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    def test_load_valid_table(self) -> None:
        halved = {k: v / 2 for k, v in self.valid.items()}
        table = load_table(self.write(halved))
        self.assertEqual(table.entry(1), 31.3)
        self.assertAlmostEqual(table.scale_relative_to(default_table()), 0.5)

    def test_missing_key_rejected(self) -> None:
        del self.valid["12"]
        with self.assertRaises(TableFileError) as cm:
            load_table(self.write(self.valid))
        self.assertIn("12", str(cm.exception))

    def test_extra_keys_rejected(self) -> None:
        for extra in ("0", "13", "fast"):
            with self.subTest(extra=extra):
                with self.assertRaises(TableFileError) as cm:
                    load_table(self.write({**self.valid, extra: 30000.0}))
                self.assertIn(extra, str(cm.exception))

    def test_non_increasing_rejected(self) -> None:
        self.valid["7"] = self.valid["6"]
        with self.assertRaises(TableFileError):
            load_table(self.write(self.valid))

    def test_negative_rate_rejected(self) -> None:
        self.valid["1"] = -5
        with self.assertRaises(TableFileError):
            load_table(self.write(self.valid))

    def test_malformed_json_names_the_file(self) -> None:
        path = Path(self.tmp.name) / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with self.assertRaises(TableFileError) as cm:
            load_table(path)
        self.assertIn("broken.json", str(cm.exception))

    def test_missing_file_names_the_file(self) -> None:
        with self.assertRaises(TableFileError) as cm:
            load_table(Path(self.tmp.name) / "absent.json")
        self.assertIn("absent.json", str(cm.exception))

    def test_serializer_renders_table(self) -> None:
        data = PresetTableSerializer(default_table()).data
        self.assertEqual(data, self.valid)
