"""
Preset-speed relationship of the encoder.

The table maps each controllable preset (1 = slowest, 12 = fastest) to a
pixel rate in kilopixels per second, measured at the QP 17 anchor. Predicted
speeds for other QPs are the table value times `qp_scale(qp)`. Fractional
presets are linearly interpolated. The table is an immutable value; the
online update returns a new table scaled uniformly.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

MIN_PRESET = 1
MAX_PRESET = 12
PRESETS = tuple(range(MIN_PRESET, MAX_PRESET + 1))

MIN_QP = 1
MAX_QP = 63
QP_ANCHOR = 17
QP_SLOPE = 0.015

# Pixel rates (kpps) per preset 1..12, averaged over QPs and resolutions.
DEFAULT_RATES = (
    62.6,
    119.8,
    284.3,
    564.3,
    1048.0,
    2610.0,
    4450.0,
    7907.0,
    11328.0,
    13664.0,
    17838.0,
    24463.0,
)


class PresetRangeError(ValueError):
    """A preset (or fractional preset) outside [1, 12]."""


class QpDomainError(ValueError):
    """A QP for which the scaling factor is undefined."""


def check_preset(p: float) -> float:
    if not MIN_PRESET <= p <= MAX_PRESET:
        raise PresetRangeError(f"Preset {p} is outside [{MIN_PRESET}, {MAX_PRESET}]")
    return p


@dataclass(frozen=True)
class QpContext:
    qp: int

    def __post_init__(self) -> None:
        if not MIN_QP <= self.qp <= MAX_QP:
            raise QpDomainError(f"QP {self.qp} is outside [{MIN_QP}, {MAX_QP}]")


@dataclass(frozen=True)
class PresetSpeedTable:
    """Pixel rate (kpps) per preset; `rates[0]` belongs to preset 1."""

    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.rates) != len(PRESETS):
            raise ValueError(f"Expected {len(PRESETS)} pixel rates, got {len(self.rates)}")
        if any(not math.isfinite(r) or r <= 0 for r in self.rates):
            raise ValueError("Pixel rates must be finite and strictly positive")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("Pixel rates must be strictly increasing in preset")

    @classmethod
    def from_mapping(cls, entries: dict[int, float]) -> "PresetSpeedTable":
        missing = [p for p in PRESETS if p not in entries]
        if missing:
            raise ValueError(f"Missing presets {missing}")
        return cls(tuple(float(entries[p]) for p in PRESETS))

    @cached_property
    def array(self) -> npt.NDArray[np.float64]:
        values = np.asarray(self.rates, dtype=np.float64)
        values.setflags(write=False)
        return values

    def entry(self, preset: int) -> float:
        check_preset(preset)
        return self.rates[preset - MIN_PRESET]

    def as_dict(self) -> dict[int, float]:
        return dict(zip(PRESETS, self.rates))

    def scale_relative_to(self, reference: "PresetSpeedTable") -> float:
        """Geometric-mean factor between this table and `reference`."""
        return float(np.exp(np.mean(np.log(self.array / reference.array))))


def default_table() -> PresetSpeedTable:
    return PresetSpeedTable(DEFAULT_RATES)


def lookup(table: PresetSpeedTable, p: float) -> float:
    """Pixel rate at preset `p`, linear between neighbouring integer presets."""
    check_preset(p)
    return float(np.interp(p, PRESETS, table.array))


def qp_scale(ctx: QpContext) -> float:
    denominator = 1.0 - QP_SLOPE * (ctx.qp - QP_ANCHOR)
    if denominator <= 0:
        raise QpDomainError(f"QP {ctx.qp} gives a nonpositive scaling denominator")
    return 1.0 / denominator


def expected_speed(table: PresetSpeedTable, p: float, ctx: QpContext) -> float:
    """Predicted pixel rate at preset `p` and the given QP."""
    return qp_scale(ctx) * lookup(table, p)


def update_table(
    table: PresetSpeedTable, v_enc: float, p_avg: float, w: float
) -> PresetSpeedTable:
    """
    Pull the table towards the measured speed.

    Every entry is scaled by `(1 - w) + w * v_enc / lookup(table, p_avg)`, so
    the ratios between presets never change; only the overall level adapts.
    `v_enc` must be expressed at the table's QP anchor.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"Update weight {w} is outside [0, 1]")
    if not v_enc > 0:
        raise ValueError(f"Measured pixel rate must be positive, got {v_enc}")
    check_preset(p_avg)
    if w == 0.0:
        return table

    factor = 1.0 + w * (v_enc / lookup(table, p_avg) - 1.0)
    if factor == 1.0:
        return table
    logger.debug("Table update: p_avg=%.3f v_enc=%.1f factor=%.5f", p_avg, v_enc, factor)
    return PresetSpeedTable(tuple((table.array * factor).tolist()))


def expected_speeds(table: PresetSpeedTable, ctx: QpContext) -> npt.NDArray[np.float64]:
    return qp_scale(ctx) * table.array


def nearest_preset(table: PresetSpeedTable, v_target: float, ctx: QpContext) -> int:
    """Integer preset whose predicted speed is closest to `v_target` in log-speed."""
    if not v_target > 0:
        raise ValueError(f"Target pixel rate must be positive, got {v_target}")
    distances = np.abs(np.log(expected_speeds(table, ctx)) - math.log(v_target))
    return PRESETS[int(np.argmin(distances))]


def table_to_dict(table: PresetSpeedTable) -> dict[str, float]:
    """Keyed by the preset number as a string, the table file's layout."""
    return {str(p): rate for p, rate in table.as_dict().items()}
