"""Synthetic per-frame CPU costs of a sequence at every preset."""

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol

import numpy as np
import numpy.typing as npt

from presets.speed_model import (
    PresetSpeedTable,
    QpContext,
    check_preset,
    default_table,
    qp_scale,
)


class CostModel(Protocol):
    """Anything the pipeline simulator can price frames with."""

    @property
    def width(self) -> int: ...

    @property
    def height(self) -> int: ...

    @property
    def n_total(self) -> int: ...

    def frame_cost(self, frame_idx: int, preset: int) -> float: ...


class NoiseFamily(enum.Enum):
    LOGNORMAL = "lognormal"
    GAMMA = "gamma"


@dataclass(frozen=True)
class NoiseModel:
    """Mean-one multiplicative cost noise, one draw per frame."""

    sigma: float = 0.0
    seed: int = 0
    family: NoiseFamily = NoiseFamily.LOGNORMAL

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"Noise spread must be nonnegative, got {self.sigma}")

    def multipliers(self, n: int) -> npt.NDArray[np.float64]:
        if self.sigma == 0:
            return np.ones(n)
        rng = np.random.default_rng(self.seed)
        if self.family is NoiseFamily.GAMMA:
            shape = 1.0 / self.sigma**2
            return rng.gamma(shape, 1.0 / shape, size=n)
        return rng.lognormal(mean=-0.5 * self.sigma**2, sigma=self.sigma, size=n)


@dataclass(frozen=True)
class SequenceModel:
    width: int
    height: int
    n_total: int
    qp: QpContext
    true_speed_curve: PresetSpeedTable = field(default_factory=default_table)
    sequence_scale: float = 1.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    gop_spike: float | None = None
    gop_period: int | None = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Frame dimensions must be positive, got {self.width}x{self.height}")
        if self.n_total < 0:
            raise ValueError("Frame count must be nonnegative")
        if not (math.isfinite(self.sequence_scale) and self.sequence_scale > 0):
            raise ValueError(f"Sequence scale must be positive, got {self.sequence_scale}")
        if self.gop_spike is not None and self.gop_spike <= 0:
            raise ValueError("Keyframe multiplier must be positive")
        if self.gop_period is not None and self.gop_period < 1:
            raise ValueError("Keyframe period must be at least one frame")

    @cached_property
    def noise_multipliers(self) -> npt.NDArray[np.float64]:
        return self.noise.multipliers(self.n_total)

    @cached_property
    def _base_costs(self) -> npt.NDArray[np.float64]:
        # seconds per frame at each preset before noise
        speeds = self.sequence_scale * self.true_speed_curve.array * qp_scale(self.qp)
        return self.width * self.height / (1000.0 * speeds)

    def is_keyframe(self, frame_idx: int) -> bool:
        if self.gop_spike is None:
            return False
        if self.gop_period is None:
            return frame_idx == 0
        return frame_idx % self.gop_period == 0

    def true_speed(self, preset: int) -> float:
        """Noise-free pixel rate (kpps) of this sequence at `preset`."""
        check_preset(preset)
        return (
            self.sequence_scale * self.true_speed_curve.entry(preset) * qp_scale(self.qp)
        )

    def frame_cost(self, frame_idx: int, preset: int) -> float:
        """CPU seconds to encode frame `frame_idx` at `preset`."""
        if not 0 <= frame_idx < self.n_total:
            raise IndexError(f"Frame {frame_idx} is outside the sequence of {self.n_total}")
        check_preset(preset)
        cost = float(self._base_costs[preset - 1]) * float(self.noise_multipliers[frame_idx])
        if self.gop_spike is not None and self.is_keyframe(frame_idx):
            cost *= self.gop_spike
        return cost


def keyframe_period(gop_seconds: float, frame_rate: float) -> int:
    return max(1, round(gop_seconds * frame_rate))
