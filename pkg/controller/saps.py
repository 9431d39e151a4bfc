"""
Speed-adaptive preset switching.

Before each frame is admitted, the controller compares the speed the
remaining frames need (the budget) with the table's prediction for the
current preset. The ratio is the acceleration factor a(p). Above
`up_threshold` the preset goes up, below `down_threshold` it goes down, and
the factor at the neighbouring preset decides between a step of one or two.
The gap between the two thresholds is a dead zone that biases the encoder
towards finishing early rather than late.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol

from estimation.estimator import BudgetStatus, EstimatorState, fps_to_pixel_rate
from presets.speed_model import (
    MAX_PRESET,
    MIN_PRESET,
    PresetSpeedTable,
    QpContext,
    check_preset,
    default_table,
    expected_speed,
    nearest_preset,
    qp_scale,
    update_table,
)

logger = logging.getLogger(__name__)


class AverageMode(enum.Enum):
    # completed frames weigh 1, frames in flight weigh 1/2
    CONTRIBUTING = "contributing"
    # sum over admitted frames divided by the contributing-frame count
    ADMITTED = "admitted"


@dataclass(frozen=True)
class ControllerConfig:
    up_threshold: float = 1.0
    down_threshold: float = 0.9
    up_keep: float = 0.5
    up_double: float = 2.0
    down_keep: float = 1.8
    down_double: float = 0.45
    literal_branch_order: bool = False
    update_weight: float = 0.05
    update_cadence: int = 1
    average_mode: AverageMode = AverageMode.CONTRIBUTING

    def __post_init__(self) -> None:
        if not self.down_threshold < self.up_threshold:
            raise ValueError("down_threshold must be below up_threshold")
        if not self.up_keep < self.up_double:
            raise ValueError("up_keep must be below up_double")
        if not self.down_double < self.down_keep:
            raise ValueError("down_double must be below down_keep")
        if not 0.0 <= self.update_weight <= 1.0:
            raise ValueError(f"update_weight {self.update_weight} is outside [0, 1]")
        if self.update_cadence < 1:
            raise ValueError("update_cadence must be at least one frame")


@dataclass
class ControllerState:
    current_preset: int
    table: PresetSpeedTable
    config: ControllerConfig
    qp: QpContext

    def __post_init__(self) -> None:
        if not MIN_PRESET <= self.current_preset <= MAX_PRESET:
            raise ValueError(f"Preset {self.current_preset} is outside the controllable range")


class PresetPolicy(Protocol):
    """Chooses the preset of the next admitted frame."""

    def step(self, estimator: EstimatorState) -> int: ...


def clamp_preset(p: int) -> int:
    return min(max(p, MIN_PRESET), MAX_PRESET)


def delta_from_accelerations(
    config: ControllerConfig,
    a_p: float,
    a_up: float | None,
    a_down: float | None,
) -> int:
    """
    The switching rule on precomputed factors. `a_up` is a(p + 1) and
    `a_down` is a(p - 1); either is None when that neighbour does not exist,
    which blocks a move in that direction.
    """
    if a_p > config.up_threshold:
        if a_up is None:
            return 0
        if config.literal_branch_order:
            if a_up > config.up_keep:
                return 1
            if a_up > config.up_double:
                return 2
            return 0
        if a_up > config.up_double:
            return 2
        if a_up > config.up_keep:
            return 1
        return 0

    if a_p < config.down_threshold:
        if a_down is None:
            return 0
        if config.literal_branch_order:
            if a_down < config.down_keep:
                return -1
            if a_down < config.down_double:
                return -2
            return 0
        if a_down < config.down_double:
            return -2
        if a_down < config.down_keep:
            return -1
        return 0

    return 0


def initialize(
    v_target: float,
    width: int,
    height: int,
    qp: QpContext,
    table: PresetSpeedTable | None = None,
    config: ControllerConfig | None = None,
) -> ControllerState:
    """Initial preset: the table entry log-closest to the target pixel rate."""
    if not v_target > 0:
        raise ValueError(f"Target speed must be positive, got {v_target}")
    if table is None:
        table = default_table()
    preset = nearest_preset(table, fps_to_pixel_rate(v_target, width, height), qp)
    return ControllerState(
        current_preset=preset,
        table=table,
        config=config or ControllerConfig(),
        qp=qp,
    )


@dataclass
class SapsController:
    state: ControllerState
    initial_preset: int = field(init=False)
    switches: int = field(default=0, init=False)
    _steps_since_update: int = field(default=0, init=False, repr=False)

    def __post_init__(self) -> None:
        self.initial_preset = self.state.current_preset

    @property
    def preset(self) -> int:
        return self.state.current_preset

    @property
    def table(self) -> PresetSpeedTable:
        return self.state.table

    def acceleration(self, estimator: EstimatorState, p: float) -> float | None:
        """a(p) in pixel-rate units; None while the budget is exhausted or spent."""
        check_preset(p)
        budget = estimator.budget_pixel_rate()
        if budget is None:
            return None
        return budget / expected_speed(self.state.table, p, self.state.qp)

    def decide_delta(self, estimator: EstimatorState) -> int:
        status = estimator.budget_speed().status
        p = self.state.current_preset
        if status is BudgetStatus.EXHAUSTED:
            return MAX_PRESET - p
        if status is BudgetStatus.DONE or estimator.current_speed() is None:
            return 0

        a_p = self.acceleration(estimator, p)
        assert a_p is not None
        a_up = self.acceleration(estimator, p + 1) if p < MAX_PRESET else None
        a_down = self.acceleration(estimator, p - 1) if p > MIN_PRESET else None
        delta = delta_from_accelerations(self.state.config, a_p, a_up, a_down)
        return clamp_preset(p + delta) - p

    def step(self, estimator: EstimatorState) -> int:
        """Preset for the next admitted frame."""
        if estimator.current_speed() is None:
            return self.state.current_preset

        self._steps_since_update += 1
        if self._steps_since_update >= self.state.config.update_cadence:
            self._steps_since_update = 0
            self._update_table(estimator)

        delta = self.decide_delta(estimator)
        if delta:
            previous = self.state.current_preset
            self.state.current_preset = clamp_preset(previous + delta)
            self.switches += 1
            logger.debug(
                "Preset %d -> %d after %d completed frames",
                previous,
                self.state.current_preset,
                estimator.n_out,
            )
        return self.state.current_preset

    def _update_table(self, estimator: EstimatorState) -> None:
        config = self.state.config
        v_enc = estimator.current_pixel_rate()
        if config.average_mode is AverageMode.CONTRIBUTING:
            p_avg = estimator.contributing_average_preset()
        else:
            p_avg = estimator.average_preset()
        if v_enc is None or p_avg is None or v_enc <= 0:
            return
        # The table is anchored at QP 17; expected_speed re-applies the QP factor.
        v_anchor = v_enc / qp_scale(self.state.qp)
        self.state.table = update_table(self.state.table, v_anchor, p_avg, config.update_weight)


@dataclass
class FixedPresetPolicy:
    """Keeps every frame at one preset."""

    preset: int

    def __post_init__(self) -> None:
        check_preset(self.preset)

    def step(self, estimator: EstimatorState) -> int:
        return self.preset
