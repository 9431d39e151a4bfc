"""
Encoding-speed estimate under pipelined encoding.

The cumulative CPU time reported when a frame completes also contains work
spent on the frames still in flight, so the number of frames that time
accounts for is approximated as the mean of admitted and completed frames.
From that the estimator derives the current speed and the speed still
needed on the remaining frames to land on the time target.
"""

import enum
from collections import deque
from dataclasses import dataclass, field, replace

from presets.speed_model import MAX_PRESET, MIN_PRESET


class EstimatorContractError(ValueError):
    pass


class BudgetStatus(enum.Enum):
    AVAILABLE = "available"
    EXHAUSTED = "exhausted"
    DONE = "done"


@dataclass(frozen=True)
class Budget:
    status: BudgetStatus
    fps: float | None = None

    @property
    def available(self) -> bool:
        return self.status is BudgetStatus.AVAILABLE


def fps_to_pixel_rate(v: float, width: int, height: int) -> float:
    """Frames per second to kilopixels per second."""
    if v < 0 or width < 0 or height < 0:
        raise ValueError("Speed and frame dimensions must be nonnegative")
    return width * height * v / 1000.0


def pixel_rate_to_fps(v: float, width: int, height: int) -> float:
    area = width * height
    if area <= 0:
        raise ValueError(f"Frame area must be positive, got {width}x{height}")
    return v * 1000.0 / area


@dataclass
class EstimatorState:
    n_total: int
    t_target: float
    width: int
    height: int
    n_in: int = 0
    n_out: int = 0
    t_cpu: float = 0.0
    preset_sum: int = 0
    completed_preset_sum: int = 0
    buffer_size: int | None = None
    in_flight_presets: deque[int] = field(default_factory=deque, repr=False)

    def __post_init__(self) -> None:
        if self.n_total < 0 or self.t_target < 0:
            raise EstimatorContractError("Frame count and time target must be nonnegative")
        if not 0 <= self.n_out <= self.n_in <= self.n_total:
            raise EstimatorContractError(
                f"Counters violate 0 <= n_out <= n_in <= n_total "
                f"({self.n_out}, {self.n_in}, {self.n_total})"
            )
        if self.t_cpu < 0:
            raise EstimatorContractError("Accumulated CPU time must be nonnegative")

    @classmethod
    def for_sequence(
        cls,
        n_total: int,
        t_target: float,
        width: int,
        height: int,
        buffer_size: int | None = None,
    ) -> "EstimatorState":
        return cls(
            n_total=n_total,
            t_target=t_target,
            width=width,
            height=height,
            buffer_size=buffer_size,
        )

    def snapshot(self) -> "EstimatorState":
        return replace(self, in_flight_presets=deque(self.in_flight_presets))

    # -- observations -------------------------------------------------------

    def record_admission(self, preset: int) -> None:
        if self.n_in >= self.n_total:
            raise EstimatorContractError("All frames of the sequence were already admitted")
        if self.buffer_size is not None and self.n_in - self.n_out >= self.buffer_size:
            raise EstimatorContractError(
                f"Admission would exceed the pipeline buffer of {self.buffer_size} frames"
            )
        self.n_in += 1
        self.preset_sum += preset
        self.in_flight_presets.append(preset)

    def record_completion(self, cumulative_t_cpu: float) -> None:
        if self.n_out >= self.n_in:
            raise EstimatorContractError("No admitted frame is waiting for completion")
        if cumulative_t_cpu < self.t_cpu:
            raise EstimatorContractError(
                f"CPU time went backwards: {cumulative_t_cpu} after {self.t_cpu}"
            )
        self.n_out += 1
        self.t_cpu = cumulative_t_cpu
        if self.in_flight_presets:
            self.completed_preset_sum += self.in_flight_presets.popleft()

    # -- estimates ----------------------------------------------------------

    def contributing_frames(self) -> float:
        return (self.n_out + self.n_in) / 2.0

    def current_speed(self) -> float | None:
        """Estimated speed in fps; None until the first frame has completed."""
        if self.n_out < 1 or self.t_cpu <= 0:
            return None
        return self.contributing_frames() / self.t_cpu

    def budget_speed(self) -> Budget:
        """Speed in fps the remaining frames need to finish on `t_target`."""
        n_enc = self.contributing_frames()
        if n_enc >= self.n_total:
            return Budget(BudgetStatus.DONE)
        if self.t_cpu >= self.t_target:
            return Budget(BudgetStatus.EXHAUSTED)
        return Budget(
            BudgetStatus.AVAILABLE, (self.n_total - n_enc) / (self.t_target - self.t_cpu)
        )

    def current_pixel_rate(self) -> float | None:
        speed = self.current_speed()
        if speed is None:
            return None
        return fps_to_pixel_rate(speed, self.width, self.height)

    def budget_pixel_rate(self) -> float | None:
        budget = self.budget_speed()
        if budget.fps is None:
            return None
        return fps_to_pixel_rate(budget.fps, self.width, self.height)

    def average_preset(self) -> float | None:
        """
        Mean preset of the admitted frames, divided by the contributing-frame
        count and clamped into the controllable range; None before any
        admission.
        """
        if self.n_in == 0:
            return None
        p_avg = self.preset_sum / self.contributing_frames()
        return min(max(p_avg, float(MIN_PRESET)), float(MAX_PRESET))

    def contributing_average_preset(self) -> float | None:
        """
        Mean preset weighted the way the contributing-frame count weights
        frames: completed frames count once, frames in flight count half.
        """
        if self.n_in == 0:
            return None
        in_flight_sum = self.preset_sum - self.completed_preset_sum
        p_avg = (self.completed_preset_sum + 0.5 * in_flight_sum) / self.contributing_frames()
        return min(max(p_avg, float(MIN_PRESET)), float(MAX_PRESET))
