"""
Discrete-event model of a buffered FIFO encoder pipeline.

Up to B frames are in flight. The simulator jumps from one completion to the
next: the oldest frame's remaining work is consumed in full, and every other
frame in flight is credited 1/B of its work, capped at what it has left. In
an always-full buffer a frame is thus finished after B completion events;
while the buffer fills, the frames admitted first still have most of their
work ahead of them when they complete. The cumulative time reported at a
completion contains work on frames that have not completed yet, which is the
distortion the speed estimator has to undo. It is largest over the first
buffer.
"""

import logging
from collections import deque
from dataclasses import dataclass, field

from controller.saps import PresetPolicy
from estimation.estimator import EstimatorState

from .sequence import CostModel

logger = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


@dataclass
class InFlightFrame:
    index: int
    preset: int
    cost: float
    progress: float = 0.0


@dataclass
class PipelineState:
    buffer_size: int
    in_flight: deque[InFlightFrame] = field(default_factory=deque)
    consumed_cpu: float = 0.0

    def __post_init__(self) -> None:
        if self.buffer_size < 1:
            raise PipelineError(f"Buffer size must be at least 1, got {self.buffer_size}")

    @property
    def full(self) -> bool:
        return len(self.in_flight) >= self.buffer_size

    def admit(self, frame_idx: int, preset: int, cost: float) -> None:
        if self.full:
            raise PipelineError(f"Pipeline buffer of {self.buffer_size} frames is full")
        if cost < 0:
            raise PipelineError(f"Frame cost must be nonnegative, got {cost}")
        self.in_flight.append(InFlightFrame(frame_idx, preset, cost))

    def advance_to_next_completion(self) -> tuple[int, float]:
        """Complete the oldest frame; returns its index and the cumulative CPU time."""
        if not self.in_flight:
            raise PipelineError("Cannot advance an empty pipeline")

        oldest = self.in_flight.popleft()
        self.consumed_cpu += oldest.cost * (1.0 - oldest.progress)

        for frame in self.in_flight:
            step = min(1.0 / self.buffer_size, 1.0 - frame.progress)
            self.consumed_cpu += frame.cost * step
            frame.progress += step

        return oldest.index, self.consumed_cpu


@dataclass(frozen=True)
class CompletionRecord:
    frame: int
    preset: int
    cost: float
    n_in: int
    n_out: int
    t_cpu: float
    # sum of the costs of all completed frames
    completed_cost: float
    v_enc: float | None

    @property
    def true_speed(self) -> float:
        return self.n_out / self.completed_cost if self.completed_cost > 0 else 0.0


@dataclass
class EncodeResult:
    width: int
    height: int
    n_total: int
    t_target: float
    buffer_size: int
    presets: list[int] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    completions: list[CompletionRecord] = field(default_factory=list)
    total_cpu: float = 0.0

    @property
    def v_real(self) -> float:
        """Frames per second of CPU time over the whole run."""
        return self.n_total / self.total_cpu if self.total_cpu > 0 else 0.0

    @property
    def overrun(self) -> float:
        return self.total_cpu - self.t_target


def run_encode(
    model: CostModel,
    policy: PresetPolicy,
    estimator: EstimatorState,
    buffer_size: int,
) -> EncodeResult:
    """Closed loop: admit with the policy's presets, feed completions back to the estimator."""
    if (estimator.width, estimator.height, estimator.n_total) != (
        model.width,
        model.height,
        model.n_total,
    ):
        raise PipelineError("Estimator and sequence disagree on geometry or frame count")
    if estimator.n_in or estimator.n_out:
        raise PipelineError("Estimator must start fresh")

    pipeline = PipelineState(buffer_size)
    result = EncodeResult(
        width=model.width,
        height=model.height,
        n_total=model.n_total,
        t_target=estimator.t_target,
        buffer_size=buffer_size,
    )
    completed_cost = 0.0
    next_frame = 0

    while estimator.n_out < model.n_total:
        while next_frame < model.n_total and not pipeline.full:
            preset = policy.step(estimator)
            cost = model.frame_cost(next_frame, preset)
            pipeline.admit(next_frame, preset, cost)
            estimator.record_admission(preset)
            result.presets.append(preset)
            result.costs.append(cost)
            next_frame += 1

        frame, t_cpu = pipeline.advance_to_next_completion()
        estimator.record_completion(t_cpu)
        completed_cost += result.costs[frame]
        result.completions.append(
            CompletionRecord(
                frame=frame,
                preset=result.presets[frame],
                cost=result.costs[frame],
                n_in=estimator.n_in,
                n_out=estimator.n_out,
                t_cpu=t_cpu,
                completed_cost=completed_cost,
                v_enc=estimator.current_speed(),
            )
        )

    result.total_cpu = pipeline.consumed_cpu
    logger.debug(
        "Encoded %d frames in %.3f s CPU (target %.3f s)",
        model.n_total,
        result.total_cpu,
        result.t_target,
    )
    return result
