"""
Experiment grids over classes, sequences, QPs and target speeds.

Every run is self-contained and seeded from (grid seed, class, sequence), so
the same sequence is reused across QPs and targets and the report does not
depend on run order or on how many worker processes executed the grid.
"""

import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from controller.saps import FixedPresetPolicy, SapsController, initialize
from estimation.estimator import EstimatorState, fps_to_pixel_rate
from pipeline.sequence import CostModel, NoiseModel, SequenceModel, keyframe_period
from pipeline.simulator import EncodeResult, run_encode
from pipeline.traces import FrameTrace, TraceSequence, load_trace
from presets.speed_model import (
    MAX_PRESET,
    MIN_PRESET,
    PresetSpeedTable,
    QpContext,
    expected_speed,
)

from .config import ClassSpec, ExperimentConfig, Mode

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def speed_error(runs: Sequence[tuple[float, float]]) -> float:
    """Mean relative deviation of achieved from target speed over (v_real, v_target) pairs."""
    if not runs:
        raise ValueError("Speed error needs at least one run")
    real = np.array([r for r, _ in runs], dtype=np.float64)
    target = np.array([t for _, t in runs], dtype=np.float64)
    if np.any(target <= 0):
        raise ValueError("Target speeds must be positive")
    return float(np.mean(np.abs(real - target) / target))


def reachability(
    spec: ClassSpec, target: float, table: PresetSpeedTable, qp: QpContext
) -> bool:
    """Whether the target lies between the predicted speeds of presets 1 and 12."""
    rate = fps_to_pixel_rate(target, spec.width, spec.height)
    slowest = expected_speed(table, MIN_PRESET, qp)
    fastest = expected_speed(table, MAX_PRESET, qp)
    return slowest <= rate <= fastest


def cell_reachable(
    spec: ClassSpec, target: float, table: PresetSpeedTable, qps: Iterable[int]
) -> bool:
    return all(reachability(spec, target, table, QpContext(qp)) for qp in qps)


@dataclass(frozen=True)
class RunSpec:
    class_index: int
    class_name: str
    width: int
    height: int
    sequence: int
    qp: int
    target_fps: float
    seed: int
    sequence_scale: float
    trace_path: str | None = None

    @property
    def key(self) -> tuple[int, int, int, float]:
        return (self.class_index, self.sequence, self.qp, -self.target_fps)


@dataclass
class RunOutcome:
    class_name: str
    sequence: int
    qp: int
    target_fps: float
    seed: int
    sequence_scale: float
    t_target: float
    reachable: bool
    initial_preset: int | None = None
    v_real: float | None = None
    total_cpu: float | None = None
    relative_error: float | None = None
    switches: int = 0
    table_scale: float | None = None
    error: str | None = None
    frame_log: list[dict[str, Any]] | None = None


@dataclass
class CellResult:
    class_name: str
    width: int
    height: int
    target_fps: float
    target_kpps: float
    reachable: bool
    epsilon_v: float | None
    runs: int
    failed_runs: int


@dataclass
class ClassSummary:
    name: str
    width: int
    height: int
    average: float | None
    reachable_cells: int


@dataclass
class Report:
    config: dict[str, Any]
    cells: list[CellResult]
    classes: list[ClassSummary]
    overall_cell_mean: float | None
    overall_run_mean: float | None
    runs: list[RunOutcome] = field(default_factory=list)
    kind: str = "grid"
    schema_version: int = SCHEMA_VERSION

    def cell(self, class_name: str, target_fps: float) -> CellResult:
        for cell in self.cells:
            if cell.class_name == class_name and cell.target_fps == target_fps:
                return cell
        raise KeyError((class_name, target_fps))


# -- planning -----------------------------------------------------------------


def sequence_seed(
    config: ExperimentConfig, spec: ClassSpec, class_index: int, sequence: int
) -> int:
    seq = np.random.SeedSequence([config.seed, spec.seed_base, class_index, sequence])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def sequence_scale(config: ExperimentConfig, seed: int) -> float:
    """Per-sequence deviation from the reference curve, log-uniform in the scale range."""
    low, high = config.scale_range
    if low == high:
        return low
    rng = np.random.default_rng([seed, 1])
    return float(np.exp(rng.uniform(np.log(low), np.log(high))))


@lru_cache(maxsize=64)
def cached_trace(path: str) -> FrameTrace:
    return load_trace(path)


def trace_classes(config: ExperimentConfig) -> list[tuple[ClassSpec, list[str]]]:
    """One class per distinct trace geometry, in first-seen order."""
    grouped: dict[tuple[int, int], list[str]] = {}
    for path in config.traces:
        trace = cached_trace(path)
        grouped.setdefault((trace.width, trace.height), []).append(path)
    return [
        (ClassSpec(f"{w}x{h}", w, h, sequences=len(paths)), paths)
        for (w, h), paths in grouped.items()
    ]


def run_qps(config: ExperimentConfig) -> tuple[int, ...]:
    """
    QPs the grid is crossed with. A trace is recorded at one QP, so replay
    uses only the first configured QP.
    """
    if config.mode is Mode.TRACE:
        return config.qps[:1]
    return config.qps


def plan_runs(config: ExperimentConfig) -> list[RunSpec]:
    runs: list[RunSpec] = []
    if config.mode is Mode.TRACE:
        for class_index, (spec, paths) in enumerate(trace_classes(config)):
            for sequence, path in enumerate(paths):
                for qp in run_qps(config):
                    for target in config.targets:
                        runs.append(
                            RunSpec(
                                class_index=class_index,
                                class_name=spec.name,
                                width=spec.width,
                                height=spec.height,
                                sequence=sequence,
                                qp=qp,
                                target_fps=target,
                                seed=0,
                                sequence_scale=1.0,
                                trace_path=path,
                            )
                        )
        return runs

    for class_index, spec in enumerate(config.classes):
        for sequence in range(spec.sequences):
            seed = sequence_seed(config, spec, class_index, sequence)
            scale = sequence_scale(config, seed)
            for qp in config.qps:
                for target in config.targets:
                    runs.append(
                        RunSpec(
                            class_index=class_index,
                            class_name=spec.name,
                            width=spec.width,
                            height=spec.height,
                            sequence=sequence,
                            qp=qp,
                            target_fps=target,
                            seed=seed,
                            sequence_scale=scale,
                        )
                    )
    return runs


def build_sequence(config: ExperimentConfig, run: RunSpec, frames: int | None = None) -> CostModel:
    qp = QpContext(run.qp)
    if run.trace_path is not None:
        return TraceSequence(cached_trace(run.trace_path), qp)
    return SequenceModel(
        width=run.width,
        height=run.height,
        n_total=frames or config.frames,
        qp=qp,
        true_speed_curve=config.table,
        sequence_scale=run.sequence_scale,
        noise=NoiseModel(config.noise_sigma, run.seed, config.noise_family),
        gop_spike=config.gop_spike,
        gop_period=keyframe_period(config.gop_seconds, config.frame_rate),
    )


# -- execution ----------------------------------------------------------------


def frame_log(result: EncodeResult) -> list[dict[str, Any]]:
    return [
        {
            "frame": c.frame,
            "preset": c.preset,
            "cost": c.cost,
            "n_in": c.n_in,
            "n_out": c.n_out,
            "t_cpu": c.t_cpu,
            "v_enc": c.v_enc,
            "true_speed": c.true_speed,
        }
        for c in result.completions
    ]


def execute_run(config: ExperimentConfig, run: RunSpec) -> RunOutcome:
    """One closed-loop encode. Failures are recorded on the outcome, not raised."""
    model = build_sequence(config, run)
    t_target = model.n_total / run.target_fps
    spec = ClassSpec(run.class_name, run.width, run.height)
    reachable = reachability(spec, run.target_fps, config.table, QpContext(run.qp))
    outcome = RunOutcome(
        class_name=run.class_name,
        sequence=run.sequence,
        qp=run.qp,
        target_fps=run.target_fps,
        seed=run.seed,
        sequence_scale=run.sequence_scale,
        t_target=t_target,
        reachable=reachable,
    )
    try:
        state = initialize(
            run.target_fps,
            run.width,
            run.height,
            QpContext(run.qp),
            config.table,
            config.controller,
        )
        controller = SapsController(state)
        estimator = EstimatorState.for_sequence(
            model.n_total, t_target, model.width, model.height, config.buffer_size
        )
        result = run_encode(model, controller, estimator, config.buffer_size)
    except Exception as exc:
        logger.warning("Run %s failed: %s", run, exc)
        outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome

    outcome.initial_preset = controller.initial_preset
    outcome.v_real = result.v_real
    outcome.total_cpu = result.total_cpu
    outcome.relative_error = abs(result.v_real - run.target_fps) / run.target_fps
    outcome.switches = controller.switches
    outcome.table_scale = controller.table.scale_relative_to(config.table)
    if config.frame_logs:
        outcome.frame_log = frame_log(result)
    return outcome


def execute_runs(config: ExperimentConfig, runs: Sequence[RunSpec]) -> list[RunOutcome]:
    if config.workers > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(execute_run, [config] * len(runs), runs, chunksize=16))
    else:
        outcomes = [execute_run(config, run) for run in runs]
    order = sorted(range(len(runs)), key=lambda i: runs[i].key)
    return [outcomes[i] for i in order]


# -- aggregation --------------------------------------------------------------


def aggregate(
    config: ExperimentConfig,
    classes: Sequence[ClassSpec],
    outcomes: Sequence[RunOutcome],
    kind: str,
) -> Report:
    by_cell: dict[tuple[str, float], list[RunOutcome]] = defaultdict(list)
    for outcome in outcomes:
        by_cell[(outcome.class_name, outcome.target_fps)].append(outcome)

    cells: list[CellResult] = []
    summaries: list[ClassSummary] = []
    included_runs: list[tuple[float, float]] = []
    for spec in classes:
        class_errors: list[float] = []
        for target in config.targets:
            runs = by_cell.get((spec.name, target), [])
            ok = [(r.v_real, r.target_fps) for r in runs if r.v_real is not None]
            reachable = cell_reachable(spec, target, config.table, run_qps(config))
            epsilon = speed_error(ok) if ok else None
            cells.append(
                CellResult(
                    class_name=spec.name,
                    width=spec.width,
                    height=spec.height,
                    target_fps=target,
                    target_kpps=fps_to_pixel_rate(target, spec.width, spec.height),
                    reachable=reachable,
                    epsilon_v=epsilon,
                    runs=len(ok),
                    failed_runs=len(runs) - len(ok),
                )
            )
            if not reachable:
                logger.info("%s at %g fps is unreachable; excluded", spec.label, target)
                continue
            if epsilon is not None:
                class_errors.append(epsilon)
                included_runs.extend(ok)
        summaries.append(
            ClassSummary(
                name=spec.name,
                width=spec.width,
                height=spec.height,
                average=float(np.mean(class_errors)) if class_errors else None,
                reachable_cells=len(class_errors),
            )
        )

    included = [c.epsilon_v for c in cells if c.reachable and c.epsilon_v is not None]
    return Report(
        config=config.echo(),
        cells=cells,
        classes=summaries,
        overall_cell_mean=float(np.mean(included)) if included else None,
        overall_run_mean=speed_error(included_runs) if included_runs else None,
        runs=list(outcomes),
        kind=kind,
    )


def run_grid(config: ExperimentConfig) -> Report:
    runs = plan_runs(config)
    if config.mode is Mode.TRACE:
        classes = [spec for spec, _ in trace_classes(config)]
    else:
        classes = list(config.classes)
    logger.info("Running %d encodes over %d classes", len(runs), len(classes))
    outcomes = execute_runs(config, runs)
    failed = sum(1 for o in outcomes if o.error is not None)
    if failed:
        logger.warning("%d of %d runs failed; see the report", failed, len(outcomes))
    report = aggregate(config, classes, outcomes, kind=config.mode.value)
    logger.info("Overall speed error over reachable cells: %s", report.overall_cell_mean)
    return report


# -- estimator validation -----------------------------------------------------


@dataclass(frozen=True)
class SeriesPoint:
    completed: int
    estimated_fps: float | None
    actual_fps: float
    running_fps: float
    ratio: float | None
    buffer_boundary: bool


@dataclass
class EstimatorSeries:
    config: dict[str, Any]
    class_name: str
    preset: int
    buffer_size: int
    points: list[SeriesPoint]
    kind: str = "estimator-validation"
    schema_version: int = SCHEMA_VERSION


def validate_estimator(config: ExperimentConfig) -> EstimatorSeries:
    """
    Constant-preset encode comparing the running speed estimate with the
    actual average speed of the whole run, one point per completed frame.
    """
    spec = config.class_named(config.validation_class)
    class_index = config.classes.index(spec)
    seed = sequence_seed(config, spec, class_index, 0)
    run = RunSpec(
        class_index=class_index,
        class_name=spec.name,
        width=spec.width,
        height=spec.height,
        sequence=0,
        qp=config.qps[0],
        target_fps=1.0,
        seed=seed,
        sequence_scale=sequence_scale(config, seed),
    )
    model = build_sequence(config, run, frames=config.validation_frames)
    estimator = EstimatorState.for_sequence(
        model.n_total, float(model.n_total), model.width, model.height, config.buffer_size
    )
    result = run_encode(
        model, FixedPresetPolicy(config.validation_preset), estimator, config.buffer_size
    )

    actual = result.v_real
    points = [
        SeriesPoint(
            completed=c.n_out,
            estimated_fps=c.v_enc,
            actual_fps=actual,
            running_fps=c.true_speed,
            ratio=c.v_enc / actual if c.v_enc is not None else None,
            buffer_boundary=c.n_out % config.buffer_size == 0,
        )
        for c in result.completions
    ]
    return EstimatorSeries(
        config=config.echo(),
        class_name=spec.name,
        preset=config.validation_preset,
        buffer_size=config.buffer_size,
        points=points,
    )
