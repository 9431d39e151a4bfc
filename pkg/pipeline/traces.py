"""
Replay of measured per-frame encoding times.

Trace CSV: header `frame,width,height,p1,...,p12` where any preset column
may be missing; values are CPU seconds. Presets absent from a row are filled
geometrically from the nearest recorded presets (log-linear extrapolation
outside the recorded range).
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from presets.speed_model import QpContext, check_preset

from .serializers import PRESET_COLUMNS, TraceRowSerializer

REQUIRED_COLUMNS = ("frame", "width", "height")


class TraceError(ValueError):
    def __init__(self, path: Path | str, row: int | None, message: str) -> None:
        self.path = str(path)
        self.row = row
        where = f"{path}, row {row}" if row is not None else str(path)
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class TraceRow:
    frame: int
    width: int
    height: int
    # preset -> recorded CPU seconds
    costs: dict[int, float]


@dataclass(frozen=True)
class FrameTrace:
    rows: tuple[TraceRow, ...]
    source: str = ""

    @property
    def width(self) -> int:
        return self.rows[0].width

    @property
    def height(self) -> int:
        return self.rows[0].height

    def __len__(self) -> int:
        return len(self.rows)


def load_trace(path: str | Path) -> FrameTrace:
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            header = reader.fieldnames or []
            missing = [c for c in REQUIRED_COLUMNS if c not in header]
            if missing:
                raise TraceError(path, 1, f"missing columns {missing}")
            unknown = [c for c in header if c not in REQUIRED_COLUMNS and c not in PRESET_COLUMNS]
            if unknown:
                raise TraceError(path, 1, f"unknown columns {unknown}")

            rows: list[TraceRow] = []
            # data starts on line 2, after the header
            for line, raw in enumerate(reader, start=2):
                if None in raw:
                    raise TraceError(path, line, "more cells than header columns")
                data = {k: v for k, v in raw.items() if v not in (None, "")}
                serializer = TraceRowSerializer(data=data)
                if not serializer.is_valid():
                    raise TraceError(path, line, str(serializer.errors))
                attrs = serializer.validated_data
                row = TraceRow(attrs["frame"], attrs["width"], attrs["height"], attrs["costs"])
                if row.frame != len(rows):
                    raise TraceError(path, line, f"expected frame {len(rows)}, got {row.frame}")
                if rows and (row.width, row.height) != (rows[0].width, rows[0].height):
                    raise TraceError(path, line, "frame geometry changes within the trace")
                rows.append(row)
    except csv.Error as exc:
        raise TraceError(path, None, f"malformed CSV: {exc}") from exc
    except OSError as exc:
        raise TraceError(path, None, str(exc)) from exc

    if not rows:
        raise TraceError(path, None, "trace has no frames")
    return FrameTrace(tuple(rows), source=str(path))


def replay_cost(trace: FrameTrace, frame_idx: int, preset: int) -> float:
    check_preset(preset)
    if not 0 <= frame_idx < len(trace):
        raise IndexError(f"Frame {frame_idx} is outside the trace of {len(trace)} frames")
    costs = trace.rows[frame_idx].costs
    if preset in costs:
        return costs[preset]

    recorded = sorted(costs)
    log_costs = [math.log(costs[p]) for p in recorded]
    if recorded[0] < preset < recorded[-1]:
        return float(np.exp(np.interp(preset, recorded, log_costs)))

    if preset < recorded[0]:
        (p0, p1), (c0, c1) = recorded[:2], log_costs[:2]
    else:
        (p0, p1), (c0, c1) = recorded[-2:], log_costs[-2:]
    slope = (c1 - c0) / (p1 - p0)
    return math.exp(c0 + slope * (preset - p0))


@dataclass(frozen=True)
class TraceSequence:
    """A trace behind the same cost interface as SequenceModel."""

    trace: FrameTrace
    qp: QpContext

    @property
    def width(self) -> int:
        return self.trace.width

    @property
    def height(self) -> int:
        return self.trace.height

    @property
    def n_total(self) -> int:
        return len(self.trace)

    def frame_cost(self, frame_idx: int, preset: int) -> float:
        return replay_cost(self.trace, frame_idx, preset)
