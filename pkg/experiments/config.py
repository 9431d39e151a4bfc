"""
Experiment configuration.

Defaults come from `settings.SAPS`; a JSON file whose keys mirror the
`ExperimentConfig` field names overrides them, and CLI flags override the
file. The merged data is validated by `ExperimentConfigSerializer`.
"""

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from django.conf import settings
from rest_framework.exceptions import ValidationError

from controller.saps import ControllerConfig
from pipeline.sequence import NoiseFamily
from presets.speed_model import PresetSpeedTable, default_table, table_to_dict


class ConfigError(ValueError):
    pass


class Mode(enum.Enum):
    SYNTHETIC = "synthetic"
    TRACE = "trace"


@dataclass(frozen=True)
class ClassSpec:
    name: str
    width: int
    height: int
    sequences: int = 8
    seed_base: int = 0

    @property
    def label(self) -> str:
        return f"{self.name} ({self.width}x{self.height})"


@dataclass(frozen=True)
class ExperimentConfig:
    classes: tuple[ClassSpec, ...]
    targets: tuple[float, ...]
    qps: tuple[int, ...]
    frames: int = 300
    buffer_size: int = 16
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    mode: Mode = Mode.SYNTHETIC
    traces: tuple[str, ...] = ()
    seed: int = 0
    noise_sigma: float = 0.2
    noise_family: NoiseFamily = NoiseFamily.LOGNORMAL
    gop_spike: float | None = 3.0
    gop_seconds: float = 10.0
    frame_rate: float = 30.0
    scale_range: tuple[float, float] = (0.5, 2.0)
    table: PresetSpeedTable = field(default_factory=default_table)
    table_path: str | None = None
    workers: int = 1
    frame_logs: bool = False
    validation_frames: int = 160
    validation_preset: int = 8
    validation_class: str | None = None

    def __post_init__(self) -> None:
        if not self.classes and self.mode is Mode.SYNTHETIC:
            raise ConfigError("At least one class is required")
        if not self.targets or not self.qps:
            raise ConfigError("At least one target and one QP are required")

    def class_named(self, name: str | None) -> ClassSpec:
        if name is None:
            return self.classes[0]
        for spec in self.classes:
            if spec.name == name:
                return spec
        raise ConfigError(f"No class named {name!r}")

    def echo(self) -> dict[str, Any]:
        """JSON-ready copy of every setting that affects results, for the report."""
        controller = asdict(self.controller)
        controller["average_mode"] = self.controller.average_mode.value
        return {
            "classes": [asdict(c) for c in self.classes],
            "targets": list(self.targets),
            "qps": list(self.qps),
            "frames": self.frames,
            "buffer_size": self.buffer_size,
            "controller": controller,
            "mode": self.mode.value,
            "traces": list(self.traces),
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "noise_family": self.noise_family.value,
            "gop_spike": self.gop_spike,
            "gop_seconds": self.gop_seconds,
            "frame_rate": self.frame_rate,
            "scale_range": list(self.scale_range),
            "table": table_to_dict(self.table),
            "table_path": self.table_path,
            "frame_logs": self.frame_logs,
            "validation_frames": self.validation_frames,
            "validation_preset": self.validation_preset,
            "validation_class": self.validation_class,
        }


def default_config_data() -> dict[str, Any]:
    saps = settings.SAPS
    return {
        "classes": [
            {**c, "sequences": saps["SEQUENCES_PER_CLASS"]} for c in saps["CLASSES"]
        ],
        "targets": list(saps["TARGETS"]),
        "qps": list(saps["QPS"]),
        "frames": saps["FRAMES"],
        "buffer_size": saps["BUFFER_SIZE"],
        "controller": {
            "up_threshold": saps["UP_THRESHOLD"],
            "down_threshold": saps["DOWN_THRESHOLD"],
            "up_keep": saps["UP_KEEP"],
            "up_double": saps["UP_DOUBLE"],
            "down_keep": saps["DOWN_KEEP"],
            "down_double": saps["DOWN_DOUBLE"],
            "literal_branch_order": saps["LITERAL_BRANCH_ORDER"],
            "update_weight": saps["UPDATE_WEIGHT"],
            "update_cadence": saps["UPDATE_CADENCE"],
            "average_mode": saps.get("AVERAGE_MODE", "contributing"),
        },
        "mode": "synthetic",
        "traces": [],
        "seed": saps["SEED"],
        "noise_sigma": saps["NOISE_SIGMA"],
        "noise_family": saps.get("NOISE_FAMILY", "lognormal"),
        "gop_spike": saps["GOP_SPIKE"],
        "gop_seconds": saps["GOP_SECONDS"],
        "frame_rate": saps["FRAME_RATE"],
        "scale_range": list(saps["SCALE_RANGE"]),
        "table_path": saps["TABLE_PATH"],
        "workers": saps["WORKERS"],
        "frame_logs": False,
        "validation_frames": saps["VALIDATION_FRAMES"],
        "validation_preset": saps["VALIDATION_PRESET"],
        "validation_class": None,
    }


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object at the top level")
    return data


def merge_config_data(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if key == "controller" and isinstance(value, dict):
            merged["controller"] = {**base.get("controller", {}), **value}
        else:
            merged[key] = value
    return merged


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    # imported here: the serializer module imports this one
    from .serializers import ExperimentConfigSerializer

    data = default_config_data()
    if path is not None:
        data = merge_config_data(data, read_config_file(path))
    if overrides:
        data = merge_config_data(data, overrides)

    serializer = ExperimentConfigSerializer(data=data)
    where = f"{path}: " if path is not None else ""
    if not serializer.is_valid():
        raise ConfigError(f"{where}invalid configuration: {serializer.errors}")
    try:
        config: ExperimentConfig = serializer.save()
    except ValidationError as exc:
        raise ConfigError(f"{where}invalid configuration: {exc.detail}") from exc
    return config
