import json
from pathlib import Path
from typing import Any

from rest_framework import serializers

from .speed_model import PRESETS, PresetSpeedTable
from .validators import validate_strictly_increasing, validate_strictly_positive


class PresetTableSerializer(serializers.Serializer):  # type: ignore[misc]
    """Table override file: `{"1": kpps, ..., "12": kpps}`, all keys required."""

    def get_fields(self) -> dict[str, serializers.Field]:
        return {
            str(p): serializers.FloatField(validators=[validate_strictly_positive])
            for p in PRESETS
        }

    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError(f"Unknown presets: {', '.join(unknown)}")
        validate_strictly_increasing([attrs[str(p)] for p in PRESETS])
        return attrs

    def create(self, validated_data: dict[str, Any]) -> PresetSpeedTable:
        return PresetSpeedTable.from_mapping({p: validated_data[str(p)] for p in PRESETS})

    def to_representation(self, instance: PresetSpeedTable) -> dict[str, float]:
        return {str(p): rate for p, rate in instance.as_dict().items()}


class TableFileError(ValueError):
    pass


def load_table(path: str | Path) -> PresetSpeedTable:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise TableFileError(f"{path}: {exc}") from exc

    serializer = PresetTableSerializer(data=data)
    if not serializer.is_valid():
        raise TableFileError(f"{path}: {serializer.errors}")
    table: PresetSpeedTable = serializer.save()
    return table
