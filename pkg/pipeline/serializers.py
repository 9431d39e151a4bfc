from typing import Any

from rest_framework import serializers

from presets.speed_model import PRESETS
from presets.validators import validate_strictly_decreasing, validate_strictly_positive

PRESET_COLUMNS = {f"p{p}": p for p in PRESETS}


class TraceRowSerializer(serializers.Serializer):  # type: ignore[misc]
    """One CSV row of a frame trace; preset cells may be absent."""

    frame = serializers.IntegerField(min_value=0)
    width = serializers.IntegerField(min_value=1)
    height = serializers.IntegerField(min_value=1)

    def get_fields(self) -> dict[str, serializers.Field]:
        fields = super().get_fields()
        for column in PRESET_COLUMNS:
            fields[column] = serializers.FloatField(
                required=False, validators=[validate_strictly_positive]
            )
        return fields

    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        recorded = {p: attrs[c] for c, p in PRESET_COLUMNS.items() if c in attrs}
        if len(recorded) < 2:
            raise serializers.ValidationError("At least two preset times must be recorded")
        validate_strictly_decreasing([recorded[p] for p in sorted(recorded)])
        attrs["costs"] = recorded
        return attrs
