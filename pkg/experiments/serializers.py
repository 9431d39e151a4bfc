from typing import Any

from rest_framework import serializers

from controller.saps import AverageMode, ControllerConfig
from pipeline.sequence import NoiseFamily
from presets.serializers import TableFileError, load_table
from presets.speed_model import MAX_PRESET, MAX_QP, MIN_PRESET, MIN_QP, default_table
from presets.validators import validate_strictly_positive, validate_unit_interval

from .config import ClassSpec, ExperimentConfig, Mode


class ClassSpecSerializer(serializers.Serializer):  # type: ignore[misc]
    name = serializers.CharField(max_length=50)
    width = serializers.IntegerField(min_value=1)
    height = serializers.IntegerField(min_value=1)
    sequences = serializers.IntegerField(min_value=1, required=False, default=8)
    seed_base = serializers.IntegerField(min_value=0, required=False, default=0)


class ControllerConfigSerializer(serializers.Serializer):  # type: ignore[misc]
    up_threshold = serializers.FloatField(validators=[validate_strictly_positive])
    down_threshold = serializers.FloatField(validators=[validate_strictly_positive])
    up_keep = serializers.FloatField(validators=[validate_strictly_positive])
    up_double = serializers.FloatField(validators=[validate_strictly_positive])
    down_keep = serializers.FloatField(validators=[validate_strictly_positive])
    down_double = serializers.FloatField(validators=[validate_strictly_positive])
    literal_branch_order = serializers.BooleanField()
    update_weight = serializers.FloatField(validators=[validate_unit_interval])
    update_cadence = serializers.IntegerField(min_value=1)
    average_mode = serializers.ChoiceField(choices=[m.value for m in AverageMode])

    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        try:
            ControllerConfig(**{**attrs, "average_mode": AverageMode(attrs["average_mode"])})
        except ValueError as exc:
            raise serializers.ValidationError(str(exc)) from exc
        return attrs


class ExperimentConfigSerializer(serializers.Serializer):  # type: ignore[misc]
    classes = ClassSpecSerializer(many=True, allow_empty=True)
    targets = serializers.ListField(
        child=serializers.FloatField(validators=[validate_strictly_positive]),
        allow_empty=False,
    )
    qps = serializers.ListField(
        child=serializers.IntegerField(min_value=MIN_QP, max_value=MAX_QP),
        allow_empty=False,
    )
    frames = serializers.IntegerField(min_value=1)
    buffer_size = serializers.IntegerField(min_value=1)
    controller = ControllerConfigSerializer()
    mode = serializers.ChoiceField(choices=[m.value for m in Mode])
    traces = serializers.ListField(child=serializers.CharField(), required=False, default=list)
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1)
    noise_sigma = serializers.FloatField(min_value=0.0)
    noise_family = serializers.ChoiceField(choices=[f.value for f in NoiseFamily])
    gop_spike = serializers.FloatField(
        allow_null=True, required=False, default=None, validators=[validate_strictly_positive]
    )
    gop_seconds = serializers.FloatField(validators=[validate_strictly_positive])
    frame_rate = serializers.FloatField(validators=[validate_strictly_positive])
    scale_range = serializers.ListField(
        child=serializers.FloatField(validators=[validate_strictly_positive]),
        min_length=2,
        max_length=2,
    )
    table_path = serializers.CharField(allow_null=True, required=False, default=None)
    workers = serializers.IntegerField(min_value=1)
    frame_logs = serializers.BooleanField(required=False, default=False)
    validation_frames = serializers.IntegerField(min_value=1)
    validation_preset = serializers.IntegerField(min_value=MIN_PRESET, max_value=MAX_PRESET)
    validation_class = serializers.CharField(allow_null=True, required=False, default=None)

    def validate_scale_range(self, value: list[float]) -> list[float]:
        if value[0] > value[1]:
            raise serializers.ValidationError("Lower scale bound exceeds the upper bound.")
        return value

    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        if attrs["mode"] == Mode.TRACE.value:
            if not attrs.get("traces"):
                raise serializers.ValidationError({"traces": "Trace mode needs trace files."})
        elif not attrs["classes"]:
            raise serializers.ValidationError({"classes": "At least one class is required."})
        names = [c["name"] for c in attrs["classes"]]
        if len(set(names)) != len(names):
            raise serializers.ValidationError({"classes": "Class names must be unique."})
        if attrs.get("validation_class") and attrs["validation_class"] not in names:
            raise serializers.ValidationError(
                {"validation_class": f"No class named {attrs['validation_class']!r}."}
            )
        return attrs

    def create(self, validated_data: dict[str, Any]) -> ExperimentConfig:
        table_path = validated_data["table_path"]
        try:
            table = load_table(table_path) if table_path else default_table()
        except TableFileError as exc:
            raise serializers.ValidationError({"table_path": str(exc)}) from exc

        controller = dict(validated_data["controller"])
        controller["average_mode"] = AverageMode(controller["average_mode"])
        return ExperimentConfig(
            classes=tuple(ClassSpec(**c) for c in validated_data["classes"]),
            targets=tuple(validated_data["targets"]),
            qps=tuple(validated_data["qps"]),
            frames=validated_data["frames"],
            buffer_size=validated_data["buffer_size"],
            controller=ControllerConfig(**controller),
            mode=Mode(validated_data["mode"]),
            traces=tuple(validated_data["traces"]),
            seed=validated_data["seed"],
            noise_sigma=validated_data["noise_sigma"],
            noise_family=NoiseFamily(validated_data["noise_family"]),
            gop_spike=validated_data["gop_spike"],
            gop_seconds=validated_data["gop_seconds"],
            frame_rate=validated_data["frame_rate"],
            scale_range=(validated_data["scale_range"][0], validated_data["scale_range"][1]),
            table=table,
            table_path=table_path,
            workers=validated_data["workers"],
            frame_logs=validated_data["frame_logs"],
            validation_frames=validated_data["validation_frames"],
            validation_preset=validated_data["validation_preset"],
            validation_class=validated_data["validation_class"],
        )


# -- report rendering ---------------------------------------------------------


class CellSerializer(serializers.Serializer):  # type: ignore[misc]
    class_name = serializers.CharField()
    width = serializers.IntegerField()
    height = serializers.IntegerField()
    target_fps = serializers.FloatField()
    target_kpps = serializers.FloatField()
    reachable = serializers.BooleanField()
    epsilon_v = serializers.FloatField(allow_null=True)
    runs = serializers.IntegerField()
    failed_runs = serializers.IntegerField()


class ClassSummarySerializer(serializers.Serializer):  # type: ignore[misc]
    name = serializers.CharField()
    width = serializers.IntegerField()
    height = serializers.IntegerField()
    average = serializers.FloatField(allow_null=True)
    reachable_cells = serializers.IntegerField()


class RunSerializer(serializers.Serializer):  # type: ignore[misc]
    class_name = serializers.CharField()
    sequence = serializers.IntegerField()
    qp = serializers.IntegerField()
    target_fps = serializers.FloatField()
    seed = serializers.IntegerField()
    sequence_scale = serializers.FloatField()
    initial_preset = serializers.IntegerField(allow_null=True)
    v_real = serializers.FloatField(allow_null=True)
    t_target = serializers.FloatField()
    total_cpu = serializers.FloatField(allow_null=True)
    relative_error = serializers.FloatField(allow_null=True)
    reachable = serializers.BooleanField()
    switches = serializers.IntegerField()
    table_scale = serializers.FloatField(allow_null=True)
    error = serializers.CharField(allow_null=True)
    frame_log = serializers.JSONField(required=False)

    def to_representation(self, instance: Any) -> dict[str, Any]:
        data: dict[str, Any] = super().to_representation(instance)
        if data.get("frame_log") is None:
            data.pop("frame_log", None)
        return data


class ReportSerializer(serializers.Serializer):  # type: ignore[misc]
    schema_version = serializers.IntegerField()
    kind = serializers.CharField()
    config = serializers.JSONField()
    cells = CellSerializer(many=True)
    classes = ClassSummarySerializer(many=True)
    overall_cell_mean = serializers.FloatField(allow_null=True)
    overall_run_mean = serializers.FloatField(allow_null=True)
    runs = RunSerializer(many=True)


class SeriesPointSerializer(serializers.Serializer):  # type: ignore[misc]
    completed = serializers.IntegerField()
    estimated_fps = serializers.FloatField(allow_null=True)
    actual_fps = serializers.FloatField()
    running_fps = serializers.FloatField()
    ratio = serializers.FloatField(allow_null=True)
    buffer_boundary = serializers.BooleanField()


class EstimatorSeriesSerializer(serializers.Serializer):  # type: ignore[misc]
    schema_version = serializers.IntegerField()
    kind = serializers.CharField()
    config = serializers.JSONField()
    class_name = serializers.CharField()
    preset = serializers.IntegerField()
    buffer_size = serializers.IntegerField()
    points = SeriesPointSerializer(many=True)
