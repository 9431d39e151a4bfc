from django.apps import AppConfig


class PipelineConfig(AppConfig):  # type: ignore[misc]
    name = "pipeline"
