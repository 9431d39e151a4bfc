from django.apps import AppConfig


class EstimationConfig(AppConfig):  # type: ignore[misc]
    name = "estimation"
