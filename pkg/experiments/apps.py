from django.apps import AppConfig


class ExperimentsConfig(AppConfig):  # type: ignore[misc]
    name = "experiments"
