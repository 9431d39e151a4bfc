from django.apps import AppConfig


class PresetsConfig(AppConfig):  # type: ignore[misc]
    name = "presets"
    verbose_name = "Preset-speed model"
