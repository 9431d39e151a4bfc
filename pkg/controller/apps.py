from django.apps import AppConfig


class ControllerAppConfig(AppConfig):  # type: ignore[misc]
    name = "controller"
