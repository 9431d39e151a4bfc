"""
Django settings for the sapsim project.

sapsim has no database and no HTTP surface: Django provides the settings
layer, logging configuration, the `saps` management command and the test
runner. Experiment defaults live in the `SAPS` dict below; a JSON config
file and CLI flags override them (see experiments/config.py).
"""

from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing here is signed or served.
SECRET_KEY = "sapsim-local-only-not-a-secret"

DEBUG = False

ALLOWED_HOSTS: list[str] = []


# Application definition

INSTALLED_APPS = [
    "rest_framework",
    "presets",
    "estimation",
    "controller",
    "pipeline",
    "experiments",
]

DATABASES: dict[str, dict[str, object]] = {}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

TIME_ZONE = "UTC"

USE_TZ = True


# Experiment defaults. Keys mirror ExperimentConfig / ControllerConfig fields.
SAPS = {
    # pipeline
    "BUFFER_SIZE": 16,
    "FRAMES": 300,
    "NOISE_SIGMA": 0.2,
    "GOP_SPIKE": 3.0,
    "GOP_SECONDS": 10.0,
    "FRAME_RATE": 30.0,
    "SCALE_RANGE": [0.5, 2.0],
    # controller
    "UPDATE_WEIGHT": 0.05,
    "UPDATE_CADENCE": 1,
    "UP_THRESHOLD": 1.0,
    "DOWN_THRESHOLD": 0.9,
    "UP_KEEP": 0.5,
    "UP_DOUBLE": 2.0,
    "DOWN_KEEP": 1.8,
    "DOWN_DOUBLE": 0.45,
    "LITERAL_BRANCH_ORDER": False,
    # grid
    "CLASSES": [
        {"name": "A2", "width": 1920, "height": 1080},
        {"name": "A3", "width": 1280, "height": 720},
        {"name": "A4", "width": 640, "height": 360},
    ],
    "SEQUENCES_PER_CLASS": 8,
    "TARGETS": [16.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.125],
    "QPS": [23, 27, 33, 37],
    "SEED": 0,
    "TABLE_PATH": None,
    "WORKERS": 1,
    # estimator validation
    "VALIDATION_FRAMES": 160,
    "VALIDATION_PRESET": 8,
    # output
    "REPORT_FORMATS": ["json", "csv", "text"],
}


# Logging configuration
LOG_DIR = BASE_DIR / "logs"
LOG_DIR.mkdir(exist_ok=True)

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
            "level": "INFO",
        },
        "file": {
            "class": "logging.FileHandler",
            "filename": LOG_DIR / "sapsim.log",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console", "file"],
        "level": "WARNING",
    },
    "loggers": {
        "django": {
            "handlers": ["console", "file"],
            "level": "WARNING",
            "propagate": False,
        },
        "presets": {
            "handlers": ["file"],
            "level": "INFO",
            "propagate": False,
        },
        "estimation": {
            "handlers": ["file"],
            "level": "INFO",
            "propagate": False,
        },
        "controller": {
            "handlers": ["file"],
            "level": "INFO",
            "propagate": False,
        },
        "pipeline": {
            "handlers": ["file"],
            "level": "INFO",
            "propagate": False,
        },
        "experiments": {
            "handlers": ["console", "file"],
            "level": "INFO",
            "propagate": False,
        },
    },
}
