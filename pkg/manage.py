#!/usr/bin/env python
"""Entry point for the sapsim harness: `python manage.py saps <subcommand>` and `test`."""

import os
import sys


def main() -> None:
    """Dispatch to Django's management commands with the sapsim settings."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "sapsim.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Is the sapsim environment installed "
            "(`uv sync`) and activated?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
