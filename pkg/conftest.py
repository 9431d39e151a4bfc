"""Pytest wiring: configure Django with the sapsim settings before collection."""

import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "sapsim.settings")
django.setup()
