import math
from collections.abc import Sequence

from django.core.exceptions import ValidationError
from django.utils.translation import gettext as _


def validate_strictly_positive(value: float) -> None:
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(
            _("Value must be a finite number greater than zero, got %(value)s"),
            code="not_positive",
            params={"value": value},
        )


def validate_unit_interval(value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(
            _("Value must lie in [0, 1], got %(value)s"),
            code="outside_unit_interval",
            params={"value": value},
        )


def validate_strictly_increasing(values: Sequence[float]) -> None:
    for index, (low, high) in enumerate(zip(values, values[1:]), start=1):
        if high <= low:
            raise ValidationError(
                _(
                    "Pixel rates must increase with preset; "
                    "preset %(next)s is not faster than %(prev)s"
                ),
                code="not_increasing",
                params={"prev": index, "next": index + 1},
            )


def validate_strictly_decreasing(values: Sequence[float]) -> None:
    for low, high in zip(values, values[1:]):
        if high >= low:
            raise ValidationError(
                _("Per-preset times must decrease with preset (%(low)s then %(high)s)"),
                code="not_decreasing",
                params={"low": low, "high": high},
            )
