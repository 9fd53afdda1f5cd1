"""Argument checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

from sklearn.utils import check_scalar

from .exceptions import InvalidParams


def check_number(value, name, *, min_val=None, max_val=None, include_boundaries="both",
                 integer=False):
    """``sklearn.utils.check_scalar`` with errors mapped to :class:`InvalidParams`."""
    kind = numbers.Integral if integer else numbers.Real
    try:
        return check_scalar(value, name, kind, min_val=min_val, max_val=max_val,
                            include_boundaries=include_boundaries)
    except (TypeError, ValueError) as err:
        raise InvalidParams(str(err)) from None


def check_probability(value, name="alpha"):
    return check_number(value, name, min_val=0.0, max_val=1.0)


def check_positive(value, name, *, integer=False):
    return check_number(value, name, min_val=0, include_boundaries="neither", integer=integer)


def check_increasing(values, name):
    values = list(values)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise InvalidParams(f"{name} must be strictly increasing")
    return values


def check_choice(value, name, choices):
    if value not in choices:
        raise InvalidParams(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value
