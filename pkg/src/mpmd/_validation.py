"""Small input checks shared by the estimators and the command line."""

from __future__ import annotations

import math
import numbers

from .instance import Instance, ParameterError


def check_positive(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not math.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_int(value, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_instance(instance, require_even: bool = True) -> Instance:
    """Validate an :class:`Instance` before simulation or offline solving."""
    if not isinstance(instance, Instance):
        raise TypeError(f"expected an Instance, got {type(instance).__name__}")
    k = instance.space.k
    seen = set()
    for r in instance.requests:
        if r.id in seen:
            raise ParameterError(f"duplicate request id {r.id}")
        seen.add(r.id)
        if not 0 <= r.point < k:
            raise ParameterError(f"request {r.id} sits at point {r.point}, outside 0..{k - 1}")
        if not math.isfinite(r.arrival) or r.arrival < 0:
            raise ParameterError(f"request {r.id} has arrival {r.arrival!r}")
    if require_even and len(instance.requests) % 2:
        raise ParameterError(f"instance has an odd number of requests ({len(instance.requests)})")
    return instance
