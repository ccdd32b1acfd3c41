"""Dynamic values flowing along graph edges.

A value is plain Python data restricted to the JSON shape:
None | bool | int/float (finite) | str | list | dict[str, value].
Ints and floats are one Number type semantically; the original
representation is kept so documents round-trip byte-for-byte.
"""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import EvalError

Value = Any  # None | bool | float | int | str | list | dict


def check_value(value: Value, path: str = "$") -> Value:
    """Validate a value tree; rejects non-finite numbers and foreign types."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (int, float)):
        if isinstance(value, float) and not math.isfinite(value):
            raise EvalError(EvalError.NON_FINITE, "number is not finite", path)
        return value
    if isinstance(value, list):
        for i, item in enumerate(value):
            check_value(item, f"{path}[{i}]")
        return value
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EvalError(EvalError.TYPE_MISMATCH, "object keys must be strings", path)
            check_value(item, f"{path}.{key}")
        return value
    raise EvalError(EvalError.TYPE_MISMATCH, f"unsupported value type {type(value).__name__}", path)


def canonical_json(value: Value) -> str:
    """Canonical single-line JSON: sorted keys, no whitespace, no NaN/Inf."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def display_str(value: Value) -> str:
    """String form used by templates and `str()`.

    Null renders empty, integral floats drop the ".0", arrays and objects
    render as canonical JSON.
    """
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    if isinstance(value, (int, float)):
        return repr(value) if isinstance(value, float) else str(value)
    if isinstance(value, str):
        return value
    return canonical_json(value)


def values_equal(a: Value, b: Value) -> bool:
    """Deep equality; numbers compare by value (1 == 1.0), bools only to bools."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return float(a) == float(b)
    if type(a) is not type(b):
        return False
    if isinstance(a, list):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(values_equal(v, b[k]) for k, v in a.items())
    return a == b
