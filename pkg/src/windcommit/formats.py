"""Fixed-format text output so every file the toolkit writes is reproducible.

Floats are always rendered with 17 significant digits (%.17g), which
round-trips IEEE doubles exactly; rerunning a command therefore rewrites
byte-identical files.
"""

from __future__ import annotations

import json
import math


def fmt_float(x: float) -> str:
    """17-significant-digit rendering of a float."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(float(x), ".17g")


def dumps(obj, indent: int | None = 2) -> str:
    """JSON text with fmt_float applied to every float, insertion-ordered keys."""
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def _emit(obj, out: list[str], indent: int | None, level: int) -> None:
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = "," if indent is None else ","
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(fmt_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(sep)
            out.append(pad)
            out.append(json.dumps(str(k)))
            out.append(": ")
            _emit(v, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)) or _is_array(obj):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(items):
            if i:
                out.append(sep)
            out.append(pad)
            _emit(v, out, indent, level + 1)
        out.append(end + "]")
    elif _is_np_scalar(obj):
        _emit(obj.item(), out, indent, level)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _is_array(obj) -> bool:
    return type(obj).__module__ == "numpy" and hasattr(obj, "ndim") and obj.ndim == 1


def _is_np_scalar(obj) -> bool:
    return type(obj).__module__ == "numpy" and hasattr(obj, "item")
