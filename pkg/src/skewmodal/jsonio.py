"""Deterministic JSON output with 17-significant-digit floats and sorted keys."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _emit(obj, out: list, indent, level):
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out, indent, level)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        keys = sorted(obj, key=str)
        pad, close = _pads(indent, level)
        out.append("{")
        for i, k in enumerate(keys):
            out.append(("," if i else "") + pad + json.dumps(str(k)) + ":" + (" " if indent else ""))
            _emit(obj[k], out, indent, level + 1)
        out.append(close + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj)
        pad, close = ("", "") if flat else _pads(indent, level)
        sep = ", " if flat and indent else ","
        out.append("[")
        for i, v in enumerate(obj):
            out.append((sep if i else "") + pad)
            _emit(v, out, indent, level + 1)
        out.append(close + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _pads(indent, level):
    if not indent:
        return "", ""
    return "\n" + " " * (indent * (level + 1)), "\n" + " " * (indent * level)


def dumps(obj, indent: int | None = 2) -> str:
    """Serialize with sorted keys; floats use 17 significant digits, NaN becomes null."""
    out: list = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def dump(obj, path, indent: int | None = 2) -> None:
    Path(path).write_text(dumps(obj, indent) + "\n")


def load(path):
    return json.loads(Path(path).read_text())


def floats(values) -> np.ndarray:
    """Parse a JSON list back to floats, mapping null to NaN."""
    return np.array([np.nan if v is None else v for v in np.ravel(np.array(values, dtype=object))], dtype=float)
