"""Canonical JSON writing for records, models, worlds, and wire fixtures.

Floats are written with 17 significant digits, enough for a bit-exact
round trip of any IEEE double, and keys keep their insertion order, so a
parse/serialize cycle of a canonical document is byte-identical. Parsing
is plain json.loads; only the writer is custom.
"""
from __future__ import annotations

import math


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite floats are not serializable")
    if x == int(x) and abs(x) < 1e16:
        # keep integral floats compact but still float-typed
        return f"{x:.1f}"
    return format(x, ".17g")


def _write(value, out: list) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_float(value))
    elif isinstance(value, str):
        out.append(_escape(value))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, v in enumerate(value):
            if i:
                out.append(",")
            _write(v, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, (k, v) in enumerate(value.items()):
            if i:
                out.append(",")
            if not isinstance(k, str):
                raise TypeError(f"object keys must be strings, got {type(k).__name__}")
            out.append(_escape(k))
            out.append(":")
            _write(v, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


_ESCAPES = {
    '"': '\\"',
    "\\": "\\\\",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
    "\b": "\\b",
    "\f": "\\f",
}


def _escape(s: str) -> str:
    parts = ['"']
    for ch in s:
        if ch in _ESCAPES:
            parts.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            parts.append(f"\\u{ord(ch):04x}")
        else:
            parts.append(ch)
    parts.append('"')
    return "".join(parts)


def canonical_dumps(value) -> str:
    """Serialize with stable key order, compact separators, 17-digit floats."""
    out: list[str] = []
    _write(value, out)
    return "".join(out)
