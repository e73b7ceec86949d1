"""Frame codec for the engine's scoring protocol.

This package talks to the decoding engine only over this wire format, so the
codec is implemented here independently. Canonical encoding rules (the two
sides must agree byte for byte): one JSON object per line, keys sorted
lexicographically, separators without whitespace, floats as 17-significant-
digit decimals always carrying a point or exponent, non-finite floats
rejected.

Frame types: ``hello``, ``open``/``opened``, ``score``, ``logits``,
``logits_dense``, ``error``.
"""

from __future__ import annotations

import json
import math


class ProtocolError(ValueError):
    pass


def format_float(value: float) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise ProtocolError(f"non-finite float {value!r} cannot be serialized")
    text = format(value, ".17g")
    if "." not in text and "e" not in text:
        text += ".0"
    return text


def _encode_value(value, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_float(value))
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode_value(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode_value(item, out)
        out.append("]")
    else:
        # numpy scalars and similar: coerce through their Python equivalents
        if hasattr(value, "item"):
            _encode_value(value.item(), out)
        else:
            raise ProtocolError(f"unsupported value of type {type(value).__name__}")


def encode_frame(frame: dict) -> bytes:
    if "type" not in frame:
        raise ProtocolError("frame has no 'type' field")
    out: list[str] = []
    _encode_value(frame, out)
    return ("".join(out) + "\n").encode("utf-8")


_REQUIRED = {
    "hello": ("vocab_size", "context_limit", "newline_token_ids"),
    "open": ("session", "prompt", "max_prompt_tokens", "raw"),
    "opened": ("session", "prompt_token_ids"),
    "score": ("session", "context", "top_k", "must_score", "dense"),
    "logits": ("session", "entries", "floor"),
    "logits_dense": ("scores",),
    "error": ("message",),
}


def decode_frame(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    line = line.strip()
    if not line:
        raise ProtocolError("empty frame line")
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON frame: {exc}") from exc
    if not isinstance(frame, dict):
        raise ProtocolError("frame is not a JSON object")
    ftype = frame.get("type")
    if ftype not in _REQUIRED:
        raise ProtocolError(f"unknown frame type {ftype!r}")
    for field in _REQUIRED[ftype]:
        if field not in frame:
            raise ProtocolError(f"{ftype} frame missing field {field!r}")
    return frame


def error_frame(message: str) -> dict:
    return {"type": "error", "message": str(message)}
