"""Newline-delimited JSON wire protocol between the engine and a model bridge.

Frames (one JSON object per line, UTF-8):

* ``hello``        server -> client on connect:
                   ``{"type":"hello","vocab_size":N,"context_limit":M,"newline_token_ids":[...]}``
* ``open``         client -> server, start a generation session:
                   ``{"type":"open","session":S,"prompt":"...","max_prompt_tokens":B,"raw":bool}``;
                   ``raw`` false renders the model's chat template around the
                   prompt text, true tokenizes the text directly (used to map
                   an article into the model's token space for cache building);
                   either way the prompt's tail tokens are truncated so the
                   total stays within ``max_prompt_tokens``
* ``opened``       server -> client:
                   ``{"type":"opened","session":S,"prompt_token_ids":[...]}``
* ``score``        client -> server:
                   ``{"type":"score","session":S,"context":[ids],"top_k":K,"must_score":[ids],"dense":bool}``
* ``logits``       sparse response: ``{"type":"logits","session":S,"entries":[[id,score],...],"floor":f}``;
                   ids absent from ``entries`` carry the ``floor`` score and can
                   never win selection unless promoted into the exact set.
* ``logits_dense`` dense response: ``{"type":"logits_dense","scores":[...]}``
* ``error``        ``{"type":"error","message":"..."}``

Canonical encoding (both sides must match it byte for byte): object keys
sorted lexicographically, separators ``","`` / ``":"`` with no whitespace,
floats as decimal with 17 significant digits (round-trip exact for 64-bit
values) and always carrying a decimal point or exponent. Non-finite floats
are a protocol violation.

Echo mode, used for protocol conformance testing without a model, is pinned
to integer arithmetic so any implementation reproduces it bit for bit:
for vocabulary size ``N``, context ``c`` and candidate id ``v``::

    last = c[-1] if c else 0
    r(v) = (1103515245 * (v + 31*len(c) + 131*last + 17) + 12345) mod 65536
    logit(v) = r(v) / 65536 - 0.5

and an opened session's prompt ids are the UTF-8 bytes of the prompt text
modulo ``N``, truncated to ``max_prompt_tokens``. Echo handshakes declare
``newline_token_ids = [10]`` (when the vocabulary is larger than 10).
"""

from __future__ import annotations

import json
import math

import numpy as np

PROTOCOL_FLOAT_DIGITS = 17

ECHO_VOCAB_SIZE = 257
ECHO_CONTEXT_LIMIT = 4096


class ProtocolError(ValueError):
    """Malformed frame, unknown type, or non-finite float."""


def format_float(value: float) -> str:
    """17-significant-digit decimal, always recognizably a float."""
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
    elif isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        out.append(format_float(float(value)))
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise ProtocolError(f"object keys must be strings, got {key!r}")
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
        raise ProtocolError(f"unsupported value of type {type(value).__name__} in frame")


def encode_frame(frame: dict) -> bytes:
    """Canonical single-line encoding, newline terminated."""
    if "type" not in frame:
        raise ProtocolError("frame has no 'type' field")
    out: list[str] = []
    _encode_value(frame, out)
    return ("".join(out) + "\n").encode("utf-8")


_FRAME_FIELDS = {
    "hello": {"vocab_size": int, "context_limit": int, "newline_token_ids": list},
    "open": {"session": int, "prompt": str, "max_prompt_tokens": int, "raw": bool},
    "opened": {"session": int, "prompt_token_ids": list},
    "score": {"session": int, "context": list, "top_k": int, "must_score": list, "dense": bool},
    "logits": {"session": int, "entries": list, "floor": (int, float)},
    "logits_dense": {"scores": list},
    "error": {"message": str},
}


def decode_frame(line: bytes | str) -> dict:
    """Parse and validate one frame line."""
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
    if ftype not in _FRAME_FIELDS:
        raise ProtocolError(f"unknown frame type {ftype!r}")
    for name, kind in _FRAME_FIELDS[ftype].items():
        if name not in frame:
            raise ProtocolError(f"{ftype} frame missing field {name!r}")
        if kind is int:
            if isinstance(frame[name], bool) or not isinstance(frame[name], int):
                raise ProtocolError(f"{ftype}.{name} must be an integer")
        elif not isinstance(frame[name], kind):
            raise ProtocolError(f"{ftype}.{name} has wrong type")
    return frame


def error_frame(message: str) -> dict:
    return {"type": "error", "message": str(message)}


def echo_logits(vocab_size: int, context) -> np.ndarray:
    v = np.arange(vocab_size, dtype=np.int64)
    last = int(context[-1]) if len(context) else 0
    r = (1103515245 * (v + 31 * len(context) + 131 * last + 17) + 12345) % 65536
    return r / 65536 - 0.5


def echo_prompt_ids(vocab_size: int, prompt: str, max_prompt_tokens: int) -> list[int]:
    ids = [b % vocab_size for b in prompt.encode("utf-8")]
    return ids[:max_prompt_tokens]


class EchoResponder:
    """Pure frame -> frame server logic for echo mode.

    This is the engine-side reference implementation of the bridge's test
    mode; tests pipe it through sockets or use it in process. The standalone
    bridge reimplements the same arithmetic from the module docstring.
    """

    def __init__(self, vocab_size: int = ECHO_VOCAB_SIZE, context_limit: int = ECHO_CONTEXT_LIMIT):
        self.vocab_size = vocab_size
        self.context_limit = context_limit

    def hello(self) -> dict:
        newline_ids = [10] if self.vocab_size > 10 else []
        return {
            "type": "hello",
            "vocab_size": self.vocab_size,
            "context_limit": self.context_limit,
            "newline_token_ids": newline_ids,
        }

    def respond(self, frame: dict) -> dict:
        try:
            ftype = frame["type"]
            if ftype == "open":
                ids = echo_prompt_ids(self.vocab_size, frame["prompt"], frame["max_prompt_tokens"])
                return {"type": "opened", "session": frame["session"], "prompt_token_ids": ids}
            if ftype == "score":
                return self._score(frame)
            return error_frame(f"unexpected frame type {ftype!r}")
        except ProtocolError as exc:
            return error_frame(str(exc))

    def _score(self, frame: dict) -> dict:
        context = frame["context"]
        if len(context) > self.context_limit:
            return error_frame(
                f"context of {len(context)} tokens exceeds limit {self.context_limit}"
            )
        scores = echo_logits(self.vocab_size, context)
        if frame["dense"]:
            return {"type": "logits_dense", "scores": [float(s) for s in scores]}
        top_k = max(0, min(int(frame["top_k"]), self.vocab_size))
        order = np.argsort(-scores, kind="stable")
        chosen = set(order[:top_k].tolist())
        chosen.update(int(i) for i in frame["must_score"] if 0 <= int(i) < self.vocab_size)
        entries = [[int(i), float(scores[i])] for i in sorted(chosen)]
        floor = float(scores.min()) - 1.0
        return {
            "type": "logits",
            "session": frame["session"],
            "entries": entries,
            "floor": floor,
        }
