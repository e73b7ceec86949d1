"""Connection handling: the handshake/score loop over stdio or TCP.

Each connection is served sequentially (one request in flight at a time);
multiple TCP connections run concurrently up to a configured limit. A
malformed request produces an error frame and the connection stays open.
"""

from __future__ import annotations

import socket
import threading
from collections import OrderedDict

import numpy as np

from .protocol import ProtocolError, decode_frame, encode_frame, error_frame

MAX_TRACKED_SESSIONS = 64


class SessionHandler:
    """Per-connection protocol state machine over a scoring backend.

    Opened sessions keep their prompt token ids for introspection, bounded
    to the most recent ``MAX_TRACKED_SESSIONS`` (scoring itself is stateless;
    every request carries its full context).
    """

    def __init__(self, backend):
        self.backend = backend
        self.sessions: OrderedDict[int, list[int]] = OrderedDict()

    def hello(self) -> dict:
        return {
            "type": "hello",
            "vocab_size": int(self.backend.vocab_size),
            "context_limit": int(self.backend.context_limit),
            "newline_token_ids": [int(i) for i in self.backend.newline_token_ids],
        }

    def respond(self, frame: dict) -> dict:
        try:
            ftype = frame["type"]
            if ftype == "open":
                return self._open(frame)
            if ftype == "score":
                return self._score(frame)
            return error_frame(f"unexpected frame type {ftype!r}")
        except ProtocolError as exc:
            return error_frame(str(exc))
        except Exception as exc:  # scoring failure must not kill the connection
            return error_frame(f"{type(exc).__name__}: {exc}")

    def _open(self, frame: dict) -> dict:
        ids = self.backend.prompt_ids(
            frame["prompt"], int(frame["max_prompt_tokens"]), bool(frame["raw"])
        )
        session = int(frame["session"])
        self.sessions[session] = list(ids)
        self.sessions.move_to_end(session)
        while len(self.sessions) > MAX_TRACKED_SESSIONS:
            self.sessions.popitem(last=False)
        return {
            "type": "opened",
            "session": session,
            "prompt_token_ids": [int(i) for i in ids],
        }

    def _score(self, frame: dict) -> dict:
        context = frame["context"]
        if len(context) > self.backend.context_limit:
            return error_frame(
                f"context of {len(context)} tokens exceeds limit {self.backend.context_limit}"
            )
        scores = np.asarray(self.backend.score([int(t) for t in context]), dtype=np.float64)
        if not np.isfinite(scores).all():
            return error_frame("backend produced non-finite logits")
        if frame["dense"]:
            return {"type": "logits_dense", "scores": [float(s) for s in scores]}
        vocab_size = len(scores)
        top_k = max(0, min(int(frame["top_k"]), vocab_size))
        order = np.argsort(-scores, kind="stable")
        chosen = set(order[:top_k].tolist())
        chosen.update(int(i) for i in frame["must_score"] if 0 <= int(i) < vocab_size)
        return {
            "type": "logits",
            "session": int(frame["session"]),
            "entries": [[int(i), float(scores[i])] for i in sorted(chosen)],
            "floor": float(scores.min()) - 1.0,
        }


def serve_stream(backend, reader, writer) -> None:
    """Run the protocol loop over buffered binary streams until EOF."""
    handler = SessionHandler(backend)
    writer.write(encode_frame(handler.hello()))
    writer.flush()
    while True:
        line = reader.readline()
        if not line:
            return
        if not line.strip():
            continue
        try:
            frame = decode_frame(line)
            reply = handler.respond(frame)
        except ProtocolError as exc:
            reply = error_frame(str(exc))
        writer.write(encode_frame(reply))
        writer.flush()


def serve_stdio(backend) -> None:
    import sys

    serve_stream(backend, sys.stdin.buffer, sys.stdout.buffer)


class TcpServer:
    def __init__(self, backend, host: str, port: int, max_connections: int = 8):
        self.backend = backend
        self.max_connections = max_connections
        self._gate = threading.Semaphore(max_connections)
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()

    def serve_forever(self) -> None:
        while True:
            conn, _ = self._listener.accept()
            self._gate.acquire()
            thread = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            thread.start()

    def _handle(self, conn: socket.socket) -> None:
        try:
            fh = conn.makefile("rwb")
            serve_stream(self.backend, fh, fh)
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            conn.close()
            self._gate.release()

    def close(self) -> None:
        self._listener.close()
