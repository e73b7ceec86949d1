"""Client for external model backends speaking the wire protocol.

The client implements the TokenScorer contract over a TCP connection or the
stdio of a spawned bridge process. Sparse responses are expanded into dense
vectors: ids missing from the response carry the reported floor score, which
by construction can never win selection unless they are promoted into the
exact-score set (``must_score``). Dense mode requests full vectors and is
exact everywhere.

Requests are serialized per connection; one frame is in flight at a time.
"""

from __future__ import annotations

import socket
import subprocess
import threading
from typing import Collection, Sequence

import numpy as np

from . import protocol


class BridgeError(RuntimeError):
    """Protocol violation or error frame from the bridge."""


class BridgeClosedError(BridgeError):
    """The bridge hung up; the connection is unusable."""


class BridgeClient:
    concurrency_safe = False

    def __init__(self, reader, writer, *, dense: bool = False, top_k: int = 256, closer=None):
        self._reader = reader
        self._writer = writer
        self._closer = closer
        self._lock = threading.Lock()
        self._next_session = 1
        self.session = 0
        self.dense = dense
        self.top_k = top_k
        hello = self._read_frame()
        if hello.get("type") != "hello":
            raise BridgeError(f"expected hello frame, got {hello.get('type')!r}")
        self.vocab_size: int = hello["vocab_size"]
        self.context_limit: int | None = hello["context_limit"]
        self.newline_token_ids: frozenset[int] = frozenset(hello["newline_token_ids"])

    @classmethod
    def connect(cls, address: str, handshake_timeout: float = 60.0, **kwargs) -> "BridgeClient":
        """Connect to ``host:port``.

        The handshake must arrive within ``handshake_timeout`` seconds (a
        bridge that has hit its connection limit parks new sockets unserved;
        better to fail loudly than hang). Scoring itself has no timeout.
        """
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bridge address must be host:port, got {address!r}")
        sock = socket.create_connection((host, int(port)), timeout=handshake_timeout)
        fh = sock.makefile("rwb")
        try:
            client = cls(fh, fh, closer=sock.close, **kwargs)
        except (OSError, BridgeError):
            sock.close()
            raise
        sock.settimeout(None)
        return client

    @classmethod
    def spawn(cls, argv: Sequence[str], **kwargs) -> "BridgeClient":
        """Spawn a bridge subprocess and talk to it over stdio."""
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return cls(proc.stdout, proc.stdin, closer=proc.terminate, **kwargs)

    def close(self) -> None:
        if self._closer is not None:
            self._closer()

    def _read_frame(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise BridgeClosedError("bridge closed the connection")
        return protocol.decode_frame(line)

    def _roundtrip(self, frame: dict) -> dict:
        with self._lock:
            self._writer.write(protocol.encode_frame(frame))
            self._writer.flush()
            reply = self._read_frame()
        if reply.get("type") == "error":
            raise BridgeError(f"bridge error: {reply['message']}")
        return reply

    def open_session(
        self, prompt: str, max_prompt_tokens: int, raw: bool = False
    ) -> tuple[int, list[int]]:
        """Start a generation session; returns (session id, prompt token ids).

        ``raw=True`` asks for direct tokenization of the text instead of
        chat-template rendering (used to map article text into the model's
        token space for cache building).
        """
        with self._lock:
            session = self._next_session
            self._next_session += 1
        reply = self._roundtrip(
            {
                "type": "open",
                "session": session,
                "prompt": prompt,
                "max_prompt_tokens": int(max_prompt_tokens),
                "raw": bool(raw),
            }
        )
        if reply.get("type") != "opened" or reply.get("session") != session:
            raise BridgeError(f"unexpected reply to open: {reply.get('type')!r}")
        self.session = session
        return session, list(reply["prompt_token_ids"])

    def score(self, context: Sequence[int], must_score: Collection[int] = ()) -> np.ndarray:
        reply = self._roundtrip(
            {
                "type": "score",
                "session": self.session,
                "context": [int(t) for t in context],
                "top_k": int(self.top_k),
                "must_score": sorted(int(t) for t in must_score),
                "dense": bool(self.dense),
            }
        )
        if reply.get("type") == "logits_dense":
            scores = np.asarray(reply["scores"], dtype=np.float64)
            if len(scores) != self.vocab_size:
                raise BridgeError(
                    f"dense response of length {len(scores)} != vocab size {self.vocab_size}"
                )
            return scores
        if reply.get("type") == "logits":
            dense = np.full(self.vocab_size, float(reply["floor"]), dtype=np.float64)
            for tid, score in reply["entries"]:
                if not 0 <= int(tid) < self.vocab_size:
                    raise BridgeError(f"entry id {tid} outside vocabulary")
                dense[int(tid)] = float(score)
            return dense
        raise BridgeError(f"unexpected reply to score: {reply.get('type')!r}")
