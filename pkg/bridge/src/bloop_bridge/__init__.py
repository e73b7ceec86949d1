"""Standalone bridge exposing a causal LM's per-step logits over the
newline-delimited JSON scoring protocol (handshake, session open, sparse or
dense score responses). Echo mode serves pinned arithmetic for protocol
conformance testing without loading a model.
"""

from .backends import EchoBackend
from .protocol import ProtocolError, decode_frame, encode_frame
from .server import SessionHandler, TcpServer, serve_stdio, serve_stream

__version__ = "0.1.0"

__all__ = [
    "EchoBackend",
    "ProtocolError",
    "SessionHandler",
    "TcpServer",
    "decode_frame",
    "encode_frame",
    "serve_stdio",
    "serve_stream",
]
