"""Bridge entry point.

Modes: ``--echo`` (no model, pinned arithmetic for protocol tests),
``--model NAME`` (Hugging Face checkpoint), or ``--model tiny-random[:SEED]``
(seeded random-weight model, no download). Serves over ``--stdio`` or a TCP
``--address host:port``. ``--dump-vocab PATH`` writes the tokenizer's decoded
surface-form table (one escaped token per line, id = line number) for the
engine's stop-string handling, then continues serving unless ``--dump-only``.
"""

from __future__ import annotations

import argparse
import sys


def build_backend(args):
    if args.echo:
        from .backends import EchoBackend

        return EchoBackend()
    if args.model is None:
        raise SystemExit("bloop-bridge: --echo or --model is required")
    from .backends import CausalLMBackend

    if args.model.startswith("tiny-random"):
        _, _, seed = args.model.partition(":")
        return CausalLMBackend.tiny_random(seed=int(seed) if seed else 0)
    return CausalLMBackend.from_pretrained(args.model)


def _escape(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r")


def dump_vocab(backend, path: str) -> None:
    from .backends import vocab_surface_table

    table = vocab_surface_table(backend.tokenizer, backend.vocab_size)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for surface in table:
            fh.write(_escape(surface))
            fh.write("\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bloop-bridge", description=__doc__)
    parser.add_argument("--model", default=None,
                        help="HF checkpoint name, or tiny-random[:SEED]")
    parser.add_argument("--echo", action="store_true",
                        help="serve pinned test logits without a model")
    parser.add_argument("--address", default=None, help="host:port to listen on")
    parser.add_argument("--stdio", action="store_true", help="serve over stdio")
    parser.add_argument("--max-connections", type=int, default=8)
    parser.add_argument("--dump-vocab", default=None,
                        help="write the surface-form table to this path")
    parser.add_argument("--dump-only", action="store_true",
                        help="exit after --dump-vocab instead of serving")
    args = parser.parse_args(argv)

    backend = build_backend(args)
    if args.dump_vocab:
        if args.echo:
            raise SystemExit("bloop-bridge: echo mode has no tokenizer to dump")
        dump_vocab(backend, args.dump_vocab)
        if args.dump_only:
            return 0

    if args.stdio:
        from .server import serve_stdio

        serve_stdio(backend)
        return 0
    if args.address:
        host, _, port = args.address.rpartition(":")
        if not host or not port.isdigit():
            raise SystemExit(f"bloop-bridge: --address must be host:port, got {args.address!r}")
        from .server import TcpServer

        server = TcpServer(backend, host, int(port), args.max_connections)
        print(f"listening on {server.address[0]}:{server.address[1]}", file=sys.stderr)
        server.serve_forever()
        return 0
    raise SystemExit("bloop-bridge: choose --stdio or --address host:port")


if __name__ == "__main__":
    sys.exit(main())
