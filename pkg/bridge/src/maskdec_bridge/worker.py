"""Long-running mask-predictor worker.

Serves wire-protocol v1 over stdin/stdout (default) or a unix socket
(``--socket``). One request in flight at a time, replies in request
order; ``meta`` must be answered before the first ``predict``. A line
that is valid JSON but not a valid request gets an error reply carrying
its id; a line that cannot be parsed at all is fatal: diagnostic on
stderr, nonzero exit.
"""

from __future__ import annotations

import argparse
import socket
import sys
from typing import IO, Iterable

from .models import MaskModel, load_model
from .wire import Reply, Request, WireError, decode_request


def _handle(req: Request, model: MaskModel, meta_sent: bool) -> tuple[Reply, bool, bool]:
    """Returns (reply, meta_sent, keep_running)."""
    if req.op == "meta":
        m = model.meta()
        reply = Reply(
            id=req.id,
            op="meta",
            meta={
                "vocab_size": m.vocab_size,
                "mask_id": m.mask_id,
                "eos_id": m.eos_id,
                "model": m.name,
            },
        )
        return reply, True, True
    if req.op == "shutdown":
        return Reply(id=req.id, op="shutdown"), meta_sent, False
    if not meta_sent:
        return (
            Reply(id=req.id, error="predict before meta"),
            meta_sent,
            True,
        )
    rows = model.predict(req.prompt, req.cells, req.block)
    return Reply(id=req.id, op="predict", predictions=tuple(rows)), meta_sent, True


def serve_stream(lines: Iterable[str], out: IO[str], model: MaskModel) -> int:
    meta_sent = False
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        try:
            req = decode_request(line)
        except WireError as exc:
            if exc.request_id is not None:
                out.write(Reply(id=exc.request_id, error=str(exc)).encode() + "\n")
                out.flush()
                continue
            print(f"fatal: {exc}", file=sys.stderr)
            return 1
        try:
            reply, meta_sent, keep = _handle(req, model, meta_sent)
        except Exception as exc:  # model failure: report, keep serving
            reply, keep = Reply(id=req.id, error=f"model failure: {exc}"), True
        out.write(reply.encode() + "\n")
        out.flush()
        if not keep:
            return 0
    return 0


def serve(model: MaskModel) -> int:
    """Serve one engine client over standard streams until shutdown/EOF."""
    return serve_stream(sys.stdin, sys.stdout, model)


def serve_socket(model: MaskModel, path: str) -> int:
    """Same protocol over a unix socket; accepts a single connection."""
    srv = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        srv.bind(path)
        srv.listen(1)
        conn, _ = srv.accept()
        with conn:
            reader = conn.makefile("r", encoding="utf-8")
            writer = conn.makefile("w", encoding="utf-8")
            return serve_stream(reader, writer, model)
    finally:
        srv.close()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="maskdec-worker", description=__doc__)
    ap.add_argument("--model", default="mock", help="mock | mock:<seed> | hf:<repo>")
    ap.add_argument("--seed", type=int, default=0, help="seed for the mock backend")
    ap.add_argument("--socket", help="serve on a unix socket instead of stdio")
    args = ap.parse_args(argv)
    try:
        model = load_model(args.model, seed=args.seed)
    except (ValueError, RuntimeError) as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1
    if args.socket:
        return serve_socket(model, args.socket)
    return serve(model)


if __name__ == "__main__":
    sys.exit(main())
