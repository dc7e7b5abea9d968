"""Wire protocol v1: newline-delimited JSON messages over a byte stream.

The schema matches the maskdec engine's published contract
(docs/formats.md in the engine repo): requests carry a version tag ``v``,
a request ``id``, and an ``op`` of ``meta``, ``predict``, or ``shutdown``.
Predict requests carry the prompt ids, the response cells (token id or
null while masked), and the half-open block range predictions are
required for. Replies echo the request id; predict replies list
``[position, token, confidence]`` for exactly the masked cells in range.

Full-distribution replies are reserved for a future protocol version; v1
is top-1 only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

WIRE_VERSION = 1

OPS = ("meta", "predict", "shutdown")


class WireError(ValueError):
    """Structurally invalid message; carries the request id when known."""

    def __init__(self, message: str, request_id: Optional[int] = None):
        super().__init__(message)
        self.request_id = request_id


@dataclass(frozen=True)
class Request:
    id: int
    op: str
    prompt: tuple[int, ...] = ()
    cells: tuple[Optional[int], ...] = ()
    block: tuple[int, int] = (0, 0)

    def encode(self) -> str:
        payload: dict = {"v": WIRE_VERSION, "id": self.id, "op": self.op}
        if self.op == "predict":
            payload["prompt"] = list(self.prompt)
            payload["cells"] = list(self.cells)
            payload["block"] = list(self.block)
        return json.dumps(payload, sort_keys=True)


def decode_request(line: str) -> Request:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"unparseable request line: {exc}") from exc
    if not isinstance(raw, dict):
        raise WireError("request is not an object")
    rid = raw.get("id")
    if not isinstance(rid, int):
        raise WireError("request has no integer id")
    if raw.get("v") != WIRE_VERSION:
        raise WireError(f"unsupported protocol version {raw.get('v')!r}", rid)
    op = raw.get("op")
    if op not in OPS:
        raise WireError(f"unknown op {op!r}", rid)
    if op != "predict":
        return Request(id=rid, op=op)

    try:
        prompt = tuple(int(t) for t in raw["prompt"])
        cells = tuple(None if c is None else int(c) for c in raw["cells"])
        lo, hi = raw["block"]
        block = (int(lo), int(hi))
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed predict fields: {exc}", rid) from exc
    if not 0 <= block[0] <= block[1] <= len(cells):
        raise WireError(f"block {block} outside response of length {len(cells)}", rid)
    return Request(id=rid, op=op, prompt=prompt, cells=cells, block=block)


@dataclass(frozen=True)
class Reply:
    id: int
    op: str = ""
    predictions: tuple[tuple[int, int, float], ...] = ()
    meta: dict = field(default_factory=dict)
    error: Optional[str] = None

    def encode(self) -> str:
        if self.error is not None:
            return json.dumps({"id": self.id, "error": self.error}, sort_keys=True)
        payload: dict = {"id": self.id, "op": self.op}
        if self.op == "meta":
            payload.update(self.meta)
        elif self.op == "predict":
            payload["predictions"] = [[p, t, c] for p, t, c in self.predictions]
        return json.dumps(payload, sort_keys=True)


def decode_reply(line: str) -> Reply:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"unparseable reply line: {exc}") from exc
    rid = raw.get("id")
    if not isinstance(rid, int):
        raise WireError("reply has no integer id")
    if "error" in raw:
        return Reply(id=rid, error=str(raw["error"]))
    op = raw.get("op")
    if op == "meta":
        meta = {k: v for k, v in raw.items() if k not in ("id", "op")}
        for key in ("vocab_size", "mask_id", "eos_id"):
            if key not in meta:
                raise WireError(f"meta reply missing {key!r}", rid)
        return Reply(id=rid, op="meta", meta=meta)
    if op == "predict":
        rows = raw.get("predictions")
        if not isinstance(rows, list):
            raise WireError("predict reply missing predictions list", rid)
        preds = []
        for row in rows:
            pos, tok, conf = row
            conf = float(conf)
            if not 0.0 <= conf <= 1.0:
                raise WireError(f"confidence {conf} outside [0, 1]", rid)
            preds.append((int(pos), int(tok), conf))
        return Reply(id=rid, op="predict", predictions=tuple(preds))
    if op == "shutdown":
        return Reply(id=rid, op="shutdown")
    raise WireError(f"unknown reply op {op!r}", rid)


def masked_in_range(cells: tuple[Optional[int], ...], block: tuple[int, int]) -> tuple[int, ...]:
    lo, hi = block
    return tuple(p for p in range(lo, hi) if cells[p] is None)
