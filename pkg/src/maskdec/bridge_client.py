"""Engine-side client for out-of-process mask-predictor workers.

Workers speak newline-delimited JSON (wire protocol v1) over their
standard streams: a ``meta`` request announces the vocabulary, then one
``predict`` request per engine step carries the prompt, the response
cells (null while masked), and the index range predictions are required
for. Replies must echo the request id and cover exactly the masked
positions in range; any deviation aborts the run rather than risking a
silently corrupted decode.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from typing import Optional

from .core import SequenceState, StepPredictions, Vocab

WIRE_VERSION = 1


class WireProtocolError(RuntimeError):
    """The worker broke the wire contract (bad id, bad positions, bad JSON)."""


class BridgeClient:
    """Owns one worker subprocess and one in-flight request at a time."""

    def __init__(self, cmd: str | list[str]):
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._next_id = 0
        self._meta: Optional[dict] = None

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _roundtrip(self, payload: dict) -> dict:
        if self._proc.poll() is not None:
            raise WireProtocolError("worker process exited prematurely")
        self._next_id += 1
        payload = {"v": WIRE_VERSION, "id": self._next_id, **payload}
        assert self._proc.stdin is not None and self._proc.stdout is not None
        self._proc.stdin.write(json.dumps(payload, sort_keys=True) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise WireProtocolError("worker closed its output stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise WireProtocolError(f"unparseable worker reply: {line!r}") from exc
        if reply.get("id") != self._next_id:
            raise WireProtocolError(
                f"reply id {reply.get('id')} does not match request id {self._next_id}"
            )
        if "error" in reply:
            raise WireProtocolError(f"worker error: {reply['error']}")
        return reply

    def meta(self) -> dict:
        if self._meta is None:
            reply = self._roundtrip({"op": "meta"})
            for key in ("vocab_size", "mask_id", "eos_id"):
                if key not in reply:
                    raise WireProtocolError(f"meta reply missing {key!r}")
            self._meta = reply
        return self._meta

    def vocab(self) -> Vocab:
        meta = self.meta()
        return Vocab(size=meta["vocab_size"], mask_id=meta["mask_id"], eos_id=meta["eos_id"])

    def predict(self, state: SequenceState) -> StepPredictions:
        # The engine wants predictions for every masked cell (cross-block
        # analysis reads them), so the requested range is the full response.
        reply = self._roundtrip(
            {
                "op": "predict",
                "prompt": list(state.prompt),
                "cells": [c for c in state.response],
                "block": [0, state.gen_len],
            }
        )
        rows = reply.get("predictions")
        if rows is None:
            raise WireProtocolError("predict reply carries no predictions field")
        try:
            entries = {int(p): (int(t), float(c)) for p, t, c in rows}
        except (TypeError, ValueError) as exc:
            raise WireProtocolError(f"malformed prediction rows: {exc}") from exc
        expected = set(state.masked_positions())
        if set(entries) != expected:
            missing = sorted(expected - set(entries))[:4]
            extra = sorted(set(entries) - expected)[:4]
            raise WireProtocolError(
                f"prediction positions mismatch (missing {missing}, extra {extra})"
            )
        return StepPredictions(entries=entries)

    __call__ = predict

    def describe(self) -> str:
        model = (self._meta or {}).get("model", "?")
        return f"bridge(model={model})"

    def shutdown(self) -> None:
        if self._proc.poll() is None:
            try:
                self._roundtrip({"op": "shutdown"})
            except WireProtocolError:
                pass

    def close(self) -> None:
        try:
            self.shutdown()
        finally:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
