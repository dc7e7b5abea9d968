"""Minimal wire-protocol v1 worker used by the CLI tests.

Deterministic stand-in for a real model worker: confidence and token at
each masked position derive from a small hash of (seed, position, number
of committed cells). Fault flags let tests exercise the client's error
handling: --lie-id corrupts reply ids, --drop-position omits one masked
position from predict replies.
"""

import argparse
import json
import sys

VOCAB_SIZE = 34
MASK_ID = 0
EOS_ID = 1
USABLE = [t for t in range(VOCAB_SIZE) if t not in (MASK_ID, EOS_ID)]
M64 = (1 << 64) - 1


def mix(x: int) -> int:
    x &= M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & M64
    x ^= x >> 31
    return x


def predict(seed: int, cells: list, block: list) -> list:
    committed = sum(1 for c in cells if c is not None)
    rows = []
    for pos in range(block[0], block[1]):
        if cells[pos] is not None:
            continue
        h = mix(seed ^ mix(pos * 7919 + committed))
        conf = 0.05 + (h % 10_000) / 10_999.0
        tok = USABLE[h % len(USABLE)]
        rows.append([pos, tok, round(conf, 6)])
    return rows


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lie-id", action="store_true")
    ap.add_argument("--drop-position", action="store_true")
    ap.add_argument("--die-after", type=int, default=0, help="exit after N predicts")
    args = ap.parse_args()

    predicts = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            print("fatal: unparseable request", file=sys.stderr)
            return 1
        rid = req.get("id", -1)
        if args.lie_id:
            rid += 1
        op = req.get("op")
        if op == "meta":
            reply = {
                "id": rid,
                "op": "meta",
                "vocab_size": VOCAB_SIZE,
                "mask_id": MASK_ID,
                "eos_id": EOS_ID,
                "model": "mock-test",
            }
        elif op == "predict":
            predicts += 1
            if args.die_after and predicts > args.die_after:
                print("fatal: injected mid-run crash", file=sys.stderr)
                return 1
            rows = predict(args.seed, req["cells"], req["block"])
            if args.drop_position and rows:
                rows = rows[1:]
            reply = {"id": rid, "op": "predict", "predictions": rows}
        elif op == "shutdown":
            print(json.dumps({"id": rid, "op": "shutdown"}), flush=True)
            return 0
        else:
            reply = {"id": rid, "error": f"unknown op {op!r}"}
        print(json.dumps(reply), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
