import io
import json
import os
import socket
import subprocess
import sys
import threading

import pytest

from maskdec_bridge.models import MockModel, load_model
from maskdec_bridge.worker import serve_socket, serve_stream

WORKER = [sys.executable, "-m", "maskdec_bridge.worker"]


def stream(*reqs: dict) -> list[str]:
    return [json.dumps(r) for r in reqs]


def run_stream(lines) -> tuple[int, list[dict]]:
    out = io.StringIO()
    code = serve_stream(lines, out, MockModel(seed=1))
    replies = [json.loads(line) for line in out.getvalue().splitlines()]
    return code, replies


META = {"v": 1, "id": 1, "op": "meta"}


class TestServeStream:
    def test_meta_reply(self):
        code, replies = run_stream(stream(META))
        assert code == 0
        assert replies[0]["id"] == 1
        assert replies[0]["vocab_size"] == 34
        assert replies[0]["mask_id"] == 0
        assert replies[0]["eos_id"] == 1
        assert replies[0]["model"].startswith("mock")

    def test_predict_before_meta_is_an_error_reply(self):
        req = {"v": 1, "id": 2, "op": "predict", "prompt": [], "cells": [None], "block": [0, 1]}
        code, replies = run_stream(stream(req))
        assert code == 0
        assert "error" in replies[0] and replies[0]["id"] == 2

    def test_predict_covers_exactly_masked_in_range(self):
        req = {
            "v": 1, "id": 2, "op": "predict",
            "prompt": [5, 6], "cells": [9, None, None, 9, None], "block": [0, 4],
        }
        code, replies = run_stream(stream(META, req))
        positions = [p for p, _, _ in replies[1]["predictions"]]
        assert positions == [1, 2]

    def test_fully_committed_block_gives_empty_list(self):
        req = {
            "v": 1, "id": 2, "op": "predict",
            "prompt": [], "cells": [7, 7, None], "block": [0, 2],
        }
        code, replies = run_stream(stream(META, req))
        assert replies[1]["predictions"] == []

    def test_invalid_json_is_fatal(self):
        code, replies = run_stream(stream(META) + ["{nope"])
        assert code == 1
        assert len(replies) == 1  # meta answered, then the worker died

    def test_invalid_request_with_id_keeps_serving(self):
        bad = {"v": 1, "id": 5, "op": "train"}
        code, replies = run_stream(stream(META, bad, META | {"id": 6}))
        assert code == 0
        assert "error" in replies[1] and replies[1]["id"] == 5
        assert replies[2]["id"] == 6

    def test_shutdown_stops_the_loop(self):
        code, replies = run_stream(
            stream(META, {"v": 1, "id": 2, "op": "shutdown"}, META | {"id": 3})
        )
        assert code == 0
        assert replies[-1] == {"id": 2, "op": "shutdown"}
        assert len(replies) == 2  # nothing served after shutdown

    def test_confidences_in_range_and_deterministic(self):
        req = {
            "v": 1, "id": 2, "op": "predict",
            "prompt": [3, 4], "cells": [None] * 8, "block": [0, 8],
        }
        _, first = run_stream(stream(META, req))
        _, second = run_stream(stream(META, req))
        assert first == second
        assert all(0.0 <= c <= 1.0 for _, _, c in first[1]["predictions"])


class TestWorkerProcess:
    def test_stdio_session(self):
        proc = subprocess.Popen(
            WORKER + ["--model", "mock", "--seed", "3"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
        )
        try:
            reqs = stream(
                META,
                {"v": 1, "id": 2, "op": "predict", "prompt": [5],
                 "cells": [None, None], "block": [0, 2]},
                {"v": 1, "id": 3, "op": "shutdown"},
            )
            out, _ = proc.communicate("\n".join(reqs) + "\n", timeout=30)
            replies = [json.loads(line) for line in out.splitlines()]
            assert [r["id"] for r in replies] == [1, 2, 3]
            assert proc.returncode == 0
        finally:
            proc.kill()

    def test_unparseable_line_kills_worker_with_diagnostic(self):
        proc = subprocess.run(
            WORKER + ["--model", "mock"],
            input="this is not json\n",
            capture_output=True, text=True, timeout=30,
        )
        assert proc.returncode == 1
        assert "fatal" in proc.stderr

    def test_unknown_model_descriptor(self):
        proc = subprocess.run(
            WORKER + ["--model", "ouija"],
            input="", capture_output=True, text=True, timeout=30,
        )
        assert proc.returncode == 1
        assert "unknown model" in proc.stderr


class TestSocketMode:
    def test_meta_over_unix_socket(self, tmp_path):
        path = str(tmp_path / "worker.sock")
        result = {}

        def serve_once():
            result["code"] = serve_socket(MockModel(seed=2), path)

        thread = threading.Thread(target=serve_once)
        thread.start()
        for _ in range(200):
            if os.path.exists(path):
                break
            thread.join(timeout=0.01)
        client = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        client.connect(path)
        with client:
            fh = client.makefile("rw", encoding="utf-8")
            fh.write(json.dumps(META) + "\n")
            fh.flush()
            reply = json.loads(fh.readline())
            assert reply["id"] == 1 and reply["vocab_size"] == 34
            fh.write(json.dumps({"v": 1, "id": 2, "op": "shutdown"}) + "\n")
            fh.flush()
            assert json.loads(fh.readline()) == {"id": 2, "op": "shutdown"}
        thread.join(timeout=10)
        assert result["code"] == 0


def test_load_model_descriptor_forms():
    assert load_model("mock").meta().name == "mock(seed=0)"
    assert load_model("mock:9").meta().name == "mock(seed=9)"
    with pytest.raises(ValueError):
        load_model("hf")  # needs a repo argument: hf:<repo>
