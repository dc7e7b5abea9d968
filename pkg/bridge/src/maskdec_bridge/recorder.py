"""Record real- or mock-model decodes as engine-native trace files.

The maskdec engine owns the decode loop; recording just points its
``bridge`` subcommand at a worker command and collects the trace, so
recorded files are byte-compatible with every engine analysis tool. An
aborted run leaves its incomplete output renamed to ``<path>.partial``
(engine tooling rejects final-less traces outright).
"""

from __future__ import annotations

import argparse
import os
import shlex
import subprocess
import sys
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class RunSpec:
    model: str = "mock"
    seed: int = 0
    gen_len: int = 256
    block_len: int = 32
    scheduler: str = "localleap"
    kappa: Optional[float] = None
    radius_w: Optional[int] = None
    tau: Optional[float] = None
    trace_out: str = "bridge-run.jsonl"
    csv_out: Optional[str] = None
    engine: str = "maskdec"
    extra_worker_args: list[str] = field(default_factory=list)

    def worker_cmd(self) -> str:
        argv = [
            sys.executable,
            "-m",
            "maskdec_bridge.worker",
            "--model",
            self.model,
            "--seed",
            str(self.seed),
            *self.extra_worker_args,
        ]
        return " ".join(shlex.quote(a) for a in argv)

    def engine_argv(self) -> list[str]:
        argv = [
            self.engine,
            "bridge",
            "--worker-cmd",
            self.worker_cmd(),
            "--gen-len",
            str(self.gen_len),
            "--block-len",
            str(self.block_len),
            "--seed",
            str(self.seed),
            "--scheduler",
            self.scheduler,
            "--trace-out",
            self.trace_out,
        ]
        if self.kappa is not None:
            argv += ["--kappa", str(self.kappa)]
        if self.radius_w is not None:
            argv += ["--radius", str(self.radius_w)]
        if self.tau is not None:
            argv += ["--tau", str(self.tau)]
        if self.csv_out:
            argv += ["--csv-out", self.csv_out]
        return argv


@dataclass
class RecordResult:
    trace_path: str
    completed: bool
    engine_exit: int


def record(spec: RunSpec) -> RecordResult:
    """Drive one engine decode through the worker; returns the trace path.

    On engine failure any written trace is renamed with a ``.partial``
    suffix so downstream tooling cannot mistake it for a finished run.
    """
    proc = subprocess.run(spec.engine_argv())
    if proc.returncode == 0:
        return RecordResult(trace_path=spec.trace_out, completed=True, engine_exit=0)
    partial = spec.trace_out + ".partial"
    if os.path.exists(spec.trace_out):
        os.replace(spec.trace_out, partial)
    return RecordResult(trace_path=partial, completed=False, engine_exit=proc.returncode)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="maskdec-record", description=__doc__)
    ap.add_argument("--model", default="mock", help="mock | mock:<seed> | hf:<repo>")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gen-len", dest="gen_len", type=int, default=256)
    ap.add_argument("--block-len", dest="block_len", type=int, default=32)
    ap.add_argument("--scheduler", default="localleap")
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--radius", dest="radius_w", type=int)
    ap.add_argument("--tau", type=float)
    ap.add_argument("--trace-out", dest="trace_out", default="bridge-run.jsonl")
    ap.add_argument("--csv-out", dest="csv_out")
    ap.add_argument("--engine", default="maskdec", help="engine executable")
    args = ap.parse_args(argv)
    spec = RunSpec(**vars(args))
    result = record(spec)
    status = "complete" if result.completed else f"PARTIAL (engine exit {result.engine_exit})"
    print(f"{result.trace_path}: {status}")
    return 0 if result.completed else 1


if __name__ == "__main__":
    sys.exit(main())
