"""maskdec command line: run / bench / analyze / verify-bounds / bridge.

Configuration resolves in layers: built-in defaults, then the profile,
then the config file (flat ``key = value`` lines), then explicit flags.
Every subcommand is deterministic given its resolved config and seeds.

Exit codes: 0 success, 1 usage or config error, 2 property violation,
3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

from . import analysis
from .bounds import fuzz_bounds
from .bridge_client import BridgeClient, WireProtocolError
from .core import (
    SchedulerConfig,
    TraceWriter,
    Vocab,
    new_state,
    read_trace,
)
from .engine import METRICS_CSV_HEADER, compare_runs, decode, metrics_csv_row
from .predictors import (
    JointPredictor,
    PlantedConfig,
    PlantedPredictor,
    ReplayDivergenceError,
    ReplayPredictor,
    load_joint_model,
    mix64,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_IO = 3

PROFILES = {
    # Anchor boundary 0.9 with radius 4; the dream-like profile raises the
    # relaxed boundary to 0.80.
    "llada-like": {"kappa": 0.9, "radius": 4, "tau": 0.75},
    "dream-like": {"kappa": 0.9, "radius": 4, "tau": 0.80},
}

DEFAULTS = {
    "scheduler": "localleap",
    "kappa": 0.9,
    "radius": 4,
    "tau": 0.75,
    "threshold": 0.9,
    "k": 1,
    "gen_len": 256,
    "block_len": 32,
    "vocab_size": 34,
    "prompt_len": 8,
    "predictor": "planted",
    "workers": 1,
    "planted.c_base": 0.55,
    "planted.w_local": 0.5,
    "planted.local_radius": 4,
    "planted.noise_amp": 0.10,
    "planted.correct_gate": 0.60,
}

_KEY_TYPES = {
    "scheduler": str,
    "kappa": float,
    "radius": int,
    "tau": float,
    "threshold": float,
    "k": int,
    "gen_len": int,
    "block_len": int,
    "vocab_size": int,
    "prompt_len": int,
    "predictor": str,
    "workers": int,
    "seed": int,
    "seeds": str,
    "profile": str,
    "trace_out": str,
    "csv_out": str,
    "sweep": str,
    "worker_cmd": str,
    "planted.c_base": float,
    "planted.w_local": float,
    "planted.local_radius": int,
    "planted.noise_amp": float,
    "planted.correct_gate": float,
}


class UsageError(ValueError):
    """Bad flags or config; maps to exit code 1."""


class IoError(RuntimeError):
    """Unreadable or malformed input file; maps to exit code 3."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit 2; spec says 1
        raise UsageError(message)


def parse_config_file(path: str) -> dict:
    values: dict = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _KEY_TYPES:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _KEY_TYPES[key](val)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def parse_seeds(spec_single: Optional[int], spec_many: Optional[str]) -> list[int]:
    if spec_many:
        text = str(spec_many)
        if ":" in text:
            lo, _, hi = text.partition(":")
            try:
                lo_i, hi_i = int(lo), int(hi)
            except ValueError as exc:
                raise UsageError(f"bad seed range {text!r}") from exc
            if hi_i <= lo_i:
                raise UsageError(f"empty seed range {text!r}")
            return list(range(lo_i, hi_i))
        try:
            return [int(s) for s in text.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad seed list {text!r}") from exc
    return [spec_single if spec_single is not None else 0]


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    profile = getattr(args, "profile", None)
    if profile:
        if profile not in PROFILES:
            raise UsageError(f"unknown profile {profile!r}")
        cfg.update(PROFILES[profile])
    config_path = getattr(args, "config", None)
    if config_path:
        cfg.update(parse_config_file(config_path))
    flag_map = {
        "scheduler": "scheduler",
        "kappa": "kappa",
        "radius": "radius",
        "tau": "tau",
        "threshold": "threshold",
        "k": "k",
        "gen_len": "gen_len",
        "block_len": "block_len",
        "vocab_size": "vocab_size",
        "prompt_len": "prompt_len",
        "predictor": "predictor",
        "workers": "workers",
        "trace_out": "trace_out",
        "csv_out": "csv_out",
        "sweep": "sweep",
        "worker_cmd": "worker_cmd",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    seed_flag = getattr(args, "seed", None)
    seeds_flag = getattr(args, "seeds", None)
    if seed_flag is None and seeds_flag is None:
        # fall back to config-file values when no flag was given
        seed_flag = cfg.get("seed")
        seeds_flag = cfg.get("seeds") if not isinstance(cfg.get("seeds"), list) else None
    cfg.pop("seed", None)
    cfg["seeds"] = parse_seeds(seed_flag, seeds_flag)
    return cfg


def print_config(cfg: dict) -> None:
    for key in sorted(cfg):
        val = cfg[key]
        if key == "seeds":
            val = ",".join(str(s) for s in val)
        print(f"{key} = {val}")


def scheduler_from(cfg: dict, **overrides) -> SchedulerConfig:
    try:
        return SchedulerConfig(
            variant=overrides.get("variant", cfg["scheduler"]),
            kappa=overrides.get("kappa", cfg["kappa"]),
            radius_w=overrides.get("radius_w", cfg["radius"]),
            tau=overrides.get("tau", cfg["tau"]),
            threshold=overrides.get("threshold", cfg["threshold"]),
            k=overrides.get("k", cfg["k"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def synth_prompt(seed: int, length: int, vocab: Vocab) -> tuple[int, ...]:
    """Deterministic desk-scale prompt: hashed usable tokens."""
    usable = vocab.usable_tokens()
    return tuple(usable[mix64(seed * 1000003 + i) % len(usable)] for i in range(length))


def build_predictor(cfg: dict, seed: int, gen_len: int):
    """Returns (predictor, vocab, gen_len, block_len) for one run."""
    desc = str(cfg["predictor"])
    name, _, arg = desc.partition(":")
    block_len = int(cfg["block_len"])
    if name == "planted":
        vocab = Vocab(size=int(cfg["vocab_size"]), mask_id=0, eos_id=1)
        pcfg = PlantedConfig(
            seed=seed,
            target_len=gen_len,
            c_base=float(cfg["planted.c_base"]),
            w_local=float(cfg["planted.w_local"]),
            local_radius=int(cfg["planted.local_radius"]),
            noise_amp=float(cfg["planted.noise_amp"]),
            correct_gate=float(cfg["planted.correct_gate"]),
        )
        return PlantedPredictor(pcfg), vocab, gen_len, block_len
    if name == "joint":
        if not arg:
            raise UsageError("predictor joint requires a path: joint:FILE")
        try:
            jm = load_joint_model(arg)
        except OSError as exc:
            raise IoError(f"cannot read joint model {arg}: {exc}") from exc
        vocab = Vocab(size=jm.vocab_size + 2, mask_id=0, eos_id=1)
        return JointPredictor(jm), vocab, jm.n, jm.n
    if name == "replay":
        if not arg:
            raise UsageError("predictor replay requires a path: replay:FILE")
        trace = _read_trace_io(arg)
        meta = trace.meta
        return ReplayPredictor(trace), meta.vocab, meta.gen_len, meta.block_len
    if name == "bridge":
        cmd = arg or cfg.get("worker_cmd")
        if not cmd:
            raise UsageError("predictor bridge requires a worker command")
        client = BridgeClient(cmd)
        return client, client.vocab(), gen_len, block_len
    raise UsageError(f"unknown predictor {desc!r}")


def _read_trace_io(path: str):
    try:
        return read_trace(path)
    except OSError as exc:
        raise IoError(f"cannot read trace {path}: {exc}") from exc
    except ValueError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _trace_path(template: str, seed: int, many: bool) -> str:
    if "{seed}" in template:
        return template.replace("{seed}", str(seed))
    if not many:
        return template
    root, ext = os.path.splitext(template)
    return f"{root}.seed{seed}{ext or '.jsonl'}"


def _write_lines(path: Optional[str], lines: Sequence[str]) -> None:
    if path is None:
        for line in lines:
            print(line)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _single_run(cfg: dict, seed: int, sched: SchedulerConfig, trace_path=None):
    predictor, vocab, gen_len, block_len = build_predictor(cfg, seed, int(cfg["gen_len"]))
    sink = None
    try:
        if gen_len % block_len != 0:
            raise UsageError(
                f"gen_len {gen_len} is not a multiple of block_len {block_len}"
            )
        if str(cfg["predictor"]).startswith("replay"):
            prompt = predictor.trace.meta.prompt  # type: ignore[attr-defined]
        elif str(cfg["predictor"]).startswith("joint"):
            prompt = ()
        else:
            prompt = synth_prompt(seed, int(cfg["prompt_len"]), vocab)
        state = new_state(prompt, gen_len, block_len, vocab)
        sink = TraceWriter(trace_path) if trace_path else None
        return decode(state, predictor, sched, seed=seed, sink=sink)
    finally:
        if sink is not None:
            sink.close()
        if isinstance(predictor, BridgeClient):
            predictor.close()


def _run_one_seed(payload):
    cfg, seed, sched_kw, trace_path = payload
    sched = SchedulerConfig(**sched_kw)
    final, trace, metrics = _single_run(cfg, seed, sched, trace_path=trace_path)
    return seed, trace, metrics


def _fan_out(cfg: dict, seeds: list[int], sched: SchedulerConfig, trace_template=None):
    """Run one decode per seed, optionally across a process pool."""
    sched_kw = dict(
        variant=sched.variant, kappa=sched.kappa, radius_w=sched.radius_w,
        tau=sched.tau, threshold=sched.threshold, k=sched.k,
    )
    many = len(seeds) > 1
    payloads = [
        (cfg, seed, sched_kw,
         _trace_path(trace_template, seed, many) if trace_template else None)
        for seed in seeds
    ]
    workers = int(cfg.get("workers", 1))
    if workers > 1 and len(seeds) > 1 and not str(cfg["predictor"]).startswith("bridge"):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_seed, payloads))
    else:
        results = [_run_one_seed(p) for p in payloads]
    return sorted(results, key=lambda r: seeds.index(r[0]))


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.print_config:
        print_config(cfg)
        return EXIT_OK
    sched = scheduler_from(cfg)
    seeds = cfg["seeds"]
    trace_template = str(cfg["trace_out"]) if cfg.get("trace_out") else None
    results = _fan_out(cfg, seeds, sched, trace_template=trace_template)

    csv_rows = [METRICS_CSV_HEADER]
    for seed, trace, metrics in results:
        csv_rows.append(
            metrics_csv_row(seed, sched, trace.meta.gen_len, trace.meta.block_len, metrics)
        )
        print(f"seed {seed}: steps={metrics.total_steps} gen_len={trace.meta.gen_len}")
    if cfg.get("csv_out"):
        _write_lines(str(cfg["csv_out"]), csv_rows)
    return EXIT_OK


SWEEPABLE = {"kappa": "kappa", "w": "radius_w", "radius": "radius_w", "tau": "tau"}


def parse_sweep(text: str) -> tuple[str, list[float]]:
    if "," in text or text.count("=") != 1:
        raise UsageError("sweep must cover exactly one parameter: name=start:stop:step")
    name, _, span = text.partition("=")
    name = name.strip().lower()
    if name not in SWEEPABLE:
        raise UsageError(f"cannot sweep {name!r}; choose one of kappa, w, tau")
    parts = span.split(":")
    if len(parts) != 3:
        raise UsageError(f"bad sweep span {span!r}; expected start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"bad sweep span {span!r}") from exc
    if step <= 0 or stop < start:
        raise UsageError("sweep needs stop >= start and step > 0")
    values, v, i = [], start, 0
    while v <= stop + 1e-9:
        values.append(round(v, 10))
        i += 1
        v = start + i * step
    return SWEEPABLE[name], values


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.print_config:
        print_config(cfg)
        return EXIT_OK
    if not cfg.get("sweep"):
        raise UsageError("bench requires --sweep name=start:stop:step")
    param, values = parse_sweep(str(cfg["sweep"]))
    seeds = cfg["seeds"]
    base = scheduler_from(cfg)

    # Sequential reference runs: one per seed, shared by every sweep point.
    ref = {
        seed: trace
        for seed, trace, _ in _fan_out(cfg, seeds, SchedulerConfig(variant="sequential"))
    }

    rows = ["param,value,mean_steps,mean_match_rate,mean_tokens_per_step"]
    for value in values:
        swept = replace(base, **{param: int(value) if param == "radius_w" else value})
        results = _fan_out(cfg, seeds, swept)
        steps, match = [], []
        for seed, trace, metrics in results:
            steps.append(metrics.total_steps)
            rate, _ = compare_runs(trace, ref[seed])
            match.append(rate)
        mean_steps = sum(steps) / len(steps)
        mean_match = sum(match) / len(match)
        gen_len = ref[seeds[0]].meta.gen_len
        rows.append(
            f"{param},{value!r},{mean_steps!r},{mean_match!r},{gen_len / mean_steps!r}"
        )
        print(rows[-1])
    if cfg.get("csv_out"):
        _write_lines(str(cfg["csv_out"]), rows)
    return EXIT_OK


REPORTS = ("delayed", "bins", "heatmap", "effective-m")


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.report not in REPORTS:
        raise UsageError(f"unknown report {args.report!r}; choose from {REPORTS}")
    if not args.traces:
        raise UsageError("at least one trace file is required")
    traces = [_read_trace_io(p) for p in args.traces]
    if args.report != "heatmap" and len(traces) > 1:
        raise UsageError(f"report {args.report!r} reads a single trace")
    try:
        if args.report == "heatmap":
            hm = analysis.distance_heatmap(traces, center_rule=args.center)
            lines = hm.csv_lines()
            if args.svg_out:
                _write_lines(args.svg_out, [analysis.heatmap_svg(hm)])
        elif args.report == "delayed":
            lines = analysis.earliest_stable_steps(traces[0]).csv_lines()
        elif args.report == "bins":
            lines = analysis.bins_csv_lines(analysis.confidence_consistency_bins(traces[0]))
        else:
            lines = analysis.effective_m(traces[0]).csv_lines()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_lines(args.csv_out, lines)
    return EXIT_OK


def cmd_verify_bounds(args: argparse.Namespace) -> int:
    try:
        report = fuzz_bounds(
            n_max=args.n_max,
            v_max=args.v_max,
            kappa=args.kappa if args.kappa is not None else 0.9,
            tau=args.tau if args.tau is not None else 0.75,
            instances=args.instances,
            seed=args.seed if args.seed is not None else 0,
            require_certified=args.require_certified,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.csv_out:
        _write_lines(args.csv_out, report.csv_lines())
    checked = len(report.instances)
    print(
        f"instances={checked} skipped_uncertified={report.skipped_uncertified} "
        f"violations={report.violation_count}"
    )
    return EXIT_OK if report.violation_count == 0 else EXIT_VIOLATION


def cmd_bridge(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.get("worker_cmd"):
        raise UsageError("bridge requires --worker-cmd")
    cfg["predictor"] = "bridge"
    if args.print_config:
        print_config(cfg)
        return EXIT_OK
    sched = scheduler_from(cfg)
    seeds = cfg["seeds"]
    csv_rows = [METRICS_CSV_HEADER]
    for seed in seeds:
        trace_path = (
            _trace_path(str(cfg["trace_out"]), seed, len(seeds) > 1)
            if cfg.get("trace_out") else None
        )
        final, trace, metrics = _single_run(cfg, seed, sched, trace_path=trace_path)
        csv_rows.append(
            metrics_csv_row(seed, sched, trace.meta.gen_len, trace.meta.block_len, metrics)
        )
        print(f"seed {seed}: steps={metrics.total_steps} gen_len={trace.meta.gen_len}")
    if cfg.get("csv_out"):
        _write_lines(str(cfg["csv_out"]), csv_rows)
    return EXIT_OK


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="hyperparameter profile")
    p.add_argument("--scheduler", choices=("sequential", "topk", "threshold", "localleap"))
    p.add_argument("--kappa", type=float, help="anchor trigger boundary")
    p.add_argument("--radius", type=int, help="neighborhood radius W")
    p.add_argument("--tau", type=float, help="relaxed neighbor boundary")
    p.add_argument("--threshold", type=float, help="threshold-variant boundary")
    p.add_argument("--k", type=int, help="top-k commit count")
    p.add_argument("--gen-len", dest="gen_len", type=int)
    p.add_argument("--block-len", dest="block_len", type=int)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--prompt-len", dest="prompt_len", type=int)
    p.add_argument("--seed", type=int, help="single seed")
    p.add_argument("--seeds", help="seed range lo:hi or comma list")
    p.add_argument("--predictor", help="planted | joint:FILE | replay:FILE | bridge:CMD")
    p.add_argument("--trace-out", dest="trace_out", help="trace path ({seed} substituted)")
    p.add_argument("--csv-out", dest="csv_out", help="metrics CSV path")
    p.add_argument("--workers", type=int, help="parallel decode workers")
    p.add_argument("--print-config", dest="print_config", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskdec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="decode with a local predictor")
    _add_decode_flags(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_bench = sub.add_parser("bench", help="univariate hyperparameter sweep")
    _add_decode_flags(p_bench)
    p_bench.add_argument("--sweep", help="kappa|w|tau=start:stop:step (stop inclusive)")
    p_bench.set_defaults(fn=cmd_bench)

    p_an = sub.add_parser("analyze", help="trace reports as CSV")
    p_an.add_argument("--report", required=True, help="delayed | bins | heatmap | effective-m")
    p_an.add_argument("--center", choices=("high", "low"), default="high")
    p_an.add_argument("--csv-out", dest="csv_out")
    p_an.add_argument("--svg-out", dest="svg_out", help="heatmap only: also render an SVG")
    p_an.add_argument("traces", nargs="*", help="trace files")
    p_an.set_defaults(fn=cmd_analyze)

    p_vb = sub.add_parser("verify-bounds", help="fuzz certification and distance bounds")
    p_vb.add_argument("--n-max", dest="n_max", type=int, default=3)
    p_vb.add_argument("--v-max", dest="v_max", type=int, default=4)
    p_vb.add_argument("--kappa", type=float)
    p_vb.add_argument("--tau", type=float)
    p_vb.add_argument("--instances", type=int, default=1000)
    p_vb.add_argument("--seed", type=int)
    p_vb.add_argument("--require-certified", dest="require_certified", action="store_true")
    p_vb.add_argument("--csv-out", dest="csv_out")
    p_vb.set_defaults(fn=cmd_verify_bounds)

    p_br = sub.add_parser("bridge", help="decode through an external worker process")
    _add_decode_flags(p_br)
    p_br.add_argument("--worker-cmd", dest="worker_cmd", help="worker command line")
    p_br.set_defaults(fn=cmd_bridge)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (WireProtocolError, ReplayDivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
