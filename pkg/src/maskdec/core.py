"""Domain types for masked-sequence decoding.

A decode works on a fixed-length response whose cells start masked and get
committed left-to-right in blocks. Everything here is a value type: no
behavior beyond construction, validation, and (de)serialization of the
line-delimited trace format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional

TRACE_VERSION = 1

# A commit set maps masked response positions to the token committed there.
CommitSet = dict[int, int]


@dataclass(frozen=True)
class Vocab:
    """Token id space with the two reserved ids every decode needs."""

    size: int
    mask_id: int
    eos_id: int

    def __post_init__(self) -> None:
        if self.size < 3:
            raise ValueError(f"vocab size must be >= 3, got {self.size}")
        for name in ("mask_id", "eos_id"):
            tok = getattr(self, name)
            if not 0 <= tok < self.size:
                raise ValueError(f"{name}={tok} outside vocab of size {self.size}")
        if self.mask_id == self.eos_id:
            raise ValueError("mask_id and eos_id must differ")

    def usable_tokens(self) -> tuple[int, ...]:
        """Ids that may appear in generated text (excludes mask and eos)."""
        return tuple(t for t in range(self.size) if t not in (self.mask_id, self.eos_id))


@dataclass(frozen=True)
class SequenceState:
    """Prompt plus partially masked response under block discipline.

    ``response`` cells are token ids once committed and ``None`` while
    masked. States are immutable; `with_commits` returns the successor.
    """

    prompt: tuple[int, ...]
    response: tuple[Optional[int], ...]
    block_len: int
    vocab: Vocab
    step: int = 0

    def __post_init__(self) -> None:
        if self.block_len <= 0:
            raise ValueError("block_len must be positive")
        if len(self.response) == 0:
            raise ValueError("response must be non-empty")
        if len(self.response) % self.block_len != 0:
            raise ValueError(
                f"gen_len {len(self.response)} is not a multiple of block_len {self.block_len}"
            )
        if self.step < 0:
            raise ValueError("step must be non-negative")
        for tok in self.prompt:
            if not 0 <= tok < self.vocab.size:
                raise ValueError(f"prompt token {tok} outside vocab")
            if tok == self.vocab.mask_id:
                raise ValueError("prompt must not contain the mask id")
        for i, cell in enumerate(self.response):
            if cell is None:
                continue
            if not 0 <= cell < self.vocab.size or cell == self.vocab.mask_id:
                raise ValueError(f"committed cell {i} holds invalid token {cell}")
        self._check_block_discipline()

    def _check_block_discipline(self) -> None:
        # A committed cell in block b requires all earlier blocks complete.
        seen_incomplete = False
        for b in range(self.num_blocks):
            lo, hi = b * self.block_len, (b + 1) * self.block_len
            block = self.response[lo:hi]
            if seen_incomplete and any(c is not None for c in block):
                raise ValueError(
                    f"block discipline violated: block {b} has commits while an earlier "
                    "block is incomplete"
                )
            if any(c is None for c in block):
                seen_incomplete = True

    @property
    def gen_len(self) -> int:
        return len(self.response)

    @property
    def num_blocks(self) -> int:
        return len(self.response) // self.block_len

    def masked_positions(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.response) if c is None)

    def is_complete(self) -> bool:
        return all(c is not None for c in self.response)

    def active_block(self) -> tuple[int, int]:
        """Half-open index range of the lowest block containing a masked cell."""
        for i, cell in enumerate(self.response):
            if cell is None:
                b = i // self.block_len
                return b * self.block_len, (b + 1) * self.block_len
        raise ValueError("fully committed state has no active block")

    def with_commits(self, commits: Mapping[int, int]) -> "SequenceState":
        """Apply a commit set and advance the step counter.

        Commits must target masked positions inside the active block; the
        block-discipline invariant is re-checked on construction.
        """
        if not commits:
            raise ValueError("empty commit set")
        lo, hi = self.active_block()
        cells = list(self.response)
        for pos, tok in commits.items():
            if not lo <= pos < hi:
                raise ValueError(f"commit at {pos} outside active block [{lo},{hi})")
            if cells[pos] is not None:
                raise ValueError(f"position {pos} is already committed")
            cells[pos] = tok
        return replace(self, response=tuple(cells), step=self.step + 1)

    def final_tokens(self) -> tuple[int, ...]:
        if not self.is_complete():
            raise ValueError("state is not fully committed")
        return tuple(c for c in self.response if c is not None)


def new_state(
    prompt: Iterable[int], gen_len: int, block_len: int, vocab: Vocab
) -> SequenceState:
    """Fresh all-masked state at step 0. gen_len must be a multiple of block_len."""
    if gen_len <= 0:
        raise ValueError("gen_len must be positive")
    return SequenceState(
        prompt=tuple(prompt),
        response=(None,) * gen_len,
        block_len=block_len,
        vocab=vocab,
    )


def active_block(state: SequenceState) -> tuple[int, int]:
    return state.active_block()


@dataclass(frozen=True)
class StepPredictions:
    """Top-1 prediction and confidence per masked position (one step).

    ``dists`` optionally carries the full categorical distribution each
    entry was read from (only the enumerable joint predictor fills it);
    when present, the confidence must equal the distribution maximum.
    """

    entries: Mapping[int, tuple[int, float]]
    dists: Optional[Mapping[int, tuple[float, ...]]] = None

    def __post_init__(self) -> None:
        for pos, (tok, conf) in self.entries.items():
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"confidence {conf} at position {pos} outside [0,1]")
        if self.dists is not None:
            for pos, dist in self.dists.items():
                if pos not in self.entries:
                    raise ValueError(f"distribution for unknown position {pos}")
                conf = self.entries[pos][1]
                if abs(max(dist) - conf) > 1e-9:
                    raise ValueError(
                        f"confidence {conf} at position {pos} != max of distribution"
                    )

    def positions(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries))

    def token(self, pos: int) -> int:
        return self.entries[pos][0]

    def confidence(self, pos: int) -> float:
        return self.entries[pos][1]

    def restrict(self, lo: int, hi: int) -> "StepPredictions":
        """Entries for positions in [lo, hi) only."""
        kept = {p: v for p, v in self.entries.items() if lo <= p < hi}
        dists = None
        if self.dists is not None:
            dists = {p: d for p, d in self.dists.items() if lo <= p < hi}
        return StepPredictions(entries=kept, dists=dists)

    def validate_against(self, state: SequenceState) -> None:
        masked = set(state.masked_positions())
        bad = set(self.entries) - masked
        if bad:
            raise ValueError(f"predictions for non-masked positions: {sorted(bad)}")


SCHEDULER_VARIANTS = ("sequential", "topk", "threshold", "localleap")


@dataclass(frozen=True)
class SchedulerConfig:
    """Which transition rule to run and its hyperparameters.

    kappa above 1.0 is a valid sentinel: it makes anchors unattainable so
    the localleap variant degenerates to sequential decoding.
    """

    variant: str = "localleap"
    kappa: float = 0.9
    radius_w: int = 4
    tau: float = 0.75
    threshold: float = 0.9
    k: int = 1

    def __post_init__(self) -> None:
        if self.variant not in SCHEDULER_VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {SCHEDULER_VARIANTS}"
            )
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.radius_w < 0:
            raise ValueError("radius_w must be non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if self.k <= 0:
            raise ValueError("k must be a positive integer")
        if self.variant == "localleap" and self.tau > self.kappa:
            raise ValueError(f"localleap requires tau <= kappa, got tau={self.tau} > kappa={self.kappa}")


@dataclass(frozen=True)
class TraceMeta:
    vocab: Vocab
    prompt: tuple[int, ...]
    gen_len: int
    block_len: int
    scheduler: SchedulerConfig
    predictor: str
    seed: int


@dataclass(frozen=True)
class TraceStep:
    """One engine step: predictions snapshot, commits, optional cluster row."""

    s: int
    predictions: tuple[tuple[int, int, float], ...]  # (position, token, confidence)
    commits: tuple[tuple[int, int], ...]  # (position, token)
    anchors: Optional[tuple[int, ...]] = None
    neighbors: Optional[tuple[int, ...]] = None
    fallback: Optional[bool] = None

    def has_clusters(self) -> bool:
        return self.anchors is not None


@dataclass(frozen=True)
class DecodeTrace:
    """Append-only record of a whole decode; the unit of analysis and replay."""

    meta: TraceMeta
    steps: tuple[TraceStep, ...] = ()
    final: tuple[int, ...] = ()

    def validate(self) -> None:
        """Check step contiguity, commit/final consistency, and replayability."""
        for idx, st in enumerate(self.steps):
            if st.s != idx + 1:
                raise ValueError(f"step indices not contiguous from 1 at record {idx}")
        if len(self.final) != self.meta.gen_len:
            raise ValueError("final length differs from gen_len")
        if self.replay_final() != self.final:
            raise ValueError("replaying commits does not reproduce the final response")

    def replay_final(self) -> tuple[int, ...]:
        """Re-apply every commit set to a fresh state; returns the rebuilt response."""
        state = new_state(self.meta.prompt, self.meta.gen_len, self.meta.block_len, self.meta.vocab)
        for st in self.steps:
            state = state.with_commits(dict(st.commits))
        return state.final_tokens()


# --- trace serialization -----------------------------------------------------
#
# Line-delimited canonical JSON: line 1 is the meta record, then one step
# record per engine step, and a final record last. Canonical form (sorted
# keys, no whitespace, shortest-repr floats) makes files byte-identical
# across runs and platforms for identical inputs.


def _canon(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _meta_record(meta: TraceMeta) -> dict:
    return {
        "type": "meta",
        "version": TRACE_VERSION,
        "vocab_size": meta.vocab.size,
        "mask_id": meta.vocab.mask_id,
        "eos_id": meta.vocab.eos_id,
        "prompt": list(meta.prompt),
        "gen_len": meta.gen_len,
        "block_len": meta.block_len,
        "scheduler": {
            "variant": meta.scheduler.variant,
            "kappa": meta.scheduler.kappa,
            "radius_w": meta.scheduler.radius_w,
            "tau": meta.scheduler.tau,
            "threshold": meta.scheduler.threshold,
            "k": meta.scheduler.k,
        },
        "predictor": meta.predictor,
        "seed": meta.seed,
    }


def _step_record(step: TraceStep) -> dict:
    rec: dict = {
        "type": "step",
        "s": step.s,
        "predictions": [[p, t, c] for p, t, c in step.predictions],
        "commits": [[p, t] for p, t in step.commits],
    }
    if step.has_clusters():
        rec["anchors"] = list(step.anchors or ())
        rec["neighbors"] = list(step.neighbors or ())
        rec["fallback"] = bool(step.fallback)
    return rec


def trace_to_lines(trace: DecodeTrace) -> list[str]:
    lines = [_canon(_meta_record(trace.meta))]
    for st in trace.steps:
        lines.append(_canon(_step_record(st)))
    lines.append(_canon({"type": "final", "tokens": list(trace.final)}))
    return lines


def write_trace(trace: DecodeTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in trace_to_lines(trace):
            fh.write(line + "\n")


class TraceWriter:
    """Streams trace records to disk as a decode progresses.

    Files are append-only: the meta record lands before the first step,
    each step flushes when committed, and the final record only appears
    once the run completes. A run killed mid-decode therefore leaves a
    valid prefix without a final record, which `read_trace` rejects, so
    partial files cannot masquerade as finished runs. Byte output is
    identical to ``write_trace`` on the completed trace.
    """

    def __init__(self, path: str):
        self._fh = open(path, "w", encoding="utf-8")
        self._stage = "meta"

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _emit(self, record: dict) -> None:
        self._fh.write(_canon(record) + "\n")
        self._fh.flush()

    def write_meta(self, meta: TraceMeta) -> None:
        if self._stage != "meta":
            raise ValueError("meta record must come first and only once")
        self._emit(_meta_record(meta))
        self._stage = "steps"

    def write_step(self, step: TraceStep) -> None:
        if self._stage != "steps":
            raise ValueError(f"step record not allowed in stage {self._stage!r}")
        self._emit(_step_record(step))

    def write_final(self, tokens: tuple[int, ...]) -> None:
        if self._stage != "steps":
            raise ValueError(f"final record not allowed in stage {self._stage!r}")
        self._emit({"type": "final", "tokens": list(tokens)})
        self._stage = "done"

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def _parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed trace line {lineno}: {exc}") from exc
    if not isinstance(rec, dict) or "type" not in rec:
        raise ValueError(f"malformed trace line {lineno}: not a typed record")
    return rec


def trace_from_lines(lines: Iterable[str]) -> DecodeTrace:
    meta: Optional[TraceMeta] = None
    steps: list[TraceStep] = []
    final: Optional[tuple[int, ...]] = None
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        rec = _parse_record(raw, lineno)
        kind = rec["type"]
        if kind == "meta":
            if lineno != 1:
                raise ValueError(f"meta record on line {lineno}, expected line 1")
            if rec.get("version") != TRACE_VERSION:
                raise ValueError(f"unsupported trace version {rec.get('version')}")
            meta = TraceMeta(
                vocab=Vocab(rec["vocab_size"], rec["mask_id"], rec["eos_id"]),
                prompt=tuple(rec["prompt"]),
                gen_len=rec["gen_len"],
                block_len=rec["block_len"],
                scheduler=SchedulerConfig(**rec["scheduler"]),
                predictor=rec["predictor"],
                seed=rec["seed"],
            )
        elif kind == "step":
            if meta is None:
                raise ValueError(f"step record before meta on line {lineno}")
            if final is not None:
                raise ValueError(f"step record after final on line {lineno}")
            steps.append(
                TraceStep(
                    s=rec["s"],
                    predictions=tuple((p, t, c) for p, t, c in rec["predictions"]),
                    commits=tuple((p, t) for p, t in rec["commits"]),
                    anchors=tuple(rec["anchors"]) if "anchors" in rec else None,
                    neighbors=tuple(rec["neighbors"]) if "neighbors" in rec else None,
                    fallback=rec.get("fallback"),
                )
            )
        elif kind == "final":
            final = tuple(rec["tokens"])
        else:
            raise ValueError(f"unknown record type {kind!r} on line {lineno}")
    if meta is None:
        raise ValueError("trace has no meta record")
    if final is None:
        raise ValueError("trace has no final record (incomplete or truncated run)")
    trace = DecodeTrace(meta=meta, steps=tuple(steps), final=final)
    trace.validate()
    return trace


def read_trace(path: str) -> DecodeTrace:
    with open(path, "r", encoding="utf-8") as fh:
        return trace_from_lines(fh)
