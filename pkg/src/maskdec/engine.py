"""Decode loop: predict, select, commit, advance.

One engine step is one predictor call. Predictions are requested for every
masked position (so traces support cross-block distance analysis) but the
scheduler only sees the active block, preserving semi-autoregressive
discipline. The loop runs until the response is fully committed and can
never take more than gen_len steps; exceeding that signals a scheduler
that broke the progress contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (
    DecodeTrace,
    SchedulerConfig,
    SequenceState,
    StepPredictions,
    TraceMeta,
    TraceStep,
    TraceWriter,
)
from .schedulers import select

Predictor = Callable[[SequenceState], StepPredictions]


class SchedulerContractError(RuntimeError):
    """A scheduler failed to make progress within the step budget."""


@dataclass
class RunMetrics:
    total_steps: int
    tokens_per_step: list[int] = field(default_factory=list)
    predictor_calls: int = 0
    match_rate_vs_reference: Optional[float] = None


def _describe(predictor: Predictor) -> str:
    describe = getattr(predictor, "describe", None)
    if callable(describe):
        return describe()
    return getattr(predictor, "__name__", type(predictor).__name__)


def decode(
    state: SequenceState,
    predictor: Predictor,
    scheduler_cfg: SchedulerConfig,
    *,
    seed: int = 0,
    predictor_desc: Optional[str] = None,
    sink: Optional[TraceWriter] = None,
) -> tuple[tuple[int, ...], DecodeTrace, RunMetrics]:
    """Run a full decode from a fresh state; returns (final, trace, metrics).

    With a ``sink`` the trace streams to disk record by record, so an
    aborted run still leaves every completed step behind (without a final
    record, which marks the file as partial).
    """
    if state.step != 0 or not all(c is None for c in state.response):
        raise ValueError("decode requires a fresh state (step 0, all cells masked)")

    meta = TraceMeta(
        vocab=state.vocab,
        prompt=state.prompt,
        gen_len=state.gen_len,
        block_len=state.block_len,
        scheduler=scheduler_cfg,
        predictor=predictor_desc or _describe(predictor),
        seed=seed,
    )
    if sink is not None:
        sink.write_meta(meta)
    steps: list[TraceStep] = []
    tokens_per_step: list[int] = []

    while not state.is_complete():
        preds = predictor(state)
        preds.validate_against(state)
        block = state.active_block()
        commits, report = select(scheduler_cfg, preds.restrict(*block), block)
        if not commits:
            raise SchedulerContractError("scheduler returned an empty commit set")
        state = state.with_commits(commits)
        step = TraceStep(
            s=state.step,
            predictions=tuple(
                (p, preds.token(p), preds.confidence(p)) for p in preds.positions()
            ),
            commits=tuple(sorted(commits.items())),
            anchors=report.anchors if report is not None else None,
            neighbors=report.neighbors if report is not None else None,
            fallback=report.fallback_used if report is not None else None,
        )
        steps.append(step)
        if sink is not None:
            sink.write_step(step)
        tokens_per_step.append(len(commits))
        if state.step > state.gen_len:
            raise SchedulerContractError(
                f"step budget exceeded: {state.step} steps for gen_len {state.gen_len}"
            )

    final = state.final_tokens()
    if sink is not None:
        sink.write_final(final)
    trace = DecodeTrace(meta=meta, steps=tuple(steps), final=final)
    metrics = RunMetrics(
        total_steps=len(steps),
        tokens_per_step=tokens_per_step,
        predictor_calls=len(steps),
    )
    return final, trace, metrics


def compare_runs(a: DecodeTrace, b: DecodeTrace) -> tuple[float, float]:
    """(token match rate, step ratio a/b) for two completed traces."""
    if a.meta.gen_len != b.meta.gen_len:
        raise ValueError(
            f"generation length mismatch: {a.meta.gen_len} vs {b.meta.gen_len}"
        )
    matches = sum(1 for x, y in zip(a.final, b.final) if x == y)
    return matches / a.meta.gen_len, len(a.steps) / len(b.steps)


METRICS_CSV_HEADER = "seed,variant,kappa,radius_w,tau,gen_len,block_len,steps,match_rate"


def metrics_csv_row(
    seed: int,
    cfg: SchedulerConfig,
    gen_len: int,
    block_len: int,
    metrics: RunMetrics,
) -> str:
    match = "" if metrics.match_rate_vs_reference is None else repr(metrics.match_rate_vs_reference)
    return (
        f"{seed},{cfg.variant},{cfg.kappa!r},{cfg.radius_w},{cfg.tau!r},"
        f"{gen_len},{block_len},{metrics.total_steps},{match}"
    )
