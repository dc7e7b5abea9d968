"""Shared fixtures: the hand-walked 5-step trace and its paper goldens."""

from maskdec.core import DecodeTrace, SchedulerConfig, TraceMeta, TraceStep, Vocab

FIX_VOCAB = Vocab(size=6, mask_id=0, eos_id=1)

# Golden values, derived by walking the fixture by hand:
GOLDEN_EARLIEST = {0: 1, 1: 1, 2: 3, 3: 4, 4: 1}
GOLDEN_COMMIT_STEPS = {0: 1, 1: 2, 2: 3, 3: 4, 4: 5}
GOLDEN_BLOCK_HIST = [3, 1, 1, 0]  # quartile counts of (earliest-1)/5
GOLDEN_BIN_COUNTS = {  # conf bin lower edge -> (count, consistent)
    0.3: (2, 2),
    0.4: (3, 1),
    0.5: (3, 2),
    0.6: (2, 2),
    0.7: (2, 2),
    0.8: (2, 2),
    0.9: (1, 1),
}


def fixture_trace() -> DecodeTrace:
    """Hand-walked 5-step sequential-style trace.

    final = (2, 3, 4, 5, 2); one commit per step in position order.
    Position 3's prediction flips at step 3 and recovers (earliest stable
    step 4); position 2 is wrong until its commit at step 3.
    """
    meta = TraceMeta(
        vocab=FIX_VOCAB,
        prompt=(2, 3),
        gen_len=5,
        block_len=5,
        scheduler=SchedulerConfig(variant="sequential"),
        predictor="fixture",
        seed=0,
    )
    steps = (
        TraceStep(
            s=1,
            predictions=((0, 2, 0.95), (1, 3, 0.55), (2, 5, 0.45), (3, 5, 0.62), (4, 2, 0.30)),
            commits=((0, 2),),
        ),
        TraceStep(
            s=2,
            predictions=((1, 3, 0.70), (2, 5, 0.50), (3, 5, 0.65), (4, 2, 0.35)),
            commits=((1, 3),),
        ),
        TraceStep(
            s=3,
            predictions=((2, 4, 0.72), (3, 2, 0.40), (4, 2, 0.45)),
            commits=((2, 4),),
        ),
        TraceStep(
            s=4,
            predictions=((3, 5, 0.80), (4, 2, 0.55)),
            commits=((3, 5),),
        ),
        TraceStep(
            s=5,
            predictions=((4, 2, 0.85),),
            commits=((4, 2),),
        ),
    )
    trace = DecodeTrace(meta=meta, steps=steps, final=(2, 3, 4, 5, 2))
    trace.validate()
    return trace
