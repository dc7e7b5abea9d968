import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdec.core import (
    DecodeTrace,
    SchedulerConfig,
    SequenceState,
    StepPredictions,
    TraceMeta,
    TraceStep,
    Vocab,
    active_block,
    new_state,
    trace_from_lines,
    trace_to_lines,
)

VOCAB = Vocab(size=8, mask_id=0, eos_id=1)


class TestVocab:
    def test_reserved_ids_must_differ(self):
        with pytest.raises(ValueError):
            Vocab(size=8, mask_id=2, eos_id=2)

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            Vocab(size=2, mask_id=0, eos_id=1)

    def test_ids_inside_vocab(self):
        with pytest.raises(ValueError):
            Vocab(size=8, mask_id=8, eos_id=1)

    def test_usable_tokens_exclude_reserved(self):
        assert VOCAB.usable_tokens() == (2, 3, 4, 5, 6, 7)


class TestNewState:
    def test_construction(self):
        state = new_state([5, 6], gen_len=4, block_len=2, vocab=VOCAB)
        assert state.response == (None, None, None, None)
        assert state.step == 0
        assert state.masked_positions() == (0, 1, 2, 3)

    def test_empty_response_rejected(self):
        with pytest.raises(ValueError):
            new_state([5], gen_len=0, block_len=2, vocab=VOCAB)

    def test_ragged_blocks_rejected(self):
        with pytest.raises(ValueError):
            new_state([5], gen_len=5, block_len=2, vocab=VOCAB)

    def test_mask_in_prompt_rejected(self):
        with pytest.raises(ValueError):
            new_state([5, VOCAB.mask_id], gen_len=4, block_len=2, vocab=VOCAB)

    def test_out_of_vocab_prompt_rejected(self):
        with pytest.raises(ValueError):
            new_state([99], gen_len=4, block_len=2, vocab=VOCAB)


class TestActiveBlock:
    def test_incomplete_first_block(self):
        state = new_state([5], 4, 2, VOCAB).with_commits({0: 3})
        assert active_block(state) == (0, 2)

    def test_block_advance(self):
        state = new_state([5], 4, 2, VOCAB).with_commits({0: 3}).with_commits({1: 4})
        assert active_block(state) == (2, 4)

    def test_fully_committed_errors(self):
        state = new_state([5], 2, 2, VOCAB).with_commits({0: 3, 1: 4})
        with pytest.raises(ValueError):
            active_block(state)


class TestCommits:
    def test_commit_outside_active_block_rejected(self):
        state = new_state([5], 4, 2, VOCAB)
        with pytest.raises(ValueError):
            state.with_commits({2: 3})

    def test_recommit_rejected(self):
        state = new_state([5], 4, 2, VOCAB).with_commits({0: 3})
        with pytest.raises(ValueError):
            state.with_commits({0: 4})

    def test_empty_commit_rejected(self):
        with pytest.raises(ValueError):
            new_state([5], 4, 2, VOCAB).with_commits({})

    def test_step_advances_and_state_is_new(self):
        s0 = new_state([5], 4, 2, VOCAB)
        s1 = s0.with_commits({1: 7})
        assert s0.step == 0 and s1.step == 1
        assert s0.response == (None,) * 4
        assert s1.response == (None, 7, None, None)

    def test_block_discipline_checked_on_construction(self):
        with pytest.raises(ValueError):
            SequenceState(
                prompt=(5,), response=(None, None, 3, None), block_len=2, vocab=VOCAB
            )


class TestStepPredictions:
    def test_confidence_range_enforced(self):
        with pytest.raises(ValueError):
            StepPredictions(entries={0: (3, 1.5)})

    def test_confidence_must_match_distribution_max(self):
        with pytest.raises(ValueError):
            StepPredictions(entries={0: (3, 0.5)}, dists={0: (0.9, 0.1)})

    def test_restrict(self):
        preds = StepPredictions(entries={0: (3, 0.5), 2: (4, 0.6), 5: (5, 0.7)})
        assert preds.restrict(0, 3).positions() == (0, 2)

    def test_validate_against_rejects_committed_positions(self):
        state = new_state([5], 4, 2, VOCAB).with_commits({0: 3})
        preds = StepPredictions(entries={0: (3, 0.5), 1: (4, 0.6)})
        with pytest.raises(ValueError):
            preds.validate_against(state)


class TestSchedulerConfig:
    def test_localleap_requires_tau_at_most_kappa(self):
        with pytest.raises(ValueError):
            SchedulerConfig(variant="localleap", kappa=0.7, tau=0.8)

    def test_kappa_sentinel_above_one_allowed(self):
        cfg = SchedulerConfig(variant="localleap", kappa=1.01, tau=0.75)
        assert cfg.kappa == 1.01

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            SchedulerConfig(variant="beam")


def _tiny_trace() -> DecodeTrace:
    meta = TraceMeta(
        vocab=VOCAB,
        prompt=(5, 6),
        gen_len=2,
        block_len=2,
        scheduler=SchedulerConfig(variant="sequential"),
        predictor="planted(seed=1)",
        seed=1,
    )
    steps = (
        TraceStep(s=1, predictions=((0, 3, 0.8), (1, 4, 0.4)), commits=((0, 3),)),
        TraceStep(s=2, predictions=((1, 4, 0.9),), commits=((1, 4),)),
    )
    return DecodeTrace(meta=meta, steps=steps, final=(3, 4))


class TestTraceSerialization:
    def test_round_trip_identity(self):
        trace = _tiny_trace()
        lines = trace_to_lines(trace)
        back = trace_from_lines(lines)
        assert back == trace
        assert trace_to_lines(back) == lines  # byte-identical re-serialization

    def test_round_trip_with_cluster_rows(self):
        trace = _tiny_trace()
        step = TraceStep(
            s=1,
            predictions=((0, 3, 0.95), (1, 4, 0.8)),
            commits=((0, 3), (1, 4)),
            anchors=(0,),
            neighbors=(1,),
            fallback=False,
        )
        trace = DecodeTrace(meta=trace.meta, steps=(step,), final=(3, 4))
        lines = trace_to_lines(trace)
        assert trace_from_lines(lines) == trace

    def test_contiguous_steps_enforced(self):
        trace = _tiny_trace()
        bad = DecodeTrace(meta=trace.meta, steps=(trace.steps[1],), final=trace.final)
        with pytest.raises(ValueError):
            bad.validate()

    def test_replay_mismatch_detected(self):
        trace = _tiny_trace()
        bad = DecodeTrace(meta=trace.meta, steps=trace.steps, final=(3, 5))
        with pytest.raises(ValueError):
            bad.validate()

    def test_malformed_line_reports_line_number(self):
        lines = trace_to_lines(_tiny_trace())
        lines[1] = "{not json"
        with pytest.raises(ValueError, match="line 2"):
            trace_from_lines(lines)

    def test_truncated_trace_rejected(self):
        lines = trace_to_lines(_tiny_trace())[:-1]
        with pytest.raises(ValueError, match="final"):
            trace_from_lines(lines)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=2, max_value=7), min_size=1, max_size=12))
def test_commit_monotonicity(tokens):
    # Committed positions only ever grow, one low-index commit at a time.
    gen_len = len(tokens) if len(tokens) % 2 == 0 else len(tokens) + 1
    tokens = (tokens + [2])[:gen_len]
    state = new_state([5], gen_len, 2, VOCAB)
    committed: set[int] = set()
    while not state.is_complete():
        lo, hi = state.active_block()
        pos = next(p for p in state.masked_positions() if lo <= p < hi)
        state = state.with_commits({pos: tokens[pos]})
        now = {i for i, c in enumerate(state.response) if c is not None}
        assert committed < now
        committed = now
    assert state.final_tokens() == tuple(tokens)
