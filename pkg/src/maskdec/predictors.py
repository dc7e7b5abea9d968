"""Pluggable mask-predictor oracles.

Three oracles stand in for a neural mask predictor at desk scale:

* planted  -- synthetic generator with a hidden target sequence whose
  confidence couples to local revealed context, so parallel schedulers
  have genuine spatial structure to exploit;
* joint    -- exact marginals of a small explicit joint PMF, used by the
  bounds machinery and its tests;
* replay   -- replays the recorded predictions of an existing trace.

All predictors are pure functions of (state, config); identical inputs
give identical outputs on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import DecodeTrace, SequenceState, StepPredictions, Vocab

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_POS_SALT = 0xC2B2AE3D27D4EB4F
_STEP_SALT = 0x165667B19E3779F9
_TARGET_SALT = 0xA5A5A5A5


def mix64(x: int) -> int:
    """splitmix64 finalizer; the sole mixing primitive behind all determinism."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def noise_unit(seed: int, pos: int, step: int) -> float:
    """Deterministic uniform draw in [0, 1) from (seed, position, step)."""
    h = mix64((seed + _GOLDEN) & _MASK64)
    h = mix64(h ^ ((pos * _POS_SALT) & _MASK64))
    h = mix64(h ^ ((step * _STEP_SALT) & _MASK64))
    return (h >> 11) * 2.0**-53


@dataclass(frozen=True)
class PlantedConfig:
    """Synthetic oracle parameters.

    The hidden target sequence is derived from ``seed``; predictions are
    the target token wherever confidence clears ``correct_gate`` and a
    deterministic distractor below it.
    """

    seed: int
    target_len: int
    c_base: float = 0.55
    w_local: float = 0.5
    local_radius: int = 4
    noise_amp: float = 0.10
    correct_gate: float = 0.60
    conf_floor: float = 0.05
    conf_cap: float = 0.995

    def __post_init__(self) -> None:
        if self.target_len <= 0:
            raise ValueError("target_len must be positive")
        if not 0.0 < self.correct_gate < 1.0:
            raise ValueError("correct_gate must lie in (0, 1)")
        if self.w_local < 0.0 or self.noise_amp < 0.0:
            raise ValueError("w_local and noise_amp must be non-negative")
        if self.local_radius < 0:
            raise ValueError("local_radius must be non-negative")
        if not 0.0 <= self.conf_floor <= self.conf_cap <= 1.0:
            raise ValueError("need 0 <= conf_floor <= conf_cap <= 1")
        if self.c_base + self.w_local + self.noise_amp > 1.2:
            raise ValueError("c_base + w_local + noise_amp exceeds the 1.2 headroom bound")


@lru_cache(maxsize=64)
def _planted_target_cached(seed: int, length: int, usable: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    for i in range(length):
        h = mix64(mix64((seed ^ _TARGET_SALT) + _GOLDEN) ^ ((i * _POS_SALT) & _MASK64))
        out.append(usable[h % len(usable)])
    return tuple(out)


def planted_target(cfg: PlantedConfig, vocab: Vocab) -> tuple[int, ...]:
    """The hidden sequence the planted oracle is trying to reveal."""
    usable = vocab.usable_tokens()
    if not usable:
        raise ValueError("vocab has no usable tokens")
    return _planted_target_cached(cfg.seed, cfg.target_len, usable)


def _distractor(target_tok: int, usable: tuple[int, ...]) -> int:
    # Next usable token in cyclic order: wrong but deterministic, so
    # inconsistent predictions are detectable in analysis.
    k = usable.index(target_tok)
    return usable[(k + 1) % len(usable)]


def local_density(state: SequenceState, pos: int, radius: int) -> float:
    """Directional revealed-context density around a response position.

    Each side of ``pos`` (up to ``radius`` positions over the prompt and
    response index line, clipped at the line ends) contributes its
    unmasked fraction; the density is the larger side. Prompt positions
    count as unmasked. A frontier position flanked by committed context on
    one side is therefore fully supported even while everything ahead of
    it is still masked.
    """
    k = len(state.prompt)
    total = k + state.gen_len
    a = k + pos

    def unmasked(j: int) -> bool:
        return j < k or state.response[j - k] is not None

    best = 0.0
    for lo, hi in ((a - radius, a - 1), (a + 1, a + radius)):
        lo, hi = max(0, lo), min(total - 1, hi)
        n = hi - lo + 1
        if n <= 0:
            continue
        count = sum(1 for j in range(lo, hi + 1) if unmasked(j))
        best = max(best, count / n)
    return best


def planted_predict(state: SequenceState, cfg: PlantedConfig) -> StepPredictions:
    """Predict every masked position from the planted target.

    Confidence: clamp(c_base + w_local * sqrt(u) + noise, floor, cap) with
    u the directional local density and noise a seeded uniform draw in
    [-noise_amp, +noise_amp]. Token: target if confidence >= correct_gate,
    else the cyclic distractor.
    """
    if state.gen_len != cfg.target_len:
        raise ValueError(
            f"state gen_len {state.gen_len} != planted target_len {cfg.target_len}"
        )
    masked = state.masked_positions()
    if not masked:
        raise ValueError("state has no masked cells")
    usable = state.vocab.usable_tokens()
    target = planted_target(cfg, state.vocab)

    # Prefix sums of unmasked-ness over prompt+response make the per-side
    # counts O(1); the predictor runs once per engine step over O(L) cells.
    k = len(state.prompt)
    total = k + state.gen_len
    prefix = [0] * (total + 1)
    for j in range(total):
        um = 1 if (j < k or state.response[j - k] is not None) else 0
        prefix[j + 1] = prefix[j] + um

    r = cfg.local_radius
    entries: dict[int, tuple[int, float]] = {}
    for pos in masked:
        a = k + pos
        best = 0.0
        for lo, hi in ((a - r, a - 1), (a + 1, a + r)):
            lo, hi = max(0, lo), min(total - 1, hi)
            n = hi - lo + 1
            if n <= 0:
                continue
            best = max(best, (prefix[hi + 1] - prefix[lo]) / n)
        nu = (2.0 * noise_unit(cfg.seed, pos, state.step) - 1.0) * cfg.noise_amp
        conf = cfg.c_base + cfg.w_local * math.sqrt(best) + nu
        conf = min(cfg.conf_cap, max(cfg.conf_floor, conf))
        tok = target[pos] if conf >= cfg.correct_gate else _distractor(target[pos], usable)
        entries[pos] = (tok, conf)
    return StepPredictions(entries=entries)


class PlantedPredictor:
    """Callable wrapper binding a PlantedConfig, for the engine loop."""

    def __init__(self, cfg: PlantedConfig):
        self.cfg = cfg

    def __call__(self, state: SequenceState) -> StepPredictions:
        return planted_predict(state, self.cfg)

    def describe(self) -> str:
        c = self.cfg
        return (
            f"planted(seed={c.seed},target_len={c.target_len},c_base={c.c_base},"
            f"w_local={c.w_local},local_radius={c.local_radius},noise_amp={c.noise_amp},"
            f"correct_gate={c.correct_gate})"
        )


# --- explicit joint model ----------------------------------------------------


@dataclass(frozen=True)
class JointModel:
    """Explicit joint PMF over n positions x V usable tokens.

    ``pmf`` lists all V**n outcome probabilities in lexicographic outcome
    order (position 0 is the most significant digit). Outcome digits index
    the vocab's usable tokens, not raw token ids.
    """

    n: int
    vocab_size: int
    pmf: tuple[float, ...]
    anchor_index: int = 0
    kappa: float = 0.9
    tau: float = 0.75

    def __post_init__(self) -> None:
        if not 1 <= self.n <= 6:
            raise ValueError("n must lie in [1, 6]")
        if not 2 <= self.vocab_size <= 8:
            raise ValueError("vocab_size must lie in [2, 8]")
        if len(self.pmf) != self.vocab_size**self.n:
            raise ValueError(
                f"pmf has {len(self.pmf)} entries, expected {self.vocab_size ** self.n}"
            )
        if any(p < 0 for p in self.pmf):
            raise ValueError("pmf entries must be non-negative")
        if abs(sum(self.pmf) - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {sum(self.pmf)!r}, not 1 within 1e-12")
        if not 0 <= self.anchor_index < self.n:
            raise ValueError("anchor_index outside [0, n)")

    def table(self) -> np.ndarray:
        return np.asarray(self.pmf, dtype=float).reshape((self.vocab_size,) * self.n)


def joint_predict(state: SequenceState, jm: JointModel) -> StepPredictions:
    """Exact per-position marginals of the joint, conditioned on commits.

    The state's response length must equal jm.n and its usable-token count
    must equal jm.vocab_size. Committed cells condition the joint by
    slicing and renormalizing; masked cells get their marginal argmax,
    confidence, and full distribution.
    """
    usable = state.vocab.usable_tokens()
    if len(usable) != jm.vocab_size:
        raise ValueError(
            f"vocab has {len(usable)} usable tokens, joint model expects {jm.vocab_size}"
        )
    if state.gen_len != jm.n:
        raise ValueError(f"state covers {state.gen_len} positions, joint model has {jm.n}")
    masked = state.masked_positions()
    if not masked:
        raise ValueError("state has no masked cells")
    tok_to_digit = {t: d for d, t in enumerate(usable)}

    indexer: list[object] = []
    for pos, cell in enumerate(state.response):
        if cell is None:
            indexer.append(slice(None))
        else:
            if cell not in tok_to_digit:
                raise ValueError(f"committed token {cell} is not a usable token")
            indexer.append(tok_to_digit[cell])
    sub = jm.table()[tuple(indexer)]
    # Remaining axes correspond to masked positions in ascending order.
    sub = np.asarray(sub, dtype=float).reshape((jm.vocab_size,) * len(masked))
    mass = float(sub.sum())
    if mass <= 0.0:
        raise ValueError("conditioning eliminated all probability mass")

    entries: dict[int, tuple[int, float]] = {}
    dists: dict[int, tuple[float, ...]] = {}
    for axis, pos in enumerate(masked):
        other = tuple(ax for ax in range(len(masked)) if ax != axis)
        marg = sub.sum(axis=other) / mass
        digit = int(np.argmax(marg))  # ties resolve to the lowest digit
        entries[pos] = (usable[digit], float(marg[digit]))
        dists[pos] = tuple(float(x) for x in marg)
    return StepPredictions(entries=entries, dists=dists)


class JointPredictor:
    def __init__(self, jm: JointModel):
        self.jm = jm

    def __call__(self, state: SequenceState) -> StepPredictions:
        return joint_predict(state, self.jm)

    def describe(self) -> str:
        return f"joint(n={self.jm.n},vocab_size={self.jm.vocab_size})"


def save_joint_model(jm: JointModel, path: str) -> None:
    """Text format: key=value header then V**n probability lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n={jm.n}\n")
        fh.write(f"vocab_size={jm.vocab_size}\n")
        fh.write(f"anchor_index={jm.anchor_index}\n")
        fh.write(f"kappa={jm.kappa!r}\n")
        fh.write(f"tau={jm.tau!r}\n")
        for p in jm.pmf:
            fh.write(f"{p!r}\n")


def load_joint_model(path: str) -> JointModel:
    header: dict[str, str] = {}
    probs: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, _, val = line.partition("=")
                header[key.strip()] = val.strip()
            else:
                probs.append(float(line))
    try:
        return JointModel(
            n=int(header["n"]),
            vocab_size=int(header["vocab_size"]),
            pmf=tuple(probs),
            anchor_index=int(header.get("anchor_index", 0)),
            kappa=float(header.get("kappa", 0.9)),
            tau=float(header.get("tau", 0.75)),
        )
    except KeyError as exc:
        raise ValueError(f"joint model file missing header key {exc}") from exc


# --- trace replay ------------------------------------------------------------


class ReplayDivergenceError(ValueError):
    """The live state no longer matches the recorded trajectory."""


def replay_predict(state: SequenceState, trace: DecodeTrace) -> StepPredictions:
    """Recorded predictions for the step the state is about to take.

    Replay is strict: the state's committed cells must equal the state
    implied by the trace's first ``state.step`` commit sets. Running a
    different scheduler against a recorded trace diverges at the first
    differing commit rather than returning counterfactual predictions.
    """
    if not trace.steps:
        raise ValueError("trace has no steps to replay")
    if state.gen_len != trace.meta.gen_len or state.block_len != trace.meta.block_len:
        raise ReplayDivergenceError("state geometry differs from trace meta")
    if state.step >= len(trace.steps):
        raise ValueError(f"trace exhausted at step {state.step}")

    implied: dict[int, int] = {}
    for st in trace.steps[: state.step]:
        implied.update(dict(st.commits))
    actual = {i: c for i, c in enumerate(state.response) if c is not None}
    if actual != implied:
        diff = sorted(set(actual.items()) ^ set(implied.items()))
        raise ReplayDivergenceError(
            f"state diverged from recorded trajectory at step {state.step}: {diff[:4]}"
        )
    rec = trace.steps[state.step]
    return StepPredictions(entries={p: (t, c) for p, t, c in rec.predictions})


class ReplayPredictor:
    def __init__(self, trace: DecodeTrace):
        self.trace = trace

    def __call__(self, state: SequenceState) -> StepPredictions:
        return replay_predict(state, self.trace)

    def describe(self) -> str:
        return f"replay(seed={self.trace.meta.seed},predictor={self.trace.meta.predictor})"
