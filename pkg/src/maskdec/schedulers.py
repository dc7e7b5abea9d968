"""Transition rules: which predicted tokens to commit at each step.

Every selector sees only the predictions for the active block and must
return a non-empty commit set whenever the block has a masked position
(progress guarantee). Confidence ties break toward the lowest index so
runs are platform-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import CommitSet, SchedulerConfig, StepPredictions


@dataclass(frozen=True)
class ClusterReport:
    """Anchor/neighborhood breakdown of one localleap selection.

    ``neighbors`` holds the non-anchor masked positions within the radius
    of at least one anchor (the candidates), whether or not they cleared
    the relaxed boundary and got committed.
    """

    anchors: tuple[int, ...]
    neighbors: tuple[int, ...]
    committed: CommitSet
    fallback_used: bool


def _block_entries(preds: StepPredictions, block: tuple[int, int]) -> dict[int, tuple[int, float]]:
    lo, hi = block
    entries = {p: v for p, v in preds.entries.items() if lo <= p < hi}
    if not entries:
        raise ValueError(f"no predictions for masked positions in block [{lo},{hi})")
    return entries


def _argmax_position(entries: dict[int, tuple[int, float]]) -> int:
    # Highest confidence; ties go to the lowest index.
    return max(entries, key=lambda p: (entries[p][1], -p))


def select_sequential(preds: StepPredictions, block: tuple[int, int]) -> CommitSet:
    """Commit exactly the most confident in-block position."""
    entries = _block_entries(preds, block)
    best = _argmax_position(entries)
    return {best: entries[best][0]}


def select_topk(preds: StepPredictions, block: tuple[int, int], k: int) -> CommitSet:
    """Commit the min(k, #masked-in-block) highest-confidence positions."""
    if k <= 0:
        raise ValueError("k must be a positive integer")
    entries = _block_entries(preds, block)
    ranked = sorted(entries, key=lambda p: (-entries[p][1], p))
    return {p: entries[p][0] for p in ranked[: min(k, len(ranked))]}


def select_threshold(preds: StepPredictions, block: tuple[int, int], threshold: float) -> CommitSet:
    """Commit everything at or above the threshold, else the single argmax."""
    entries = _block_entries(preds, block)
    chosen = {p: tok for p, (tok, conf) in entries.items() if conf >= threshold}
    if not chosen:
        best = _argmax_position(entries)
        chosen = {best: entries[best][0]}
    return chosen


def select_localleap(
    preds: StepPredictions,
    block: tuple[int, int],
    kappa: float,
    radius_w: int,
    tau: float,
) -> tuple[CommitSet, ClusterReport]:
    """Anchor-guided parallel selection.

    Anchors are in-block masked positions with confidence >= kappa. When
    any exist, every non-anchor masked position within radius_w of an
    anchor is a neighborhood candidate and commits iff its confidence
    >= tau; neighborhoods never cross the block boundary. With no anchors
    the rule degenerates to the single most confident position.
    """
    if tau > kappa:
        raise ValueError(f"localleap requires tau <= kappa, got tau={tau} > kappa={kappa}")
    entries = _block_entries(preds, block)

    anchors = sorted(p for p, (_, conf) in entries.items() if conf >= kappa)
    if not anchors:
        best = _argmax_position(entries)
        commits: CommitSet = {best: entries[best][0]}
        return commits, ClusterReport(
            anchors=(), neighbors=(), committed=commits, fallback_used=True
        )

    anchor_set = set(anchors)
    neighbors: set[int] = set()
    for a in anchors:
        for p in entries:
            if p not in anchor_set and p != a and abs(p - a) <= radius_w:
                neighbors.add(p)

    commits = {p: entries[p][0] for p in anchors}
    for p in sorted(neighbors):
        if entries[p][1] >= tau:
            commits[p] = entries[p][0]
    report = ClusterReport(
        anchors=tuple(anchors),
        neighbors=tuple(sorted(neighbors)),
        committed=commits,
        fallback_used=False,
    )
    return commits, report


def enforce_neighbor_capacity(
    preds: StepPredictions, report: ClusterReport, m_max: int
) -> tuple[CommitSet, ClusterReport]:
    """Strict mode: cap committed neighbors at m_max per anchor.

    The capacity bound is sufficient, not necessary, so the default
    selection never enforces it; certification experiments can post-filter
    a localleap selection with this instead. Each committed neighbor is
    charged to its nearest anchor (ties toward the lower index) and the
    lowest-confidence overflow within each anchor's cluster stays masked.
    """
    if m_max < 0:
        raise ValueError("m_max must be non-negative")
    if report.fallback_used or not report.anchors:
        return dict(report.committed), report

    clusters: dict[int, list[int]] = {a: [] for a in report.anchors}
    anchor_set = set(report.anchors)
    for pos in report.committed:
        if pos in anchor_set:
            continue
        nearest = min(report.anchors, key=lambda a: (abs(pos - a), a))
        clusters[nearest].append(pos)

    kept: CommitSet = {a: report.committed[a] for a in report.anchors}
    for members in clusters.values():
        members.sort(key=lambda p: (-preds.confidence(p), p))
        for pos in members[:m_max]:
            kept[pos] = report.committed[pos]
    capped = ClusterReport(
        anchors=report.anchors,
        neighbors=report.neighbors,
        committed=kept,
        fallback_used=False,
    )
    return kept, capped


def select(
    cfg: SchedulerConfig, preds: StepPredictions, block: tuple[int, int]
) -> tuple[CommitSet, ClusterReport | None]:
    """Dispatch on the configured variant; localleap also returns its report."""
    if cfg.variant == "sequential":
        return select_sequential(preds, block), None
    if cfg.variant == "topk":
        return select_topk(preds, block, cfg.k), None
    if cfg.variant == "threshold":
        return select_threshold(preds, block, cfg.threshold), None
    if cfg.variant == "localleap":
        return select_localleap(preds, block, cfg.kappa, cfg.radius_w, cfg.tau)
    raise ValueError(f"unknown scheduler variant {cfg.variant!r}")
