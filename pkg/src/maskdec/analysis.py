"""Decoding-dynamics statistics over recorded traces.

All reports are pure folds over trace records. A "cell" is one prediction
event: (position, step) while the position was still masked, carrying the
predicted token's confidence and whether the prediction matches the final
decoded token (consistency).
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .bounds import neighbor_capacity
from .core import DecodeTrace

DEFAULT_DISTANCE = 16
DEFAULT_CONF_BIN_WIDTH = 0.1
STEP_QUANTILE_BINS = 4


def bin_index(value: float, nbins: int) -> int:
    """Equal-width bin of [0, 1) holding ``value``; boundaries fall upward.

    Comparison happens against explicit edge floats (i/nbins) so a value
    exactly equal to an edge lands in the upper bin regardless of how the
    quotient would round (int(0.3/0.1) == 2 but bin_index(0.3, 10) == 3).
    """
    edges = [i / nbins for i in range(1, nbins)]
    return min(bisect_right(edges, value), nbins - 1)


@dataclass(frozen=True)
class ConsistencyCell:
    position: int
    step: int
    consistent: bool
    confidence: float
    committed: bool  # this prediction was committed at this step


def consistency_cells(trace: DecodeTrace) -> list[ConsistencyCell]:
    """Every pre-commit prediction event in the trace, in step order."""
    final = trace.final
    cells = []
    for st in trace.steps:
        committed_here = {p for p, _ in st.commits}
        for pos, tok, conf in st.predictions:
            cells.append(
                ConsistencyCell(
                    position=pos,
                    step=st.s,
                    consistent=(tok == final[pos]),
                    confidence=conf,
                    committed=pos in committed_here,
                )
            )
    return cells


def _commit_steps(trace: DecodeTrace) -> dict[int, int]:
    out: dict[int, int] = {}
    for st in trace.steps:
        for pos, _ in st.commits:
            out[pos] = st.s
    return out


def _block_spans(trace: DecodeTrace) -> dict[int, tuple[int, int]]:
    """Per block: (first step, last step) during which it was active."""
    spans: dict[int, tuple[int, int]] = {}
    masked = set(range(trace.meta.gen_len))
    for st in trace.steps:
        block = min(masked) // trace.meta.block_len
        first, _ = spans.get(block, (st.s, st.s))
        spans[block] = (first, st.s)
        masked -= {p for p, _ in st.commits}
    return spans


@dataclass
class Histogram:
    """Counts over equal-width bins of [0, 1)."""

    bins: int
    counts: list[int]

    @classmethod
    def build(cls, values: Iterable[float], bins: int) -> "Histogram":
        counts = [0] * bins
        for v in values:
            counts[bin_index(v, bins)] += 1
        return cls(bins=bins, counts=counts)

    def fractions(self) -> list[float]:
        total = sum(self.counts)
        return [c / total if total else 0.0 for c in self.counts]


@dataclass
class EarliestStableResult:
    earliest: dict[int, int]  # position -> earliest stable-consistent step
    commit_step: dict[int, int]
    block_normalized: Histogram  # normalized within each block's active span
    global_normalized: Histogram

    def csv_lines(self) -> list[str]:
        lines = ["position,earliest_step,commit_step"]
        for pos in sorted(self.earliest):
            lines.append(f"{pos},{self.earliest[pos]},{self.commit_step[pos]}")
        lines.append("histogram,bin_lo,bin_hi,count,fraction")
        for name, hist in (
            ("block", self.block_normalized),
            ("global", self.global_normalized),
        ):
            fracs = hist.fractions()
            for i, count in enumerate(hist.counts):
                lo, hi = i / hist.bins, (i + 1) / hist.bins
                lines.append(f"{name},{lo!r},{hi!r},{count},{fracs[i]!r}")
        return lines


def earliest_stable_steps(
    trace: DecodeTrace, bins: int = STEP_QUANTILE_BINS
) -> EarliestStableResult:
    """Earliest step from which each position's prediction stays final.

    For position p committed at step c, this is the smallest s such that
    the prediction at every step in [s, c] equals the final token. The
    commit-step prediction always matches (commits are predictions), so
    the result is well-defined and <= c.
    """
    if not trace.steps:
        raise ValueError("trace has no steps")
    final = trace.final
    commit_step = _commit_steps(trace)
    if set(commit_step) != set(range(trace.meta.gen_len)):
        raise ValueError("incomplete trace: some positions never commit")

    history: dict[int, list[tuple[int, bool]]] = {p: [] for p in range(trace.meta.gen_len)}
    for st in trace.steps:
        for pos, tok, _ in st.predictions:
            history[pos].append((st.s, tok == final[pos]))

    earliest: dict[int, int] = {}
    for pos, events in history.items():
        stable_from = commit_step[pos]
        for s, ok in reversed(events):
            if s > commit_step[pos]:
                continue
            if ok:
                stable_from = s
            else:
                break
        earliest[pos] = stable_from

    spans = _block_spans(trace)
    block_vals, global_vals = [], []
    total_steps = len(trace.steps)
    for pos, s in earliest.items():
        block = pos // trace.meta.block_len
        first, last = spans[block]
        span = last - first + 1
        block_vals.append((s - first) / span)
        global_vals.append((s - 1) / total_steps)
    return EarliestStableResult(
        earliest=earliest,
        commit_step=commit_step,
        block_normalized=Histogram.build(block_vals, bins),
        global_normalized=Histogram.build(global_vals, bins),
    )


@dataclass
class BinStat:
    lo: float
    hi: float
    count: int
    consistent: int

    @property
    def rate(self) -> float:
        return self.consistent / self.count if self.count else 0.0


def confidence_consistency_bins(
    trace: DecodeTrace,
    bin_width: float = DEFAULT_CONF_BIN_WIDTH,
    committed_only: bool = False,
) -> list[BinStat]:
    """Consistency rate of pre-commit predictions per confidence bin."""
    cells = consistency_cells(trace)
    if not cells:
        raise ValueError("trace has no prediction cells")
    nbins = round(1.0 / bin_width)
    stats = [
        BinStat(lo=i / nbins, hi=(i + 1) / nbins, count=0, consistent=0)
        for i in range(nbins)
    ]
    for cell in cells:
        if committed_only and not cell.committed:
            continue
        idx = bin_index(cell.confidence, nbins)
        stats[idx].count += 1
        stats[idx].consistent += int(cell.consistent)
    return stats


def bins_csv_lines(stats: Sequence[BinStat]) -> list[str]:
    lines = ["conf_lo,conf_hi,count,consistent,rate"]
    for b in stats:
        lines.append(f"{b.lo!r},{b.hi!r},{b.count},{b.consistent},{b.rate!r}")
    return lines


@dataclass
class Heatmap:
    """Consistency by (signed distance to a commit event, confidence bin)."""

    max_distance: int
    bin_width: float
    center_rule: str  # "high" (c >= 0.9) or "low" (c < 0.9)
    counts: dict[tuple[int, int], list[int]]  # (distance, conf bin) -> [consistent, total]

    def total_samples(self) -> int:
        return sum(v[1] for v in self.counts.values())

    def cell(self, distance: int, conf_bin: int) -> tuple[float, int]:
        consistent, total = self.counts.get((distance, conf_bin), [0, 0])
        return (consistent / total if total else 0.0, total)

    def csv_lines(self) -> list[str]:
        nbins = round(1.0 / self.bin_width)
        lines = ["distance,conf_lo,conf_hi,rate,count"]
        for (dist, cbin), (cons, total) in sorted(self.counts.items()):
            lo, hi = cbin / nbins, (cbin + 1) / nbins
            rate = cons / total if total else 0.0
            lines.append(f"{dist},{lo!r},{hi!r},{rate!r},{total}")
        return lines


def heatmap_svg(hm: "Heatmap", cell_px: int = 14) -> str:
    """Single-file SVG rendering of a heatmap; a convenience view only.

    Rows are confidence bins (top = high), columns are signed distances;
    empty cells stay white, populated cells shade from red (rate 0) to
    green (rate 1).
    """
    nbins = round(1.0 / hm.bin_width)
    dists = list(range(-hm.max_distance, hm.max_distance + 1))
    left, top = 4 * cell_px, 2 * cell_px
    width = left + len(dists) * cell_px + cell_px
    height = top + nbins * cell_px + 2 * cell_px
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{left}" y="{cell_px}" font-size="{cell_px - 2}">'
        f"consistency by distance x confidence (center={hm.center_rule})</text>",
    ]
    for row in range(nbins):
        cbin = nbins - 1 - row  # high confidence on top
        y = top + row * cell_px
        parts.append(
            f'<text x="2" y="{y + cell_px - 3}" font-size="{cell_px - 5}">'
            f"{cbin / nbins:.1f}</text>"
        )
        for col, dist in enumerate(dists):
            if dist == 0:
                continue
            rate, count = hm.cell(dist, cbin)
            x = left + col * cell_px
            if count == 0:
                fill = "#ffffff"
            else:
                r, g = round(255 * (1 - rate)), round(255 * rate)
                fill = f"#{r:02x}{g:02x}60"
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" '
                f'fill="{fill}" stroke="#ccc"/>'
            )
    for col, dist in enumerate(dists):
        if dist % 8 == 0:
            x = left + col * cell_px
            parts.append(
                f'<text x="{x}" y="{height - 4}" font-size="{cell_px - 5}">{dist:+d}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


CENTER_HIGH_CONFIDENCE = 0.9


def distance_heatmap(
    traces: Sequence[DecodeTrace],
    center_rule: str = "high",
    max_distance: int = DEFAULT_DISTANCE,
    bin_width: float = DEFAULT_CONF_BIN_WIDTH,
) -> Heatmap:
    """Fold commit events into a distance x confidence consistency map.

    Each committed position is a center event, stratified by whether its
    own confidence cleared 0.9. Every other masked position within the
    signed window contributes one sample at its (distance from center,
    confidence bin), counting whether its prediction matched the final
    output. Windows may cross block boundaries: predictions are recorded
    for the whole sequence.
    """
    if center_rule not in ("high", "low"):
        raise ValueError(f"center_rule must be 'high' or 'low', got {center_rule!r}")
    if not traces:
        raise ValueError("at least one trace is required")
    nbins = round(1.0 / bin_width)
    counts: dict[tuple[int, int], list[int]] = {}
    for trace in traces:
        final = trace.final
        for st in trace.steps:
            snapshot = {p: (tok, conf) for p, tok, conf in st.predictions}
            for center, _ in st.commits:
                c_conf = snapshot[center][1]
                is_high = c_conf >= CENTER_HIGH_CONFIDENCE
                if (center_rule == "high") != is_high:
                    continue
                for pos, (tok, conf) in snapshot.items():
                    dist = pos - center
                    if pos == center or abs(dist) > max_distance:
                        continue
                    cbin = bin_index(conf, nbins)
                    cell = counts.setdefault((dist, cbin), [0, 0])
                    cell[0] += int(tok == final[pos])
                    cell[1] += 1
    return Heatmap(
        max_distance=max_distance, bin_width=bin_width, center_rule=center_rule, counts=counts
    )


@dataclass
class EffectiveM:
    """Per-step anchor/neighbor commitment intensity of a localleap trace."""

    per_step: list[tuple[int, int, int, float]]  # (step, anchors, committed neighbors, ratio)
    mean_ratio: float
    max_ratio: float
    m_max: Optional[int]  # None when the trace's thresholds make it undefined
    flagged_steps: list[int]  # steps whose ratio exceeds m_max

    def csv_lines(self) -> list[str]:
        lines = ["step,anchors,committed_neighbors,neighbors_per_anchor,exceeds_m_max"]
        for s, a, n, ratio in self.per_step:
            flag = int(s in self.flagged_steps)
            lines.append(f"{s},{a},{n},{ratio!r},{flag}")
        m_max = "" if self.m_max is None else self.m_max
        lines.append(
            f"summary,mean_ratio={self.mean_ratio!r},max_ratio={self.max_ratio!r},m_max={m_max}"
        )
        return lines


def effective_m(trace: DecodeTrace) -> EffectiveM:
    """Realized committed-neighbors-per-anchor versus the theoretical cap."""
    cluster_steps = [st for st in trace.steps if st.has_clusters()]
    if not cluster_steps:
        raise ValueError("trace has no cluster reports (not a localleap run)")

    sched = trace.meta.scheduler
    try:
        m_max: Optional[int] = neighbor_capacity(sched.kappa, sched.tau)
    except ValueError:
        m_max = None

    per_step = []
    for st in cluster_steps:
        anchors = st.anchors or ()
        neighbors = set(st.neighbors or ())
        committed_neighbors = sum(1 for p, _ in st.commits if p in neighbors)
        ratio = committed_neighbors / len(anchors) if anchors else 0.0
        per_step.append((st.s, len(anchors), committed_neighbors, ratio))

    ratios = [r for _, _, _, r in per_step]
    flagged = [s for s, _, _, r in per_step if m_max is not None and r > m_max]
    return EffectiveM(
        per_step=per_step,
        mean_ratio=sum(ratios) / len(ratios),
        max_ratio=max(ratios),
        m_max=m_max,
        flagged_steps=flagged,
    )
