"""Certification conditions and brute-force distributional bounds.

Everything here treats a cluster of one anchor plus m neighbors whose
top-1 marginal masses clear the (kappa, tau) boundaries, and verifies by
exact enumeration over explicit joint PMFs that:

* worst-case certification (1-kappa) + m(1-tau) < tau forces the joint
  argmax to coincide with the coordinate-wise marginal argmax;
* the gap |p* - q*|, the L1/TV/L_p distances, and KL(p || q) obey their
  closed-form budgets.

State spaces stay tiny (V**n <= 8**6) by design; the theorems are
dimension-generic, the verification is desk-scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .predictors import JointModel

# Slack absorbing float summation error in <=-comparisons over the
# enumeration; generic instances carry margins many orders larger.
_NUMERIC_SLACK = 1e-12


def binary_entropy(eps: float) -> float:
    """H_b(eps) in nats, with the 0 ln 0 := 0 convention at both ends."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"binary_entropy argument {eps} outside [0, 1]")
    if eps in (0.0, 1.0):
        return 0.0
    return -eps * math.log(eps) - (1.0 - eps) * math.log(1.0 - eps)


def neighbor_capacity(kappa: float, tau: float) -> int:
    """Largest neighbor count per anchor that worst-case certification admits.

    floor(kappa / (1 - tau) - 1), defined for 1/2 < tau < kappa <= 1.
    """
    if not (0.5 < tau < kappa <= 1.0):
        raise ValueError(f"need 1/2 < tau < kappa <= 1, got tau={tau}, kappa={kappa}")
    return math.floor(kappa / (1.0 - tau) - 1.0)


@dataclass(frozen=True)
class ClusterBudget:
    """Realized error rates of one anchor and its committed neighbors."""

    eps_anchor: float
    eps_neighbors: tuple[float, ...]

    def __post_init__(self) -> None:
        for eps in (self.eps_anchor, *self.eps_neighbors):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"error rate {eps} outside [0, 1]")

    @property
    def m(self) -> int:
        return len(self.eps_neighbors)

    @property
    def total(self) -> float:
        """Aggregate error budget S = eps_anchor + sum of neighbor rates."""
        return self.eps_anchor + sum(self.eps_neighbors)

    @property
    def eps_max(self) -> float:
        return max(self.eps_anchor, *self.eps_neighbors) if self.eps_neighbors else self.eps_anchor


def certify(
    budget: ClusterBudget, kappa: float, tau: float, mode: str = "worst_case"
) -> bool:
    """Does the cluster admit safe parallel commitment?

    worst_case: (1-kappa) + m(1-tau) < tau, using only the boundaries.
    realized:   S + eps_max < 1, substituting the budget's actual rates
                (the joint puts at least 1-S on the candidate outcome and
                at most eps_max on any alternative).
    """
    if mode == "worst_case":
        return (1.0 - kappa) + budget.m * (1.0 - tau) < tau
    if mode == "realized":
        return budget.total + budget.eps_max < 1.0
    raise ValueError(f"unknown certification mode {mode!r}")


@dataclass(frozen=True)
class DistanceReport:
    """Exact distances between a joint and its product of marginals."""

    p_star: float
    q_star: float
    argmax_joint: tuple[int, ...]
    argmax_marginals: tuple[int, ...]
    l1: float
    tv: float
    lp: float  # ||p - q||_p
    lp_order: float
    kl: float
    budget: ClusterBudget
    bounds: dict[str, float]
    satisfied: dict[str, bool]

    @property
    def argmax_agrees(self) -> bool:
        return self.argmax_joint == self.argmax_marginals


def _marginals(table: np.ndarray) -> list[np.ndarray]:
    n = table.ndim
    return [table.sum(axis=tuple(ax for ax in range(n) if ax != k)) for k in range(n)]


def analyze_joint(jm: JointModel, p_order: float = 2.0) -> DistanceReport:
    """Brute-force every outcome of the joint and check all four bounds.

    The gap and L1/L_p bounds use the realized error rates; the TV and KL
    bounds use the threshold form in (jm.kappa, jm.tau). The L_p budget is
    the per-derivation form (S - eps_max)**p + eps_max**(p-1) * 2S applied
    to ||p - q||_p**p.
    """
    if p_order < 1.0:
        raise ValueError("p_order must be >= 1")
    table = jm.table()
    n, v = jm.n, jm.vocab_size
    margs = _marginals(table)

    x_star = tuple(int(np.argmax(mg)) for mg in margs)
    q = margs[0].copy()
    for mg in margs[1:]:
        q = np.multiply.outer(q, mg)
    p_star = float(table[x_star])
    q_star = float(q[x_star])
    argmax_joint = tuple(int(i) for i in np.unravel_index(int(np.argmax(table)), table.shape))

    diff = table - q
    l1 = float(np.abs(diff).sum())
    tv = 0.5 * l1
    lp_pow = float((np.abs(diff) ** p_order).sum())
    lp = lp_pow ** (1.0 / p_order)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(table > 0, table / np.where(q > 0, q, 1.0), 1.0)
        if np.any((table > 0) & (q == 0)):
            kl = math.inf  # p ln(p/0) convention; unreachable when q is p's marginal product
        else:
            kl = float(np.sum(np.where(table > 0, table * np.log(ratio), 0.0)))

    eps = [1.0 - float(mg[x_star[k]]) for k, mg in enumerate(margs)]
    anchor = jm.anchor_index
    budget = ClusterBudget(
        eps_anchor=eps[anchor],
        eps_neighbors=tuple(e for k, e in enumerate(eps) if k != anchor),
    )
    s, eps_max, m = budget.total, budget.eps_max, budget.m

    bounds = {
        "center_gap": s - eps_max,
        "l1": 3.0 * s - eps_max,
        "tv": 0.5 * (3.0 * (1.0 - jm.kappa) + (3.0 * m - 1.0) * (1.0 - jm.tau)),
        "kl": (
            binary_entropy(1.0 - jm.kappa)
            + (1.0 - jm.kappa) * math.log(v - 1)
            + m * (binary_entropy(1.0 - jm.tau) + (1.0 - jm.tau) * math.log(v - 1))
        ),
        "lp_pow": (s - eps_max) ** p_order + eps_max ** (p_order - 1.0) * 2.0 * s,
        # Looser combination printed in the derivation's final display,
        # reported for comparison but not used as the pass/fail budget.
        "lp_pow_loose": (s - eps_max) ** p_order + (eps_max ** (p_order - 1.0) * 2.0 * s) ** p_order,
    }
    satisfied = {
        "center_gap": abs(p_star - q_star) <= bounds["center_gap"] + _NUMERIC_SLACK,
        "l1": l1 <= bounds["l1"] + _NUMERIC_SLACK,
        "tv": tv <= bounds["tv"] + _NUMERIC_SLACK,
        "kl": kl <= bounds["kl"] + _NUMERIC_SLACK,
        "lp_pow": lp_pow <= bounds["lp_pow"] + _NUMERIC_SLACK,
    }
    return DistanceReport(
        p_star=p_star,
        q_star=q_star,
        argmax_joint=argmax_joint,
        argmax_marginals=x_star,
        l1=l1,
        tv=tv,
        lp=lp,
        lp_order=p_order,
        kl=kl,
        budget=budget,
        bounds=bounds,
        satisfied=satisfied,
    )


# --- randomized verification -------------------------------------------------


@dataclass
class FuzzInstance:
    index: int
    n: int
    vocab_size: int
    certified: bool
    argmax_ok: Optional[bool]  # None when certification does not hold
    report: DistanceReport

    def violations(self) -> list[str]:
        out = [name for name, ok in self.report.satisfied.items() if not ok]
        if self.argmax_ok is False:
            out.append("argmax")
        return out


@dataclass
class FuzzReport:
    instances: list[FuzzInstance]
    skipped_uncertified: int = 0

    @property
    def violation_count(self) -> int:
        return sum(1 for inst in self.instances if inst.violations())

    def csv_lines(self) -> list[str]:
        header = (
            "index,n,vocab_size,certified,argmax_ok,S,eps_max,center_gap,l1,tv,kl,lp,"
            "bound_center_gap,bound_l1,bound_tv,bound_kl,slack_center_gap,slack_l1,"
            "slack_tv,slack_kl,violations"
        )
        lines = [header]
        for inst in self.instances:
            r = inst.report
            gap = abs(r.p_star - r.q_star)
            slacks = (
                r.bounds["center_gap"] - gap,
                r.bounds["l1"] - r.l1,
                r.bounds["tv"] - r.tv,
                r.bounds["kl"] - r.kl,
            )
            lines.append(
                ",".join(
                    [
                        str(inst.index),
                        str(inst.n),
                        str(inst.vocab_size),
                        str(int(inst.certified)),
                        "" if inst.argmax_ok is None else str(int(inst.argmax_ok)),
                        repr(r.budget.total),
                        repr(r.budget.eps_max),
                        repr(gap),
                        repr(r.l1),
                        repr(r.tv),
                        repr(r.kl),
                        repr(r.lp),
                        repr(r.bounds["center_gap"]),
                        repr(r.bounds["l1"]),
                        repr(r.bounds["tv"]),
                        repr(r.bounds["kl"]),
                        repr(slacks[0]),
                        repr(slacks[1]),
                        repr(slacks[2]),
                        repr(slacks[3]),
                        ";".join(inst.violations()),
                    ]
                )
            )
        return lines


_RETRY_CAP = 10_000


def _random_qualifying_joint(
    rng: np.random.Generator, n_max: int, v_max: int, kappa: float, tau: float
) -> JointModel:
    """Rejection-sample a joint whose marginals clear the thresholds.

    A random outcome gets point mass 1 - S' (S' uniform below the cluster
    budget ceiling); the residual spreads over the other outcomes with
    exponential weights. Instances with near-tied argmaxes (separation
    below 1e-12) are regenerated rather than asserted on.
    """
    for _ in range(_RETRY_CAP):
        n = int(rng.integers(2, n_max + 1))
        v = int(rng.integers(2, v_max + 1))
        m = n - 1
        # Budget ceiling, capped so the candidate keeps non-negative mass
        # when loose thresholds push the worst-case budget past 1.
        s_cap = min((1.0 - kappa) + m * (1.0 - tau), 1.0)
        s_draw = float(rng.uniform(0.0, s_cap))
        size = v**n
        star = int(rng.integers(0, size))
        weights = rng.exponential(size=size - 1)
        weights = weights / weights.sum() * s_draw
        pmf = np.insert(weights, star, 1.0 - s_draw)
        pmf = pmf / pmf.sum()  # exact renormalization for the 1e-12 invariant

        table = pmf.reshape((v,) * n)
        margs = _marginals(table)
        anchor = int(rng.integers(0, n))
        ok = True
        for k, mg in enumerate(margs):
            top = float(np.max(mg))
            need = kappa if k == anchor else tau
            if top < need:
                ok = False
                break
            second = float(np.partition(mg, -2)[-2]) if v > 1 else 0.0
            if top - second <= 1e-12:
                ok = False  # degenerate marginal tie
                break
        if not ok:
            continue
        flat = np.sort(pmf)[::-1]
        if flat[0] - flat[1] <= 1e-12:
            continue  # degenerate joint tie
        return JointModel(
            n=n,
            vocab_size=v,
            pmf=tuple(float(x) for x in pmf),
            anchor_index=anchor,
            kappa=kappa,
            tau=tau,
        )
    raise RuntimeError(
        f"failed to generate a qualifying joint within {_RETRY_CAP} attempts"
    )


def fuzz_bounds(
    n_max: int,
    v_max: int,
    kappa: float,
    tau: float,
    instances: int,
    seed: int,
    require_certified: bool = False,
    p_order: float = 2.0,
) -> FuzzReport:
    """Generate random qualifying joints and check every bound on each.

    The argmax-equivalence claim is asserted only on instances whose
    worst-case certification holds; with ``require_certified`` set,
    uncertified instances are skipped entirely and counted.
    """
    if n_max > 4 or v_max > 4:
        raise ValueError("fuzzing is capped at n_max <= 4, v_max <= 4 for tractability")
    if n_max < 2 or v_max < 2:
        raise ValueError("need n_max >= 2 and v_max >= 2")
    if instances < 0:
        raise ValueError("instances must be non-negative")

    report = FuzzReport(instances=[])
    for idx in range(instances):
        rng = np.random.default_rng((seed, idx))
        jm = _random_qualifying_joint(rng, n_max, v_max, kappa, tau)
        # Worst-case certification depends only on (m, kappa, tau).
        certified = (1.0 - kappa) + (jm.n - 1) * (1.0 - tau) < tau
        if require_certified and not certified:
            report.skipped_uncertified += 1
            continue
        dist = analyze_joint(jm, p_order=p_order)
        argmax_ok = dist.argmax_agrees if certified else None
        report.instances.append(
            FuzzInstance(
                index=idx,
                n=jm.n,
                vocab_size=jm.vocab_size,
                certified=certified,
                argmax_ok=argmax_ok,
                report=dist,
            )
        )
    return report
