import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdec.bounds import (
    ClusterBudget,
    analyze_joint,
    binary_entropy,
    certify,
    fuzz_bounds,
    neighbor_capacity,
)
from maskdec.predictors import JointModel


class TestBinaryEntropy:
    def test_ends_are_zero(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_symmetric_about_half(self):
        for eps in (0.1, 0.25, 0.4):
            assert binary_entropy(eps) == pytest.approx(binary_entropy(1 - eps), abs=1e-15)

    def test_peak_at_half(self):
        assert binary_entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)


class TestNeighborCapacity:
    def test_paper_defaults(self):
        assert neighbor_capacity(0.9, 0.75) == 2

    def test_dream_profile(self):
        assert neighbor_capacity(0.9, 0.80) == 3

    def test_near_degenerate_thresholds(self):
        assert neighbor_capacity(0.76, 0.75) == 2

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            neighbor_capacity(0.75, 0.9)
        with pytest.raises(ValueError):
            neighbor_capacity(0.9, 0.5)

    @settings(max_examples=300, deadline=None)
    @given(
        kappa=st.floats(min_value=0.55, max_value=1.0),
        tau=st.floats(min_value=0.51, max_value=0.99),
        d_kappa=st.floats(min_value=0.0, max_value=0.3),
        d_tau=st.floats(min_value=0.0, max_value=0.3),
    )
    def test_monotone_in_both_thresholds(self, kappa, tau, d_kappa, d_tau):
        if not tau < kappa:
            return
        base = neighbor_capacity(kappa, tau)
        k2 = min(1.0, kappa + d_kappa)
        t2 = min(0.99, tau + d_tau)
        if tau < k2:
            assert neighbor_capacity(k2, tau) >= base
        if t2 < kappa:
            assert neighbor_capacity(kappa, t2) >= base


class TestCertify:
    def test_worst_case_m2_holds(self):
        budget = ClusterBudget(eps_anchor=0.1, eps_neighbors=(0.25, 0.25))
        assert certify(budget, 0.9, 0.75, mode="worst_case")

    def test_worst_case_m3_fails(self):
        budget = ClusterBudget(eps_anchor=0.1, eps_neighbors=(0.25,) * 3)
        assert not certify(budget, 0.9, 0.75, mode="worst_case")

    def test_realized_mode(self):
        budget = ClusterBudget(eps_anchor=0.02, eps_neighbors=(0.05, 0.05, 0.05))
        assert budget.total == pytest.approx(0.17)
        assert budget.eps_max == 0.05
        assert certify(budget, 0.9, 0.75, mode="realized")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            certify(ClusterBudget(0.1, (0.1,)), 0.9, 0.75, mode="optimistic")


WORKED = JointModel(n=2, vocab_size=2, pmf=(0.85, 0.05, 0.05, 0.05), kappa=0.9, tau=0.75)


def enumeration_oracle(jm: JointModel):
    """Independent pure-python enumeration of every reported distance."""
    v, n = jm.vocab_size, jm.n
    outcomes = list(itertools.product(range(v), repeat=n))
    p = dict(zip(outcomes, jm.pmf))
    marginals = [[0.0] * v for _ in range(n)]
    for outcome, mass in p.items():
        for axis, digit in enumerate(outcome):
            marginals[axis][digit] += mass
    q = {o: math.prod(marginals[k][o[k]] for k in range(n)) for o in outcomes}
    x_star = tuple(mg.index(max(mg)) for mg in marginals)
    l1 = sum(abs(p[o] - q[o]) for o in outcomes)
    kl = sum(p[o] * math.log(p[o] / q[o]) for o in outcomes if p[o] > 0)
    return p, q, x_star, l1, kl


class TestAnalyzeJoint:
    def test_worked_example_exact(self):
        report = analyze_joint(WORKED)
        p, q, x_star, l1, kl = enumeration_oracle(WORKED)

        assert report.argmax_joint == report.argmax_marginals == (0, 0)
        assert report.p_star == pytest.approx(0.85, abs=1e-12)
        assert report.q_star == pytest.approx(0.81, abs=1e-12)
        assert report.l1 == pytest.approx(0.16, abs=1e-9)
        assert report.tv == pytest.approx(0.08, abs=1e-9)
        assert report.kl == pytest.approx(0.0627, abs=1e-4)
        # and against the independent enumeration, much tighter:
        assert report.l1 == pytest.approx(l1, abs=1e-12)
        assert report.kl == pytest.approx(kl, abs=1e-12)

        assert report.budget.total == pytest.approx(0.20, abs=1e-12)
        assert report.budget.eps_max == pytest.approx(0.10, abs=1e-12)
        assert abs(report.p_star - report.q_star) == pytest.approx(0.04, abs=1e-12)
        assert report.bounds["center_gap"] == pytest.approx(0.10, abs=1e-12)
        assert all(report.satisfied.values()), report.satisfied

    def test_product_distribution_has_zero_distance(self):
        # p already factorizes: p = q, so TV and KL vanish.
        marg = [0.7, 0.3]
        pmf = tuple(a * b for a in marg for b in marg)
        report = analyze_joint(JointModel(n=2, vocab_size=2, pmf=pmf))
        assert report.tv == pytest.approx(0.0, abs=1e-15)
        assert report.kl == pytest.approx(0.0, abs=1e-15)

    def test_point_mass_distribution(self):
        pmf = (1.0, 0.0, 0.0, 0.0)
        report = analyze_joint(JointModel(n=2, vocab_size=2, pmf=pmf))
        assert report.p_star == report.q_star == 1.0
        assert report.l1 == report.tv == report.kl == 0.0

    def test_tv_is_half_l1(self):
        for pmf in ((0.4, 0.3, 0.2, 0.1), (0.25, 0.25, 0.25, 0.25), (0.97, 0.01, 0.01, 0.01)):
            report = analyze_joint(JointModel(n=2, vocab_size=2, pmf=pmf))
            assert report.tv == pytest.approx(report.l1 / 2, abs=0)

    def test_lp_tight_and_loose_both_reported(self):
        report = analyze_joint(WORKED, p_order=2.0)
        assert "lp_pow" in report.bounds and "lp_pow_loose" in report.bounds
        lp_pow = report.lp**report.lp_order
        assert lp_pow <= report.bounds["lp_pow"] + 1e-12


class TestFuzzBounds:
    def test_zero_instances_empty_report(self):
        report = fuzz_bounds(3, 4, 0.9, 0.75, instances=0, seed=1)
        assert report.instances == []
        assert report.violation_count == 0

    def test_small_run_no_violations(self):
        report = fuzz_bounds(3, 4, 0.9, 0.75, instances=200, seed=42)
        assert len(report.instances) == 200
        assert report.violation_count == 0
        # kappa=0.9, tau=0.75 certify m=1 and m=2, so every instance is
        # certified and the argmax equivalence was actually asserted.
        assert all(inst.certified for inst in report.instances)
        assert all(inst.argmax_ok for inst in report.instances)

    def test_reproducible(self):
        a = fuzz_bounds(3, 3, 0.9, 0.75, instances=5, seed=7)
        b = fuzz_bounds(3, 3, 0.9, 0.75, instances=5, seed=7)
        assert [i.report.l1 for i in a.instances] == [i.report.l1 for i in b.instances]

    def test_star_mass_bracketing_property(self):
        # On every qualifying instance both p* and q* lie in [1-S, 1-eps_max].
        report = fuzz_bounds(3, 4, 0.9, 0.75, instances=100, seed=3)
        for inst in report.instances:
            r = inst.report
            lo, hi = 1.0 - r.budget.total, 1.0 - r.budget.eps_max
            assert lo - 1e-12 <= r.p_star <= hi + 1e-12
            assert lo - 1e-12 <= r.q_star <= hi + 1e-12

    def test_uncertified_instances_skipped_with_flag(self):
        # kappa=0.6, tau=0.55 certifies nothing (even m=1 gives 0.85 > 0.55).
        report = fuzz_bounds(3, 3, 0.6, 0.55, instances=20, seed=5, require_certified=True)
        assert report.skipped_uncertified == 20
        assert report.instances == []

    def test_uncertified_instances_not_argmax_checked(self):
        report = fuzz_bounds(3, 3, 0.6, 0.55, instances=30, seed=5)
        assert all(inst.argmax_ok is None for inst in report.instances)
        assert report.violation_count == 0  # distance bounds still hold

    def test_tractability_caps(self):
        with pytest.raises(ValueError):
            fuzz_bounds(5, 4, 0.9, 0.75, instances=1, seed=0)
        with pytest.raises(ValueError):
            fuzz_bounds(4, 5, 0.9, 0.75, instances=1, seed=0)

    def test_csv_lines_shape(self):
        report = fuzz_bounds(3, 3, 0.9, 0.75, instances=3, seed=9)
        lines = report.csv_lines()
        assert lines[0].startswith("index,n,vocab_size,certified")
        assert len(lines) == 4
