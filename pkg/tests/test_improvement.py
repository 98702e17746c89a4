import math

import numpy as np
import pytest

from searchplan.core import DiscreteDistribution, ExponentialPerLocation, validate_scenario
from searchplan.evaluation import compare_plans, true_curve, verification_grid
from searchplan.improvement import (
    IMPROVED,
    NO_GUARANTEE,
    ImprovementError,
    bump_density,
    concentrate,
    concentration_threshold,
    find_witness_location,
    improve,
    improve_continuous,
    improve_discrete,
    repair_misspecified,
    swap,
)
from searchplan.planner import AggregateCurve, SearchPlanner

from conftest import circular, piecewise_uniform, two_cell


class TestRepair:
    def test_discrete_masses(self):
        r = repair_misspecified(two_cell(x0=3))
        m = r.new_distribution.masses
        assert m[1] == pytest.approx(0.792) and m[2] == pytest.approx(0.198) and m[3] == 0.01
        assert r.construction == "support-extension"
        assert r.outcome == IMPROVED
        assert np.all(r.comparison.p_b == 0) and np.all(r.comparison.p_a > 0)
        assert validate_scenario(r.scenario) == []

    def test_funding_time_reported(self):
        r = repair_misspecified(two_cell(x0=3))
        # x0 gets effort once the common rate drops to 0.01
        t_fund = r.diagnostics["funding_time"]
        assert t_fund == pytest.approx(math.log(79.2) + math.log(19.8), rel=1e-9)
        assert r.times[0] > t_fund

    def test_original_plan_misses(self):
        s = two_cell(x0=3)
        assert np.all(true_curve(s, SearchPlanner(s))(np.geomspace(1e-3, 1e3, 20)) == 0)

    def test_well_specified_rejected(self):
        with pytest.raises(ImprovementError):
            repair_misspecified(two_cell(x0=1))

    def test_epsilon_floor(self):
        with pytest.raises(ImprovementError):
            repair_misspecified(two_cell(x0=3), epsilon=1e-7)

    def test_missing_rate_for_new_cell(self):
        s = two_cell(x0=3, rates={1: 1.0, 2: 1.0})
        with pytest.raises(ImprovementError):
            repair_misspecified(s)

    def test_continuous_uniform(self):
        s = piecewise_uniform(x0=1.5)
        r = repair_misspecified(s)
        assert r.outcome == IMPROVED
        g = r.new_distribution
        assert g.total_probability() == pytest.approx(1.0, abs=1e-12)
        assert g.locate(1.5) == g.density.size - 1

    def test_continuous_polar(self):
        r = repair_misspecified(circular(x0=(7.0, 1.0)))
        assert r.outcome == IMPROVED
        assert r.new_distribution.total_probability() == pytest.approx(1 - math.exp(-18), abs=1e-9)


class TestDiscrete:
    def test_case_i_swap(self):
        r = improve_discrete(two_cell(0.2, x0=1, offset=1.0))
        assert r.outcome == IMPROVED and r.construction == "mass-swap"
        assert r.new_distribution.masses == {1: 0.8, 2: 0.2}
        assert r.comparison.strict and r.comparison.delta_mu < 0

    def test_case_ii_below_threshold(self):
        r = improve_discrete(two_cell(0.8, x0=1, slope=0.0, offset=1.0))
        assert r.outcome == NO_GUARANTEE
        assert r.diagnostics["threshold"] == pytest.approx(math.log(4), abs=1e-12)

    def test_case_ii_concentration(self):
        r = improve_discrete(two_cell(0.8, x0=1, slope=0.0, offset=2.0))
        assert r.outcome == IMPROVED and r.construction == "mass-concentration"
        assert r.new_distribution.masses[1] == pytest.approx(0.9)
        assert r.new_distribution.masses[2] == pytest.approx(0.1)
        assert r.comparison.horizon_dependent

    def test_threshold_uses_rates(self):
        s = two_cell(0.8, rates={1: 2.0, 2: 1.0})
        # q1^-1(q2(0)) = ln(0.8 * 2 / 0.2) / 2
        assert concentration_threshold(s) == pytest.approx(math.log(8) / 2)

    def test_swap_preserves_aggregate_curve(self):
        s = two_cell(0.3, x0=1)
        a = SearchPlanner(s).curve
        b = SearchPlanner(s.replace(distribution=swap(s.distribution, 1, 2))).curve
        for lam in np.geomspace(1e-4, 0.69, 30):
            assert a(lam) == pytest.approx(b(lam), abs=1e-13)

    def test_concentration_monotone_in_theta(self):
        s = two_cell(0.8, x0=1)
        budgets = np.linspace(0.1, 10, 50)
        prev = None
        for theta in [0.1, 0.3, 0.6, 0.9]:
            p = SearchPlanner(s.replace(distribution=concentrate(s.distribution, 1, theta)))
            y = p.efforts_for_budgets(budgets, index=0)
            if prev is not None:
                assert np.all(y >= prev - 1e-12)
            prev = y

    def test_below_threshold_stasis(self):
        s = two_cell(0.8, x0=1, slope=0.001)
        new = s.replace(distribution=concentrate(s.distribution, 1, 0.5))
        times = np.geomspace(1e-3, 1e3, 64)  # E <= 1 < ln 4
        c = compare_plans(s, SearchPlanner(new), SearchPlanner(s), times)
        assert np.array_equal(c.p_a, c.p_b)

    def test_needs_x0_in_support(self):
        with pytest.raises(ImprovementError):
            improve_discrete(two_cell(x0=3))

    def test_needs_discrete(self):
        with pytest.raises(ImprovementError):
            improve_discrete(circular())


class TestWitness:
    def test_non_argmax(self):
        s = two_cell().replace(distribution=DiscreteDistribution({1: 0.5, 2: 0.3, 3: 0.2}))
        w = find_witness_location(s)
        assert w.cell in (2, 3) and not w.threshold_dependent

    def test_uniform_flagged(self):
        s = two_cell().replace(distribution=DiscreteDistribution({1: 1 / 3, 2: 1 / 3, 3: 1 / 3 + 0.0}))
        w = find_witness_location(s)
        assert w.threshold_dependent

    def test_two_cells(self):
        s = two_cell().replace(distribution=DiscreteDistribution({1: 0.9, 2: 0.1}))
        assert find_witness_location(s).cell == 2


class TestContinuous:
    def test_bump(self):
        s = piecewise_uniform(offset=0.5)
        r = improve_continuous(s, method="bump")
        assert r.outcome == IMPROVED and r.construction == "density-bump"
        assert r.new_distribution.total_probability() == pytest.approx(1.0, abs=1e-12)

    def test_bump_factor_one_rejected(self):
        with pytest.raises(ImprovementError):
            improve_continuous(piecewise_uniform(), method="bump", factor=1.0)

    def test_degenerate_bump_rejected(self):
        g = piecewise_uniform().grid
        with pytest.raises(ImprovementError):
            bump_density(g, 0, 1e30)

    def test_support_shrink(self):
        r = improve_continuous(piecewise_uniform(offset=0.5))
        assert r.outcome == IMPROVED and r.construction == "support-shrink"
        assert r.new_distribution.b < 1.0

    def test_sigma_shrink(self):
        r = improve_continuous(circular(x0=(0.1, 0.0)))
        assert r.outcome == IMPROVED and r.construction == "sigma-shrink"
        assert r.new_distribution.sigma < 1.0

    def test_sigma_shrink_needs_coverage(self):
        # x0 lies outside the searched disc at the first grid times, so both
        # plans miss it there and no shrink can win everywhere
        r = improve_continuous(circular(x0=(0.5, 0.0)))
        assert r.outcome != IMPROVED

    def test_dispatch(self):
        assert improve(two_cell(x0=3)).construction == "support-extension"
        assert improve(two_cell(0.2, offset=1.0)).construction == "mass-swap"
