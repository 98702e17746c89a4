import math

import numpy as np
import pytest

from searchplan.core import (
    Allocation,
    CircularNormal,
    DiscreteDistribution,
    ExponentialDetection,
    ExponentialPerLocation,
    GENERIC_FAMILIES,
    GenericRegularDetection,
    GridDensity,
    LinearEffort,
    Scenario,
    ScenarioError,
    TableEffort,
    Uniform1D,
    check_existence,
    detection_probability_of_effort,
    require_valid,
    validate_scenario,
)
from searchplan.scenario_io import (
    ScenarioFormatError,
    load_scenario,
    scenario_from_dict,
    scenario_hash,
    scenario_to_dict,
)

from conftest import SCENARIOS, circular, piecewise_uniform, two_cell


class TestDistributions:
    def test_masses_must_sum_to_one(self):
        bad = DiscreteDistribution({1: 0.8, 2: 0.3})
        assert any("sum" in v for v in bad.violations())

    def test_degenerate_rejected(self):
        assert DiscreteDistribution({1: 1.0}).violations()

    def test_nonpositive_mass_rejected(self):
        assert DiscreteDistribution({1: 1.2, 2: -0.2}).violations()

    def test_valid(self):
        assert DiscreteDistribution({1: 0.8, 2: 0.2}).violations() == []

    def test_circular_normal_mass_and_truncation(self):
        g = CircularNormal(1.0).discretize()
        assert g.areas.size == 300 * 64
        # mass lost beyond 6 sigma is exp(-18)
        assert abs(g.total_probability() - (1 - math.exp(-18))) < 1e-12
        assert CircularNormal(1.0).violations() == []

    def test_circular_normal_shallow_truncation_flagged(self):
        assert CircularNormal(1.0, truncation=3.0).violations()

    def test_circular_cell_average_density(self):
        cn = CircularNormal(2.0)
        g = cn.discretize()
        # ring i holds exp(-r0^2/2s^2) - exp(-r1^2/2s^2), split evenly in angle
        r0, r1 = g.lower[0, 0], g.upper[0, 0]
        expected = (math.exp(-r0**2 / 8) - math.exp(-r1**2 / 8)) / 64
        assert g.masses[0] == pytest.approx(expected, rel=1e-12)

    def test_uniform_breaks_on_edges(self):
        g = Uniform1D(-1, 1, 2000).discretize([0.0])
        assert np.any(g.lower[:, 0] == 0.0)
        assert g.total_probability() == pytest.approx(1.0, abs=1e-12)

    def test_uniform_bad_interval(self):
        assert Uniform1D(1, -1).violations()


class TestGridLookup:
    def test_half_open_cells(self):
        g = GridDensity(np.array([[0.0], [1.0]]), np.array([[1.0], [2.0]]), [0.5, 0.5])
        assert g.locate(1.0) == 1
        assert g.locate(0.0) == 0
        assert g.locate(2.0) is None
        assert g.locate(-0.1) is None

    def test_polar_angle_wraps(self):
        g = CircularNormal(1.0).discretize()
        assert g.locate((0.5, 2 * math.pi + 0.01)) == g.locate((0.5, 0.01))
        assert g.locate((6.5, 0.0)) is None

    def test_wrong_dimension(self):
        g = CircularNormal(1.0).discretize()
        with pytest.raises(ScenarioError):
            g.locate(0.5)


class TestDetection:
    def test_exponential(self):
        assert detection_probability_of_effort(ExponentialDetection(2.0), 1, 0.5) == pytest.approx(
            1 - math.exp(-1)
        )

    def test_zero_effort_is_zero(self):
        assert detection_probability_of_effort(ExponentialDetection(2.0), 1, 0.0) == 0.0

    def test_negative_effort_rejected(self):
        with pytest.raises(ValueError):
            detection_probability_of_effort(ExponentialDetection(1.0), 1, -1.0)

    def test_per_location_boundary_goes_right(self):
        det = ExponentialPerLocation.piecewise([0.0], [1.0, 3.0])
        assert det.rate_at(0.0) == 3.0
        assert det.rate_at(-1e-9) == 1.0

    def test_missing_rate_flagged(self):
        s = Scenario(
            DiscreteDistribution({1: 0.5, 2: 0.5}), ExponentialPerLocation({1: 1.0}), LinearEffort(1.0)
        )
        assert validate_scenario(s)

    def test_irregular_generic_flagged(self):
        # d(x, 0) != 0
        det = GenericRegularDetection(
            d=lambda x, y: 0.1 + 0.9 * (1 - np.exp(-y)),
            dprime=lambda x, y: 0.9 * np.exp(-y),
            dprime_inv=lambda x, g: np.log(0.9 / g),
        )
        s = Scenario(DiscreteDistribution({1: 0.5, 2: 0.5}), det, LinearEffort(1.0))
        assert any("d(x, 0)" in v for v in validate_scenario(s))
        ok, reason = check_existence(s)
        assert not ok and reason

    def test_non_concave_generic_flagged(self):
        det = GenericRegularDetection(
            d=lambda x, y: 1 - np.exp(-(y**2)),
            dprime=lambda x, y: 2 * y * np.exp(-(y**2)),
            dprime_inv=lambda x, g: g,
        )
        s = Scenario(DiscreteDistribution({1: 0.5, 2: 0.5}), det, LinearEffort(1.0))
        assert validate_scenario(s)

    def test_named_families_regular(self):
        for name, params in [("rational", {"kappa": 2.0}), ("exponential", {"rate": 0.7})]:
            det = GENERIC_FAMILIES[name](**params)
            s = Scenario(DiscreteDistribution({1: 0.5, 2: 0.5}), det, LinearEffort(1.0))
            assert validate_scenario(s) == []


class TestEffort:
    def test_linear(self):
        assert LinearEffort(2.0, 1.0)(3.0) == 7.0

    def test_negative_rate_flagged(self):
        assert LinearEffort(-1.0).violations()

    def test_table_must_not_decrease(self):
        assert TableEffort(((0, 0), (1, 2), (2, 1))).violations()
        assert TableEffort(((0, 0), (1, 2), (2, 2))).violations() == []

    def test_table_interpolates(self):
        assert TableEffort(((0, 0), (2, 4)))(1.0) == pytest.approx(2.0)


class TestScenario:
    def test_bundled_scenarios_valid(self):
        for name in ["two_cell", "two_cell_two_rates", "circular_normal", "uniform_piecewise", "misspecified"]:
            assert validate_scenario(load_scenario(SCENARIOS / f"{name}.json")) == [], name

    def test_cost_must_be_identity(self):
        assert validate_scenario(two_cell().replace(cost="quadratic"))

    def test_area_must_match_support(self):
        s = two_cell().replace(area=frozenset({1, 2, 3}))
        assert validate_scenario(s)

    def test_require_valid_raises(self):
        with pytest.raises(ScenarioError):
            require_valid(two_cell().replace(distribution=DiscreteDistribution({1: 0.5, 2: 0.6})))

    def test_support_membership(self):
        assert two_cell(x0=1).true_location_in_support()
        assert not two_cell(x0=3).true_location_in_support()
        assert circular().true_location_in_support()
        assert not circular(x0=(7.0, 0.0)).true_location_in_support()
        assert not piecewise_uniform(x0=1.5).true_location_in_support()

    def test_allocation_budget_violation(self):
        s = two_cell()
        alloc = Allocation(s.cells, np.array([1.0, 0.5]), 2.0)
        assert alloc.violations()
        assert Allocation(s.cells, np.array([1.5, 0.5]), 2.0).violations() == []


class TestScenarioIO:
    def test_roundtrip(self):
        for path in sorted(SCENARIOS.glob("*.json")):
            if path.name == "malformed.json":
                continue
            s = load_scenario(path)
            again = scenario_from_dict(scenario_to_dict(s))
            assert scenario_to_dict(again) == scenario_to_dict(s)
            assert scenario_hash(again) == scenario_hash(s)

    def test_malformed(self):
        with pytest.raises(ScenarioFormatError):
            load_scenario(SCENARIOS / "malformed.json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioFormatError):
            load_scenario(tmp_path / "nope.json")

    def test_unknown_key_rejected(self):
        doc = scenario_to_dict(two_cell())
        doc["colour"] = "blue"
        with pytest.raises(ScenarioFormatError, match="unknown"):
            scenario_from_dict(doc)

    def test_unknown_nested_key_rejected(self):
        doc = scenario_to_dict(two_cell())
        doc["detection"]["sweep"] = 2
        with pytest.raises(ScenarioFormatError):
            scenario_from_dict(doc)

    def test_schema_version_checked(self):
        doc = scenario_to_dict(two_cell())
        doc["schema"] = 2
        with pytest.raises(ScenarioFormatError):
            scenario_from_dict(doc)

    def test_hash_changes_with_content(self):
        assert scenario_hash(two_cell(p=0.8)) != scenario_hash(two_cell(p=0.7))
