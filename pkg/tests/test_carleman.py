import numpy as np
import pytest

from epirate import carleman
from epirate.carleman import (BadMargin, BadWeightParameters,
                              BoundaryViolation, GeneralWeight,
                              NonpositiveLevel, SimpleWeight, estimate_ratio,
                              in_level_domain, level_function, ratio_probe,
                              simple_weight_values, weight_at)
from epirate.grids import build_spatial_grid


class TestLevelFunction:
    @pytest.mark.parametrize("x, want", [
        ((0.0, 0.0), 0.25),
        ((0.5, 0.0), 0.75),
        ((0.1, 0.4), 0.43),
    ])
    def test_values(self, x, want):
        assert level_function(x) == pytest.approx(want, rel=1e-12)


class TestWeights:
    def test_simple_weight_values(self):
        assert weight_at(SimpleWeight(3.0), (1.0, 0.3)) == pytest.approx(
            np.exp(6.0), rel=1e-12)
        assert weight_at(SimpleWeight(2.0), (0.0, 0.9)) == 1.0

    def test_general_weight_value(self):
        got = weight_at(GeneralWeight(1.0, 1.0), (0.0, 0.0))
        assert got == pytest.approx(np.exp(8.0), rel=1e-12)

    def test_general_weight_needs_positive_level(self):
        with pytest.raises(NonpositiveLevel):
            weight_at(GeneralWeight(1.0, 2.0), (-1.0, 0.0))

    def test_parameter_floors(self):
        with pytest.raises(BadWeightParameters):
            SimpleWeight(0.5)
        with pytest.raises(BadWeightParameters):
            GeneralWeight(1.0, 0.2)

    def test_simple_weight_monotone(self):
        sg = build_spatial_grid(0.5, 1.5, 17)
        w3 = simple_weight_values(3.0, sg)
        w4 = simple_weight_values(4.0, sg)
        # nondecreasing along x1 (axis 0) and in the parameter
        assert np.all(np.diff(w3, axis=0) >= 0)
        assert np.all(w4 >= w3)

    def test_simple_weight_lower_bound_on_mesh(self):
        sg = build_spatial_grid(0.5, 1.5, 17)
        for lam in (1.0, 3.0, 5.0):
            w = simple_weight_values(lam, sg)
            assert np.all(w >= np.exp(2.0 * lam * sg.lo**2) - 1e-12)

    def test_unweighted_case(self):
        sg = build_spatial_grid(0.5, 1.5, 9)
        np.testing.assert_allclose(simple_weight_values(0.0, sg), 1.0)


class TestLevelDomain:
    def test_membership(self):
        assert in_level_domain((0.1, 0.1))
        assert not in_level_domain((0.6, 0.0))

    def test_margin_validation(self):
        with pytest.raises(BadMargin):
            in_level_domain((0.1, 0.1), margin=0.5)

    def test_margin_nesting_on_sampled_mesh(self):
        xs = np.linspace(-0.2, 0.8, 21)
        for x1 in xs:
            for x2 in xs:
                if in_level_domain((x1, x2), margin=0.1):
                    assert in_level_domain((x1, x2), margin=0.0)


class TestEstimateRatio:
    def setup_method(self):
        self.sg = build_spatial_grid(0.5, 1.5, 33)
        self.x1, self.x2 = self.sg.mesh()

    def test_zero_sample_sentinel(self):
        assert estimate_ratio(np.zeros((33, 33)), 2.0, self.sg) == np.inf

    def test_compact_bump_positive(self):
        r2 = (self.x1 - 1.0) ** 2 + (self.x2 - 1.0) ** 2
        u = np.clip(1.0 - r2 / 0.16, 0.0, None) ** 3
        assert estimate_ratio(u, 2.0, self.sg) > 0.0

    def test_boundary_violation_detected(self):
        tilted = (self.x1 - self.sg.lo) * np.sin(np.pi * (self.x2 - self.sg.lo))
        with pytest.raises(BoundaryViolation):
            estimate_ratio(tilted, 2.0, self.sg)
        sloped = (np.sin(np.pi * (self.x1 - self.sg.lo))
                  * np.sin(np.pi * (self.x2 - self.sg.lo)))
        with pytest.raises(BoundaryViolation):
            estimate_ratio(sloped, 2.0, self.sg)

    def test_lam_floor(self):
        with pytest.raises(BadWeightParameters):
            estimate_ratio(np.zeros((33, 33)), 0.5, self.sg)


class TestRatioProbe:
    def test_positive_and_stable_across_lam(self):
        sg = build_spatial_grid(0.5, 1.5, 33)
        records = ratio_probe(sg, lams=(1, 3, 5), num_samples=60, seed=11)
        mins = [r["min_ratio"] for r in records]
        assert all(m > 0 for m in mins)
        # the empirical bound must not degrade as the parameter grows
        assert mins[-1] >= 0.5 * mins[0]
        assert all(r["n_samples"] == 60 for r in records)

    def test_record_schema(self):
        sg = build_spatial_grid(0.5, 1.5, 17)
        (rec,) = ratio_probe(sg, lams=(2,), num_samples=5, seed=0)
        assert set(rec) == {"lambda", "n_samples", "min_ratio", "mean_ratio"}

    def test_sample_family_is_admissible(self):
        sg = build_spatial_grid(0.5, 1.5, 33)
        rng = np.random.default_rng(2)
        for _ in range(10):
            u = carleman.random_compactly_flat_sample(sg, rng)
            estimate_ratio(u, 1.0, sg)  # must not raise
