import math

import numpy as np
import pytest

from htmean.core import (
    FORMULA_IDS,
    EstimatorConfig,
    Sample,
    SolverConfig,
    categorical,
    child_seed,
    desk_profile,
    make_rng,
    paper_profile,
)


class TestRng:
    def test_identical_seeds_identical_streams(self):
        a = make_rng(7).standard_normal(100)
        b = make_rng(7).standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = make_rng(7).standard_normal(100)
        b = make_rng(8).standard_normal(100)
        assert not np.array_equal(a, b)

    def test_categorical_single_outcome(self):
        rng = make_rng(0)
        assert all(categorical([1.0], rng) == 0 for _ in range(20))

    def test_categorical_validates(self):
        with pytest.raises(ValueError):
            categorical([0.5, 0.4], make_rng(0))

    def test_child_seeds_are_independent_and_stable(self):
        a = make_rng(child_seed(3, 0)).standard_normal(8)
        b = make_rng(child_seed(3, 1)).standard_normal(8)
        a2 = make_rng(child_seed(3, 0)).standard_normal(8)
        assert np.array_equal(a, a2)
        assert not np.array_equal(a, b)

    def test_uniform_gaussian_categorical_supported(self):
        rng = make_rng(5)
        assert 0.0 <= rng.uniform() < 1.0
        assert np.isfinite(rng.standard_normal())
        assert categorical([0.3, 0.7], rng) in (0, 1)


class TestSample:
    def test_basic(self):
        s = Sample(points=np.zeros((3, 2)), alpha=0.5)
        assert s.n == 3 and s.d == 2

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            Sample(points=np.zeros((2, 2)), alpha=1.5)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            Sample(points=np.zeros(4), alpha=0.5)

    def test_points_read_only(self):
        s = Sample(points=np.zeros((2, 2)), alpha=1.0)
        with pytest.raises(ValueError):
            s.points[0, 0] = 1.0


class TestProfiles:
    def test_paper_profile_bucket_count(self):
        cfg = paper_profile(math.exp(-1.0), n=100_000, d=4)
        assert cfg.bucket_count(100_000) == 4000

    def test_desk_profile_bucket_count(self):
        cfg = desk_profile(math.exp(-2.0), n=10_000, d=4)
        assert cfg.bucket_constant == 10.0
        assert cfg.bucket_count(10_000) == 20

    def test_delta_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            desk_profile(1.5, n=100, d=2)
        with pytest.raises(ValueError):
            paper_profile(0.0, n=100, d=2)

    def test_desk_profile_caps_bucket_count(self):
        cfg = desk_profile(1e-6, n=40, d=2)
        assert cfg.bucket_count(40) <= 10

    def test_profiles_share_formula_identifiers(self):
        desk = desk_profile(0.1, n=1000, d=4)
        paper = paper_profile(0.1, n=1000, d=4)
        assert desk.formulas == paper.formulas == FORMULA_IDS

    def test_paper_profile_iteration_budget(self):
        cfg = paper_profile(0.1, n=1000, d=4)
        assert cfg.iteration_cap == math.ceil(1e6 * math.log(4 * 1000))


class TestConfigValidation:
    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            EstimatorConfig(delta=0.1, sdp_threshold_high=0.05, sdp_threshold_low=0.9)

    def test_solver_tolerances_positive(self):
        with pytest.raises(ValueError):
            SolverConfig(primal_tolerance=0.0)

    def test_bucket_count_clamps(self):
        cfg = EstimatorConfig(delta=0.1, bucket_constant=1000.0)
        assert cfg.bucket_count(10) == 5  # floor(m/2)
        assert cfg.bucket_count(1) == 1
