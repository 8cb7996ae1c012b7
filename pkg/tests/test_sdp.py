import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from htmean.core import SolverConfig, make_rng
from htmean.sdp import (
    DimensionGuard,
    EnumerationGuard,
    TestingProgramInstance,
    instance_from_json,
    instance_to_json,
    mt_value_curve,
    solution_to_json,
    solve_mt,
    solve_mte_bruteforce,
)
from htmean.verify import random_instance

CFG = SolverConfig()


def aligned_instance(k=6, d=3, D=2.0, r=1.0):
    Z = np.zeros((k, d))
    Z[:, 0] = D
    return TestingProgramInstance(x=np.zeros(d), r=r, bucket_means=Z)


class TestInstanceValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            TestingProgramInstance(x=np.zeros(3), r=1.0, bucket_means=np.zeros((2, 2)))

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            TestingProgramInstance(x=np.zeros(2), r=-0.5, bucket_means=np.zeros((2, 2)))

    def test_dimension_guard(self):
        with pytest.raises(DimensionGuard):
            solve_mt(
                TestingProgramInstance(
                    x=np.zeros(2), r=1.0, bucket_means=np.zeros((2100, 2))
                ),
                CFG,
            )


class TestSolveMt:
    def test_aligned_buckets_saturate(self):
        # Every bucket at 2r e_1: the all-ones support is feasible.
        sol = solve_mt(aligned_instance(k=5, D=2.0, r=1.0), CFG)
        assert sol.value == pytest.approx(5.0, abs=1e-3 * 5)

    def test_coincident_buckets_give_zero(self):
        sol = solve_mt(
            TestingProgramInstance(x=np.zeros(2), r=1.0, bucket_means=np.zeros((4, 2))), CFG
        )
        assert abs(sol.value) <= 1e-3 * 4

    def test_split_cloud_beats_oracle(self):
        Z = np.array([[2.0, 0.0], [2.0, 0.0], [-2.0, 0.0], [-2.0, 0.0]])
        inst = TestingProgramInstance(x=np.zeros(2), r=1.0, bucket_means=Z)
        value, b, v = solve_mte_bruteforce(inst)
        sol = solve_mt(inst, CFG)
        assert value == 2
        assert sol.value >= 2.0 - 1e-3 * 4
        assert sol.value >= value - 1e-3 * 4

    def test_closed_form_value_curve(self):
        # All buckets at distance D: value is exactly k*min(1, D^2/r^2).
        k, D = 6, 2.0
        for r in (0.5, 1.0, 2.0, 3.0, 4.0):
            sol = solve_mt(aligned_instance(k=k, D=D, r=r), CFG)
            assert sol.value == pytest.approx(k * min(1.0, D * D / (r * r)), abs=2e-3 * k)

    def test_solution_invariants(self):
        rng = make_rng(11)
        for _ in range(5):
            inst = random_instance(rng, 6, 3)
            sol = solve_mt(inst, CFG)
            N = 1 + inst.k + inst.d
            X = sol.moment_matrix
            assert X.shape == (N, N)
            assert np.allclose(X, X.T)
            tol = 100 * CFG.primal_tolerance * N
            assert np.linalg.eigvalsh(X).min() >= -tol
            assert abs(X[0, 0] - 1.0) <= tol
            assert abs(np.trace(sol.v_block) - 1.0) <= tol
            assert np.all(sol.b_diagonal >= -tol)
            assert np.all(sol.b_diagonal <= 1.0 + tol)
            assert -1e-3 * inst.k <= sol.value <= inst.k * (1 + 1e-3)

    def test_row_norm_bound(self):
        # ||v_{b_j}||^2 <= X[b_j, b_j] + tol from the PSD minors.
        rng = make_rng(12)
        for _ in range(5):
            inst = random_instance(rng, 5, 3)
            sol = solve_mt(inst, CFG)
            k = inst.k
            X = sol.moment_matrix
            for j in range(1, k + 1):
                v_row = X[j, k + 1 :]
                assert v_row @ v_row <= X[j, j] + 1e-4

    def test_determinism(self):
        inst = random_instance(make_rng(13), 7, 3)
        a = solve_mt(inst, CFG)
        b = solve_mt(inst, CFG)
        assert a.value == b.value
        assert np.array_equal(a.moment_matrix, b.moment_matrix)


class TestBruteForce:
    def test_all_reachable(self):
        value, b, v = solve_mte_bruteforce(aligned_instance(k=4, D=2.0, r=1.0))
        assert value == 4
        assert b.tolist() == [1, 1, 1, 1]
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)

    def test_split_cloud(self):
        Z = np.array([[2.0, 0.0], [2.0, 0.0], [-2.0, 0.0], [-2.0, 0.0]])
        value, b, _ = solve_mte_bruteforce(
            TestingProgramInstance(x=np.zeros(2), r=1.0, bucket_means=Z)
        )
        assert value == 2
        assert b.sum() == 2

    def test_short_spike_unreachable(self):
        inst = TestingProgramInstance(
            x=np.zeros(2), r=1.0, bucket_means=np.array([[0.5, 0.0]])
        )
        value, b, _ = solve_mte_bruteforce(inst)
        assert value == 0
        assert b.sum() == 0

    def test_margin_certificate_is_unit(self):
        rng = make_rng(14)
        for _ in range(10):
            inst = random_instance(rng, 5, 3)
            value, b, v = solve_mte_bruteforce(inst)
            if value > 0:
                W = inst.bucket_means - inst.x
                margins = W[b.astype(bool)] @ v
                assert np.linalg.norm(v) == pytest.approx(1.0, rel=1e-9)
                assert np.all(margins >= inst.r - 1e-6 * max(1.0, inst.r))

    def test_enumeration_guard(self):
        with pytest.raises(EnumerationGuard):
            solve_mte_bruteforce(
                TestingProgramInstance(x=np.zeros(2), r=1.0, bucket_means=np.ones((17, 2)))
            )


class TestValueCurve:
    def test_closed_form_endpoints(self):
        # k*min(1, D^2/r^2) with D = 2: saturated, saturated, quarter value.
        k = 6
        inst = aligned_instance(k=k, D=2.0)
        values = mt_value_curve(inst.x, inst.bucket_means, [0.5, 1.0, 4.0], CFG)
        assert values[0] == pytest.approx(k, abs=2e-3 * k)
        assert values[1] == pytest.approx(k, abs=2e-3 * k)
        assert values[2] == pytest.approx(k / 4.0, abs=2e-3 * k)

    def test_singleton_matches_solve(self):
        inst = random_instance(make_rng(15), 5, 2)
        curve = mt_value_curve(inst.x, inst.bucket_means, [inst.r], CFG)
        assert curve == [solve_mt(inst, CFG).value]

    def test_empty_radii(self):
        inst = aligned_instance()
        assert mt_value_curve(inst.x, inst.bucket_means, [], CFG) == []

    def test_rejects_unsorted(self):
        inst = aligned_instance()
        with pytest.raises(ValueError):
            mt_value_curve(inst.x, inst.bucket_means, [2.0, 1.0], CFG)

    def test_monotone_within_slack(self):
        rng = make_rng(16)
        for _ in range(3):
            inst = random_instance(rng, 6, 3)
            cap = float(np.max(np.linalg.norm(inst.bucket_means - inst.x, axis=1)))
            values = mt_value_curve(inst.x, inst.bucket_means, np.linspace(0, 1.2 * cap, 8), CFG)
            assert max(np.diff(values)) <= 2e-3 * inst.k


@settings(max_examples=25, deadline=None)
@given(
    k=st.integers(1, 5),
    d=st.integers(1, 3),
    seed=st.integers(0, 10_000),
)
def test_relaxation_dominates_bruteforce(k, d, seed):
    inst = random_instance(make_rng(seed), k, d)
    value, _, _ = solve_mte_bruteforce(inst)
    sol = solve_mt(inst, CFG)
    assert sol.value >= value - 1e-3 * k


class TestJson:
    def test_round_trip(self):
        inst = aligned_instance(k=3, d=2)
        text = instance_to_json(inst)
        back = instance_from_json(text)
        assert np.array_equal(back.bucket_means, inst.bucket_means)
        assert back.r == inst.r

    def test_solution_document_fields(self):
        inst = aligned_instance(k=3, d=2)
        sol = solve_mt(inst, CFG)
        doc = json.loads(solution_to_json(inst, sol))
        assert set(doc) == {"k", "d", "r", "x", "Z", "value", "X"}
        assert doc["k"] == 3 and doc["d"] == 2
        assert len(doc["X"]) == 1 + 3 + 2

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            instance_from_json(json.dumps({"k": 2, "d": 5, "r": 1.0, "x": [0, 0],
                                           "Z": [[1, 1], [2, 2]]}))
