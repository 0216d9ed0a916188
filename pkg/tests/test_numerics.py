import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import spectral_norm_jacobi, transport_cost_vertex_enumeration
from wasslip.numerics import (
    DimensionError,
    LPProblem,
    LPStatus,
    NormTag,
    UnsupportedNormError,
    as_matrix,
    as_vector,
    finite_difference_gradient,
    norm,
    operator_norm,
    power_iteration,
    solve_lp,
)

RNG = np.random.default_rng(20240811)


class TestVectorsAndNorms:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_vector([1.0, math.nan])
        with pytest.raises(ValueError):
            as_matrix([[1.0, math.inf]])

    def test_norm_examples(self):
        assert norm([0.0, 0.0, 0.0], NormTag.L2) == 0.0
        assert norm([3.0, 4.0], NormTag.L2) == pytest.approx(5.0, abs=1e-12)
        assert norm([1.0, -2.0, 3.0], NormTag.LINF) == 3.0
        assert norm([1.0, -2.0, 3.0], NormTag.L1) == 6.0

    def test_empty_vector_rejected(self):
        with pytest.raises(DimensionError):
            norm(np.array([]), NormTag.L2)

    def test_zero_iff_zero_vector(self):
        v = RNG.standard_normal(5)
        for tag in NormTag:
            assert norm(v, tag) > 0.0

    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=6))
    @settings(max_examples=100, deadline=None, derandomize=True)
    def test_dual_norm_pairing(self, entries):
        """||v|| equals the sup of u.v over unit-dual-norm u: sampled u are
        lower bounds and the closed-form maximizer attains the value."""
        v = np.array(entries)
        rng = np.random.default_rng(7)
        for tag in NormTag:
            target = norm(v, tag)
            dual = tag.dual
            for _ in range(20):
                u = rng.standard_normal(v.size)
                du = norm(u, dual)
                if du == 0.0:
                    continue
                assert float(np.dot(u / du, v)) <= target + 1e-9
            if tag == NormTag.L1:
                maximizer = np.sign(v)
                maximizer[maximizer == 0.0] = 1.0
            elif tag == NormTag.L2:
                maximizer = v / target if target > 0 else np.zeros_like(v)
            else:
                maximizer = np.zeros_like(v)
                i = int(np.argmax(np.abs(v)))
                maximizer[i] = math.copysign(1.0, v[i]) if v[i] != 0.0 else 1.0
            if target > 0.0:
                assert float(np.dot(maximizer, v)) == pytest.approx(target, abs=1e-9)


class TestOperatorNorm:
    def test_identity(self):
        assert operator_norm(np.eye(3), NormTag.L2) == pytest.approx(1.0, abs=1e-10)

    def test_diagonal(self):
        assert operator_norm(np.diag([3.0, 1.0]), NormTag.L2) == pytest.approx(3.0, abs=1e-9)

    def test_l1_linf_closed_forms(self):
        W = np.array([[1.0, -2.0], [3.0, 4.0]])
        assert operator_norm(W, NormTag.L1) == 6.0  # max column abs sum
        assert operator_norm(W, NormTag.LINF) == 7.0  # max row abs sum

    def test_mixed_tags_rejected(self):
        with pytest.raises(UnsupportedNormError):
            operator_norm(np.eye(2), NormTag.L1, NormTag.L2)

    def test_matches_jacobi_oracle_seeded(self):
        W = RNG.standard_normal((5, 4))
        expected = spectral_norm_jacobi(W)
        assert operator_norm(W, NormTag.L2) == pytest.approx(expected, rel=1e-8)

    def test_sampled_ratios_lower_bound(self):
        rng = np.random.default_rng(99)
        W = rng.standard_normal((4, 6))
        for tag in NormTag:
            op = operator_norm(W, tag)
            for _ in range(1000):
                x = rng.standard_normal(6)
                nx = norm(x, tag)
                assert norm(W @ x, tag) / nx <= op + 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None, derandomize=True)
    def test_submultiplicative(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((3, 4))
        B = rng.standard_normal((4, 5))
        for tag in NormTag:
            assert operator_norm(A @ B, tag) <= operator_norm(A, tag) * operator_norm(B, tag) + 1e-9


class TestPowerIteration:
    def test_diagonal(self):
        sigma, u, v = power_iteration(np.diag([2.0, 5.0]))
        assert sigma == pytest.approx(5.0, abs=1e-9)
        assert abs(v[1]) == pytest.approx(1.0, abs=1e-5)

    def test_rank_one(self):
        a = np.array([1.0, -2.0, 2.0])
        b = np.array([3.0, 4.0])
        sigma, _, _ = power_iteration(np.outer(a, b))
        assert sigma == pytest.approx(norm(a, NormTag.L2) * norm(b, NormTag.L2), rel=1e-10)

    def test_zero_matrix(self):
        sigma, u, v = power_iteration(np.zeros((3, 2)))
        assert sigma == 0.0
        assert list(u) == [1.0, 0.0, 0.0]
        assert list(v) == [1.0, 0.0]

    def test_seeded_6x6_matches_jacobi(self):
        W = np.random.default_rng(13).standard_normal((6, 6))
        sigma, _, _ = power_iteration(W, tol=1e-10)
        assert sigma == pytest.approx(spectral_norm_jacobi(W), rel=1e-8)

    def test_sigma_nondecreasing(self):
        for seed in range(8):
            W = np.random.default_rng(seed).standard_normal((5, 5))
            history: list = []
            power_iteration(W, tol=1e-13, history=history)
            for prev, nxt in zip(history, history[1:]):
                assert nxt >= prev - 1e-12

    def test_singular_vectors_consistent(self):
        W = np.random.default_rng(3).standard_normal((4, 3))
        sigma, u, v = power_iteration(W, tol=1e-13)
        assert np.allclose(W @ v, sigma * u, atol=1e-7)
        assert norm(u, NormTag.L2) == pytest.approx(1.0, abs=1e-10)
        assert norm(v, NormTag.L2) == pytest.approx(1.0, abs=1e-10)


class TestSimplex:
    def test_single_bound(self):
        sol = solve_lp(LPProblem(np.array([1.0]), ineq_constraints=[(np.array([1.0]), 1.0)]))
        assert sol.status == LPStatus.OPTIMAL
        assert sol.value == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_optimum_set(self):
        sol = solve_lp(
            LPProblem(np.array([1.0, 1.0]), ineq_constraints=[(np.array([1.0, 1.0]), 1.0)])
        )
        assert sol.status == LPStatus.OPTIMAL
        assert sol.value == pytest.approx(1.0, abs=1e-12)

    def test_unbounded(self):
        sol = solve_lp(LPProblem(np.array([1.0])))
        assert sol.status == LPStatus.UNBOUNDED

    def test_infeasible(self):
        sol = solve_lp(LPProblem(np.array([1.0]), ineq_constraints=[(np.array([1.0]), -1.0)]))
        assert sol.status == LPStatus.INFEASIBLE

    def test_equality_constraints(self):
        # max x + 2y s.t. x + y = 1
        sol = solve_lp(
            LPProblem(np.array([1.0, 2.0]), eq_constraints=[(np.array([1.0, 1.0]), 1.0)])
        )
        assert sol.status == LPStatus.OPTIMAL
        assert sol.value == pytest.approx(2.0, abs=1e-12)
        assert sol.point[1] == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            solve_lp(LPProblem(np.array([1.0, 2.0]), ineq_constraints=[(np.array([1.0]), 1.0)]))

    def _transport_lp(self, a, b, C):
        n, m = C.shape
        nv = n * m
        obj = -C.reshape(nv)
        eq = []
        for i in range(n):
            row = np.zeros(nv)
            row[i * m : (i + 1) * m] = 1.0
            eq.append((row, a[i]))
        for j in range(m):
            row = np.zeros(nv)
            row[j::m] = 1.0
            eq.append((row, b[j]))
        return solve_lp(LPProblem(obj, eq_constraints=eq))

    @pytest.mark.parametrize("seed", range(12))
    def test_transport_polytope_vs_vertex_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.1, 1.0, 3)
        a /= a.sum()
        b = rng.uniform(0.1, 1.0, 3)
        b /= b.sum()
        C = rng.uniform(0.0, 5.0, (3, 3))
        sol = self._transport_lp(a, b, C)
        assert sol.status == LPStatus.OPTIMAL
        expected = transport_cost_vertex_enumeration(a, b, C)
        assert -sol.value == pytest.approx(expected, abs=1e-8)

    @pytest.mark.parametrize("seed", range(6))
    def test_weak_duality_feasible_points(self, seed):
        """Any feasible coupling scores no better than the solver optimum."""
        rng = np.random.default_rng(100 + seed)
        a = rng.uniform(0.1, 1.0, 4)
        a /= a.sum()
        b = rng.uniform(0.1, 1.0, 3)
        b /= b.sum()
        C = rng.uniform(0.0, 3.0, (4, 3))
        sol = self._transport_lp(a, b, C)
        product_coupling = np.outer(a, b).reshape(-1)
        assert float(np.dot(-C.reshape(-1), product_coupling)) <= sol.value + 1e-9

    def test_solution_feasibility_tolerance(self):
        rng = np.random.default_rng(42)
        a = rng.uniform(0.1, 1.0, 5)
        a /= a.sum()
        b = rng.uniform(0.1, 1.0, 5)
        b /= b.sum()
        C = rng.uniform(0.0, 2.0, (5, 5))
        sol = self._transport_lp(a, b, C)
        pi = sol.point.reshape(5, 5)
        assert np.max(np.abs(pi.sum(axis=1) - a)) <= 1e-9
        assert np.max(np.abs(pi.sum(axis=0) - b)) <= 1e-9
        assert float(np.dot(-C.reshape(-1), sol.point)) == pytest.approx(sol.value, abs=1e-9)


class TestFiniteDifferences:
    def test_quadratic(self):
        grad = finite_difference_gradient(lambda v: float(np.dot(v, v)), np.array([1.0, 2.0]), 1e-5)
        assert np.allclose(grad, [2.0, 4.0], atol=1e-6)

    def test_constant(self):
        grad = finite_difference_gradient(lambda v: 3.25, np.array([0.3, -0.7, 1.1]), 1e-5)
        assert np.allclose(grad, 0.0)

    def test_h_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda v: 0.0, np.array([1.0]), 0.0)
