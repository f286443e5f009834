import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from extremize import qp
from extremize.errors import DimensionMismatch, InfeasibleConstraint, MaxIterationsExceeded

from oracles import projected_gradient


def random_psd(rng, d, rank=None):
    rank = d if rank is None else rank
    a = rng.normal(size=(d, rank))
    return a @ a.T + (1e-3 * np.eye(d) if rank == d else 0.0)


def random_problem(rng, d, with_sum):
    q = random_psd(rng, d)
    c = rng.normal(size=d) * 3
    nonneg = tuple(i for i in range(d) if rng.random() < 0.7)
    sum_c = None
    if with_sum:
        idx = tuple(range(d))
        sum_c = (idx, float(rng.uniform(0.2, 2.0)))
    return qp.QpProblem(q, c, nonneg, sum_c)


def random_feasible(rng, p, n):
    """``n`` points satisfying every constraint of ``p``, one per row."""
    bounded = np.zeros(p.dim, dtype=bool)
    bounded[list(p.nonneg_indices)] = True
    z = rng.normal(size=(n, p.dim)) * rng.choice([0.1, 1.0, 5.0], size=(n, 1))
    z[:, bounded] = np.abs(z[:, bounded])
    if p.sum_constraint is not None:
        idx, target = p.sum_constraint
        idx = list(idx)
        free = [i for i in idx if not bounded[i]]
        if free:
            z[:, free[0]] += target - z[:, idx].sum(axis=1)
        else:
            z[:, idx] *= target / z[:, idx].sum(axis=1, keepdims=True)
    return z


class TestExamples:
    def test_unconstrained_scalar(self):
        p = qp.QpProblem([[2.0]], [-2.0])
        sol = qp.solve(p)
        assert sol.beta.tolist() == [1.0]
        assert sol.objective == -1.0
        assert qp.check_kkt(p, sol.beta) <= 1e-12

    def test_separable_bound(self):
        p = qp.QpProblem(2 * np.eye(2), [-2.0, 2.0], nonneg_indices=(0, 1))
        sol = qp.solve(p)
        np.testing.assert_allclose(sol.beta, [1.0, 0.0], atol=1e-12)
        assert sol.active_set == (1,)

    def test_kkt_at_origin(self):
        p = qp.QpProblem(2 * np.eye(2), [-2.0, 2.0], nonneg_indices=(0, 1))
        assert qp.check_kkt(p, [0.0, 0.0]) == 2.0

    def test_kkt_reports_infeasibility(self):
        p = qp.QpProblem(2 * np.eye(2), [-2.0, 2.0], nonneg_indices=(0, 1))
        assert qp.check_kkt(p, [1.0, -0.7]) >= 0.7
        simplex = qp.QpProblem(np.eye(2), [0.0, 0.0], (0, 1), ((0, 1), 1.0))
        assert qp.check_kkt(simplex, [0.25, 0.25]) >= 0.5

    def test_kkt_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            qp.check_kkt(qp.QpProblem([[1.0]], [0.0]), [1.0, 2.0])

    def test_simplex_projection(self):
        # nearest simplex point to (1, 0.2): shift both by 0.1
        p = qp.QpProblem(np.eye(2), [-1.0, -0.2], (0, 1), ((0, 1), 1.0))
        np.testing.assert_allclose(qp.solve(p).beta, [0.9, 0.1], atol=1e-12)

    def test_all_summed_at_zero_is_certified(self):
        # free coordinate carries the sum, bounded ones want to be negative
        p = qp.QpProblem(np.eye(3), [0.0, 5.0, 5.0], (1, 2), ((0, 1, 2), 2.0))
        sol = qp.solve(p)
        np.testing.assert_allclose(sol.beta, [2.0, 0.0, 0.0], atol=1e-12)


class TestErrors:
    def test_negative_target_with_nonneg(self):
        p = qp.QpProblem(np.eye(2), [0.0, 0.0], (0, 1), ((0, 1), -1.0))
        with pytest.raises(InfeasibleConstraint):
            qp.solve(p)

    def test_empty_sum_nonzero_target(self):
        with pytest.raises(InfeasibleConstraint):
            qp.solve(qp.QpProblem(np.eye(2), [0.0, 0.0], (), ((), 1.0)))

    def test_max_iterations_carries_iterate(self):
        p = qp.QpProblem(2 * np.eye(2), [-2.0, 2.0], nonneg_indices=(0, 1))
        with pytest.raises(MaxIterationsExceeded) as info:
            qp.solve(p, max_iter=0)
        assert info.value.solution is not None
        assert info.value.solution.converged is False
        assert info.value.problem is p

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            qp.QpProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])

    def test_shape_checks(self):
        with pytest.raises(DimensionMismatch):
            qp.QpProblem(np.eye(3), [0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            qp.QpProblem(np.eye(2), [0.0, 0.0], nonneg_indices=(2,))
        with pytest.raises(ValueError):
            qp.solve(qp.QpProblem([[1.0]], [0.0]), tol=0.0)


class TestOracle:
    @pytest.mark.parametrize("seed", range(20))
    def test_three_variable_nonneg(self, seed):
        rng = np.random.default_rng(seed)
        p = qp.QpProblem(random_psd(rng, 3), rng.normal(size=3) * 3, (0, 1, 2))
        sol = qp.solve(p)
        _, f_ref = projected_gradient(p.q, p.c, p.nonneg_indices)
        assert abs(sol.objective - f_ref) <= 1e-8
        assert sol.kkt_residual <= 1e-9

    @pytest.mark.parametrize("seed", range(20))
    def test_with_sum_constraint(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = random_problem(rng, int(rng.integers(2, 6)), with_sum=True)
        sol = qp.solve(p)
        idx, target = p.sum_constraint
        _, f_ref = projected_gradient(p.q, p.c, p.nonneg_indices, idx, target)
        assert abs(sol.objective - f_ref) <= 1e-8
        assert abs(sol.beta.sum() - target) <= 1e-9
        assert np.all(sol.beta[list(p.nonneg_indices)] >= -1e-9)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_global_optimality_spot_check(self, seed, with_sum):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, int(rng.integers(1, 6)), with_sum)
        sol = qp.solve(p)
        z = random_feasible(rng, p, 1000)
        fz = 0.5 * np.einsum("ki,ij,kj->k", z, p.q, z) + z @ p.c
        assert np.all(sol.objective <= fz + 1e-9 * (1 + np.abs(fz)))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        p = random_problem(rng, 5, with_sum=True)
        a, b = qp.solve(p), qp.solve(p)
        assert a.beta.tobytes() == b.beta.tobytes()
        assert a.iterations == b.iterations

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_scaling_invariance(self, seed, lam):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, 4, with_sum=bool(seed % 2))
        scaled = qp.QpProblem(lam * p.q, lam * p.c, p.nonneg_indices, p.sum_constraint)
        np.testing.assert_allclose(qp.solve(p).beta, qp.solve(scaled).beta, atol=1e-8)


class TestSingular:
    def test_duplicated_column_gets_ridge_and_optimum(self):
        # q = x x' has rank one: two identical forecasters
        x = np.array([1.0, 1.0])
        p = qp.QpProblem(2 * np.outer(x, x), [-2.0, -2.0], (0, 1), ((0, 1), 1.0))
        sol = qp.solve(p)
        assert sol.ridge > 0
        assert sol.kkt_residual <= 1e-9
        assert sol.objective == pytest.approx(-1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_rank_deficient_random(self, seed):
        rng = np.random.default_rng(seed)
        d = 4
        q = random_psd(rng, d, rank=2)
        c = q @ rng.normal(size=d)  # c in range(q) keeps the problem bounded
        p = qp.QpProblem(0.5 * (q + q.T), c, (0, 1, 2, 3))
        sol = qp.solve(p)
        _, f_ref = projected_gradient(p.q, p.c, p.nonneg_indices)
        assert sol.objective <= f_ref + 1e-8
        assert sol.kkt_residual <= 1e-9

    def test_json(self):
        p = qp.QpProblem(np.eye(2), [-1.0, 0.0], (1,), ((0, 1), 1.0))
        sol = qp.solve(p)
        assert p.to_json()["sum_constraint"] == {"indices": [0, 1], "target": 1.0}
        assert sol.to_json()["beta"] == sol.beta.tolist()
