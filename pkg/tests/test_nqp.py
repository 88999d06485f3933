import itertools

import numpy as np
import pytest

from nmfkit.exceptions import DegenerateProblemError, NumericalFailureError
from nmfkit.nqp import (
    NqpProblem,
    StopState,
    exact_line_search_step,
    greedy_cd_pass,
    passive_mask,
    rescale,
    solve,
)

# 2x2 ill-scaled toy problem with interior optimum [79.0791, 9.2092]
TOY_H = np.array([[1.0, 0.1], [0.1, 10.0]])
TOY_H_VEC = np.array([-80.0, -100.0])
TOY_X0 = np.array([200.0, 20.0])
TOY_X_STAR = np.linalg.solve(TOY_H, -TOY_H_VEC)


def objective(H, h, x):
    return 0.5 * x @ H @ x + h @ x


def active_set_oracle(H, h):
    """Enumerate all 2^r passive sets, solve each equality-constrained
    system, and return the feasible minimum. Independent of the solver."""
    r = len(h)
    best_f, best_x = np.inf, np.zeros(r)
    for mask in itertools.product([False, True], repeat=r):
        free = np.flatnonzero(mask)
        x = np.zeros(r)
        if len(free):
            sub = H[np.ix_(free, free)]
            try:
                xf = np.linalg.solve(sub, -h[free])
            except np.linalg.LinAlgError:
                xf = np.linalg.lstsq(sub, -h[free], rcond=None)[0]
            if np.any(xf < -1e-12):
                continue
            x[free] = np.maximum(xf, 0.0)
        f = objective(H, h, x)
        if f < best_f:
            best_f, best_x = f, x
    return best_f, best_x


def random_psd_problem(rng, r, interior=False):
    a = rng.standard_normal((2 * r + 2, r))
    H = a.T @ a
    if interior:
        x_star = rng.uniform(0.5, 2.0, size=r)
        h = -H @ x_star
    else:
        h = rng.standard_normal(r) * rng.uniform(0.5, 3.0)
    x0 = rng.uniform(0.0, 2.0, size=r)
    return NqpProblem(H, h, x0)


class TestRescale:
    def test_toy_problem_q(self):
        p = NqpProblem(TOY_H, TOY_H_VEC)
        r = rescale(p)
        c = 0.1 / np.sqrt(10.0)
        np.testing.assert_allclose(r.Q, [[1.0, c], [c, 1.0]], rtol=1e-15)

    def test_toy_problem_linear_term(self):
        # q = h / sqrt(diag(H)) applied entrywise
        p = NqpProblem(TOY_H, TOY_H_VEC)
        r = rescale(p)
        np.testing.assert_allclose(r.q, [-80.0, -100.0 / np.sqrt(10.0)], rtol=1e-15)
        np.testing.assert_allclose(r.scale, [1.0, np.sqrt(10.0)], rtol=1e-15)

    def test_identity_is_fixed_point(self):
        p = NqpProblem(np.eye(3), np.array([1.0, -2.0, 3.0]))
        r = rescale(p)
        np.testing.assert_array_equal(r.Q, np.eye(3))
        np.testing.assert_array_equal(r.q, p.h)
        np.testing.assert_array_equal(r.scale, np.ones(3))

    def test_offdiagonal_cosine_bound(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p = random_psd_problem(rng, 5)
            r = rescale(p)
            assert np.max(np.abs(r.Q)) <= 1.0 + 1e-12

    def test_all_degenerate_raises(self):
        with pytest.raises(DegenerateProblemError):
            rescale(NqpProblem(np.zeros((2, 2)), np.array([1.0, 1.0])))

    def test_frozen_dimension_masked(self):
        H = np.diag([4.0, 0.0])
        p = NqpProblem(H, np.array([-1.0, 2.0]))
        r = rescale(p)
        np.testing.assert_array_equal(r.active_dims, [True, False])
        assert r.Q[1, 1] == 0.0 and r.q[1] == 0.0


class TestPassiveMask:
    def test_positive_or_negative_gradient(self):
        np.testing.assert_array_equal(
            passive_mask(np.array([0.0, 1.0]), np.array([-1.0, 2.0])), [True, True]
        )

    def test_clamped_with_positive_gradient_excluded(self):
        np.testing.assert_array_equal(
            passive_mask(np.array([0.0, 2.0]), np.array([3.0, -1.0])), [False, True]
        )

    def test_kkt_point_is_all_inactive(self):
        np.testing.assert_array_equal(
            passive_mask(np.zeros(3), np.array([0.0, 1.0, 2.0])), [False] * 3
        )


class TestExactLineSearchStep:
    def test_identity_reaches_optimum_in_one_step(self):
        rng = np.random.default_rng(12)
        q = rng.standard_normal(4)
        x = rng.uniform(1.0, 2.0, size=4)
        grad = x + q
        x1, g1 = exact_line_search_step(np.eye(4), q, x, grad)
        np.testing.assert_allclose(x1, np.maximum(-q, 0.0), atol=1e-12)
        np.testing.assert_allclose(g1, np.eye(4) @ x1 + q, atol=1e-12)

    def test_rescaled_toy_step_lands_near_optimum(self):
        # one step on the unit-diagonal form covers ~99% of the distance
        p = NqpProblem(TOY_H, TOY_H_VEC, TOY_X0)
        r = rescale(p)
        y0 = TOY_X0 * r.scale
        g0 = r.Q @ y0 + r.q
        y1, _ = exact_line_search_step(r.Q, r.q, y0, g0)
        x1 = y1 / r.scale
        rel = np.abs(x1 - TOY_X_STAR) / TOY_X_STAR
        assert np.all(rel < 0.15)
        start_rel = np.abs(TOY_X0 - TOY_X_STAR) / TOY_X_STAR
        assert np.all(rel < 0.15 * start_rel)

    def test_zero_passive_gradient_is_noop(self):
        x = np.zeros(2)
        grad = np.array([1.0, 2.0])
        x1, g1 = exact_line_search_step(np.eye(2), grad, x, grad)
        np.testing.assert_array_equal(x1, x)
        np.testing.assert_array_equal(g1, grad)

    def test_never_increases_objective(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            p = random_psd_problem(rng, 4)
            r = rescale(p)
            idx = np.flatnonzero(r.active_dims)
            Q = r.Q[np.ix_(idx, idx)]
            q = r.q[idx]
            y = p.x0[idx] * r.scale[idx]
            g = Q @ y + q
            f0 = 0.5 * y @ Q @ y + q @ y
            y1, g1 = exact_line_search_step(Q, q, y, g)
            f1 = 0.5 * y1 @ Q @ y1 + q @ y1
            assert f1 <= f0 + 1e-12 * abs(f0)
            assert np.all(y1 >= 0)
            np.testing.assert_allclose(g1, Q @ y1 + q, atol=1e-9)


class TestGreedyCdPass:
    def test_scalar_closed_form(self):
        x, grad = greedy_cd_pass(
            np.array([[1.0]]), np.array([-2.0]), np.array([0.0]), np.array([-2.0])
        )
        np.testing.assert_array_equal(x, [2.0])
        np.testing.assert_array_equal(grad, [0.0])

    def test_interior_optimum_early_exit(self):
        q = np.array([-1.0, -2.0])
        x = -q.copy()  # optimum of the identity problem
        grad = np.zeros(2)
        x1, g1 = greedy_cd_pass(np.eye(2), q, x, grad)
        np.testing.assert_array_equal(x1, x)
        np.testing.assert_array_equal(g1, grad)

    def test_pass_never_increases_objective(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            p = random_psd_problem(rng, 4)
            r = rescale(p)
            idx = np.flatnonzero(r.active_dims)
            Q = np.ascontiguousarray(r.Q[np.ix_(idx, idx)])
            q = r.q[idx]
            y = p.x0[idx] * r.scale[idx]
            g = Q @ y + q

            def f(v):
                return 0.5 * v @ Q @ v + q @ v

            # replay single updates and check each one against a direct
            # objective evaluation
            before = f(y)
            for _ in range(len(idx)):
                y1, g1 = greedy_cd_pass(Q, q, y, g, sweeps=1)
                after = f(y1)
                assert after <= before + 1e-12 * abs(before)
                y, g, before = y1, g1, after
                assert np.all(y >= 0)


class TestSolve:
    def test_toy_problem_reaches_interior_optimum(self):
        p = NqpProblem(TOY_H, TOY_H_VEC, TOY_X0)
        assert np.all(TOY_X_STAR > 0)
        sol = solve(p, StopState(epsilon=1e-12))
        np.testing.assert_allclose(sol.x, TOY_X_STAR, rtol=1e-6)
        assert sol.inner_iterations <= 2

    def test_nonnegative_linear_term_short_circuits(self):
        p = NqpProblem(np.eye(3), np.array([0.0, 1.0, 2.0]), np.array([5.0, 0.0, 1.0]))
        sol = solve(p)
        np.testing.assert_array_equal(sol.x, np.zeros(3))
        assert sol.inner_iterations == 0
        np.testing.assert_array_equal(sol.grad, p.h)

    @pytest.mark.parametrize("r", [2, 3, 4, 5, 6])
    def test_matches_enumeration_oracle(self, r):
        rng = np.random.default_rng(100 + r)
        for _ in range(20):
            p = random_psd_problem(rng, r)
            want_f, _ = active_set_oracle(p.H, p.h)
            sol = solve(p, StopState(epsilon=1e-14), max_inner=2000)
            got_f = objective(p.H, p.h, sol.x)
            assert got_f <= want_f + 1e-8
            assert abs(got_f - want_f) <= 1e-8

    def test_objective_history_monotone(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            p = random_psd_problem(rng, 5)
            sol = solve(p, StopState(epsilon=1e-12))
            f = sol.objective_history
            assert np.all(np.diff(f) <= 1e-12 * np.maximum(np.abs(f[:-1]), 1.0))
            assert np.all(sol.x >= 0)

    def test_solution_no_worse_than_warm_start(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            p = random_psd_problem(rng, 4)
            sol = solve(p, StopState(epsilon=0.5))
            assert objective(p.H, p.h, sol.x) <= objective(p.H, p.h, p.x0) + 1e-12

    def test_incremental_gradient_consistency(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            p = random_psd_problem(rng, 6)
            solve(p, StopState(epsilon=1e-12), check_gradients=True)

    def test_complementarity_in_exact_mode(self):
        # epsilon = 0 runs the inner loop to stagnation; the KKT slack
        # min(x, [grad]+) must then vanish to tolerance
        rng = np.random.default_rng(18)
        for _ in range(10):
            p = random_psd_problem(rng, 5)
            sol = solve(p, StopState(epsilon=0.0), max_inner=300)
            slack = np.minimum(sol.x, np.maximum(sol.grad, 0.0))
            assert np.max(np.abs(slack)) <= 1e-6

    def test_scale_invariance(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            p = random_psd_problem(rng, 4, interior=True)
            d = rng.uniform(0.1, 10.0, size=4)
            scaled = NqpProblem(np.diag(d) @ p.H @ np.diag(d), d * p.h, p.x0 / d)
            a = solve(p, StopState(epsilon=1e-12))
            b = solve(scaled, StopState(epsilon=1e-12))
            np.testing.assert_allclose(b.x, a.x / d, rtol=1e-6)

    def test_fast_break_exits_after_one_iteration(self):
        p = NqpProblem(TOY_H, TOY_H_VEC, TOY_X0)
        stop = StopState(epsilon=1e-14, max_stop=1e30)
        sol = solve(p, stop)
        assert sol.inner_iterations == 1

    def test_max_stop_is_monotone_across_solves(self):
        rng = np.random.default_rng(20)
        stop = StopState(epsilon=0.1)
        seen = 0.0
        for _ in range(10):
            p = random_psd_problem(rng, 4)
            solve(p, stop)
            assert stop.max_stop >= seen
            seen = stop.max_stop

    def test_unbounded_frozen_dimension_raises(self):
        H = np.diag([1.0, 0.0])
        p = NqpProblem(H, np.array([-1.0, -1.0]))
        with pytest.raises(NumericalFailureError):
            solve(p)

    def test_linear_rate_bound_small(self):
        # combined step contraction never loses to (1 - 1/||Q||_2) per
        # iteration on well-posed interior problems
        rng = np.random.default_rng(21)
        for _ in range(10):
            r = 5
            a = rng.standard_normal((6 * r, r))
            H = a.T @ a
            x_star = rng.uniform(0.5, 2.0, size=r)
            p = NqpProblem(H, -H @ x_star, rng.uniform(0.0, 3.0, size=r))
            sol = solve(p, StopState(epsilon=1e-12))
            f_star = objective(p.H, p.h, x_star)
            sQ = rescale(p).Q
            rate = 1.0 - 1.0 / np.linalg.norm(sQ, 2)
            gaps = sol.objective_history - f_star
            for k in range(1, len(gaps)):
                assert gaps[k] <= rate**k * gaps[0] * (1 + 1e-6)
            fro = np.linalg.norm(sQ, "fro")
            assert np.sqrt(r) <= fro <= r


class TestProblemValidation:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            NqpProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_negative_diagonal(self):
        with pytest.raises(ValueError):
            NqpProblem(np.diag([1.0, -1.0]), np.zeros(2))

    def test_rejects_negative_warm_start(self):
        with pytest.raises(ValueError):
            NqpProblem(np.eye(2), np.zeros(2), np.array([1.0, -0.1]))

    def test_stop_state_epsilon_range(self):
        with pytest.raises(ValueError):
            StopState(epsilon=1.5)
