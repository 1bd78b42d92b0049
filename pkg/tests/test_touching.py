import numpy as np
import pytest

import parareach as pr
from parareach.errors import NotOnBoundary

from conftest import boundary_state, random_boundary_states, random_iqc_system


class TestOptimalDisturbance:
    def test_worked_scalar(self, ex1_system):
        P = pr.Paraboloid([[1.0]], [0.0], 0.0)
        w = pr.optimal_disturbance(P, [2.0], [0.0], ex1_system)
        assert w[0] == pytest.approx(1.0)

    def test_vanishes_at_origin(self, ex1_system):
        P = pr.Paraboloid([[1.0]], [0.0], 0.0)
        assert pr.optimal_disturbance(P, [0.0], [0.0], ex1_system)[0] == 0.0

    def test_worked_planar(self, sec5_system):
        P = pr.Paraboloid(np.eye(2), np.zeros(2), 0.0)
        w = pr.optimal_disturbance(P, [1.0, 1.0], [0.0], sec5_system)
        np.testing.assert_allclose(w, [0.5, 0.5])


class TestValueDerivative:
    """dh/dt assembled from the parameter rates; its maximum over the
    disturbance must vanish, which also pins the sign of the u-block of the
    offset-rate matrix."""

    def _check(self, sys_, rng):
        n, m, p = sys_.n, sys_.m, sys_.p
        E = rng.standard_normal((n, n))
        P = pr.Paraboloid(0.5 * (E + E.T), rng.standard_normal(n),
                          rng.standard_normal())
        x = rng.standard_normal(n)
        u_t = rng.standard_normal(p)
        rate = pr.paraboloid_rate(P, sys_, u_t)
        w_star = pr.optimal_disturbance(P, x, u_t, sys_)
        v0 = pr.value_derivative(P, x, rng.standard_normal(), u_t, w_star,
                                 sys_, rate)
        delta = rng.standard_normal(m)
        v1 = pr.value_derivative(P, x, 0.0, u_t, w_star + delta, sys_, rate)
        return v0, v1 - v0 - float(delta @ sys_.Mw @ delta), v1 - v0

    def test_zero_at_maximizer_and_quadratic_drop(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            sys_ = random_iqc_system(rng)
            v0, quad_residual, drop = self._check(sys_, rng)
            assert abs(v0) <= 1e-9
            assert abs(quad_residual) <= 1e-9
            assert drop <= 1e-12  # concavity

    def test_zero_input_systems(self, ex1_system, sec5_system):
        rng = np.random.default_rng(8)
        for sys_ in (ex1_system, sec5_system):
            for _ in range(50):
                v0, quad_residual, _ = self._check(sys_, rng)
                assert abs(v0) <= 1e-10
                assert abs(quad_residual) <= 1e-10


class TestTouchingTrajectory:
    def test_scalar_surface_contact(self, ex1_system, ex1_stable_tvp, ex1_cfg,
                                    ex1_stable_seed):
        X0 = pr.AugmentedState([0.0], -ex1_stable_seed.g)
        traj = pr.touching_trajectory(ex1_stable_tvp, X0, ex1_system, ex1_cfg)
        assert np.max(np.abs(traj.h_samples)) <= 1e-6
        assert traj.grid[-1] == pytest.approx(10.0)

    def test_interior_start_rejected(self, ex1_system, ex1_stable_tvp, ex1_cfg,
                                     ex1_stable_seed):
        X0 = pr.AugmentedState([0.0], -ex1_stable_seed.g - 0.01)
        with pytest.raises(NotOnBoundary):
            pr.touching_trajectory(ex1_stable_tvp, X0, ex1_system, ex1_cfg)

    def test_planar_surface_contact(self, sec5_system, sec5_tvp, sec5_cfg,
                                    sec5_seed):
        rng = np.random.default_rng(1)
        for X0 in random_boundary_states(sec5_seed, 5, rng):
            traj = pr.touching_trajectory(sec5_tvp, X0, sec5_system, sec5_cfg)
            assert np.max(np.abs(traj.h_samples)) <= 1e-6

    def test_maximality_along_trajectory(self, ex1_system, ex1_stable_tvp,
                                         ex1_cfg, ex1_stable_seed):
        rng = np.random.default_rng(4)
        X0 = boundary_state(ex1_stable_seed, [1.0], 0.02)
        traj = pr.touching_trajectory(ex1_stable_tvp, X0, ex1_system, ex1_cfg)
        for _ in range(100):
            t = rng.uniform(0.0, 10.0)
            x, xq = traj.state_at(t)
            P = ex1_stable_tvp(t)
            u_t = ex1_system.u_at(t)
            rate = pr.paraboloid_rate(P, ex1_system, u_t)
            w_star = pr.optimal_disturbance(P, x, u_t, ex1_system)
            v_star = pr.value_derivative(P, x, xq, u_t, w_star, ex1_system, rate)
            w = rng.standard_normal(1) * 2.0
            v = pr.value_derivative(P, x, xq, u_t, w, ex1_system, rate)
            assert v <= v_star + 1e-9

    def test_overapproximation_for_arbitrary_disturbances(
            self, ex1_system, ex1_stable_tvp, ex1_stable_seed):
        # any admissible-dynamics trajectory started inside stays inside
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.uniform(-0.2, 0.2)
            xq = rng.uniform(0.0, max(0.0, -ex1_stable_seed.quad([x])))
            if ex1_stable_seed.quad([x]) + xq > 0:
                continue
            levels = rng.normal(0.0, 0.4, size=8)
            h_worst = -np.inf
            state = np.array([x, xq])
            n_steps = 400
            dt = 10.0 / n_steps
            for k in range(n_steps):
                t = k * dt
                w = np.array([levels[min(int(t // 1.25), 7)]])

                def rhs(tt, y):
                    dx = ex1_system.A @ y[:1] + ex1_system.B @ w
                    return np.concatenate([dx, [ex1_system.energy_rate(y[:1], [0.0], w)]])

                k1 = rhs(t, state)
                k2 = rhs(t + dt / 2, state + dt / 2 * k1)
                k3 = rhs(t + dt / 2, state + dt / 2 * k2)
                k4 = rhs(t + dt, state + dt * k3)
                state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                E, f, g = ex1_stable_tvp.params_at((k + 1) * dt)
                h = state[0] * E[0, 0] * state[0] - 2 * f[0] * state[0] + g + state[1]
                h_worst = max(h_worst, h)
            assert h_worst <= 1e-6

    def test_csv_export(self, ex1_system, ex1_stable_tvp, ex1_cfg,
                        ex1_stable_seed):
        X0 = pr.AugmentedState([0.0], -ex1_stable_seed.g)
        traj = pr.touching_trajectory(ex1_stable_tvp, X0, ex1_system, ex1_cfg)
        lines = traj.to_csv().strip().splitlines()
        assert lines[0] == "t,x_0,x_q,w_0,h"
        assert len(lines) == len(traj.grid) + 1


class TestBacktrace:
    def test_round_trip(self, ex1_system, ex1_stable_tvp, ex1_cfg,
                        ex1_stable_seed):
        X0 = boundary_state(ex1_stable_seed, [-1.0], 0.03)
        traj = pr.touching_trajectory(ex1_stable_tvp, X0, ex1_system, ex1_cfg)
        t_mid = 3.0
        x_mid, _ = traj.state_at(t_mid)
        X0_back = pr.trace_back_to_seed(ex1_stable_tvp, ex1_system, ex1_cfg,
                                        t_mid, x_mid)
        np.testing.assert_allclose(X0_back.x, X0.x, atol=1e-7)
        assert X0_back.x_q == pytest.approx(X0.x_q, abs=1e-7)


class TestBudgetRate:
    def test_zero_state_zero_rate(self, ex1_system):
        P0 = pr.Paraboloid([[1.0]], [0.0], -0.06)
        X = pr.AugmentedState([0.0], 0.0)
        for g in (1.0, 2.0, 3.3):
            assert pr.xq_rate_at_zero(P0, g, X, ex1_system) == 0.0

    def test_worked_scalar_quadratic(self, ex1_system):
        P0 = pr.Paraboloid([[1.0]], [0.0], -0.06)
        X = pr.AugmentedState([1.0], 0.0)
        for g in (0.5, 1.0, 2.0, 3.0):
            assert pr.xq_rate_at_zero(P0, g, X, ex1_system) == pytest.approx(
                1.0 - g * g / 2.0)

    def test_quadratic_exactness(self, sec5_system, sec5_seed):
        rng = np.random.default_rng(12)
        for _ in range(10):
            X = pr.AugmentedState(rng.uniform(-50, 50, size=2), 0.0)
            r = [pr.xq_rate_at_zero(sec5_seed, g, X, sec5_system)
                 for g in (1.0, 2.0, 3.0)]
            a = 0.5 * (r[2] - 2 * r[1] + r[0])
            b = r[1] - r[0] - 3 * a
            c = r[0] - a - b
            g4 = 4.0
            pred = a * g4 * g4 + b * g4 + c
            actual = pr.xq_rate_at_zero(sec5_seed, g4, X, sec5_system)
            assert actual == pytest.approx(pred, rel=1e-10, abs=1e-12)

    def test_leading_coefficient_negative(self, sec5_system, sec5_seed):
        rng = np.random.default_rng(13)
        for _ in range(20):
            X = pr.AugmentedState(rng.uniform(-80, 80, size=2), 0.0)
            if np.linalg.norm(sec5_seed.E @ X.x) < 1e-12:
                continue
            r = [pr.xq_rate_at_zero(sec5_seed, g, X, sec5_system)
                 for g in (1.0, 2.0, 3.0)]
            a = 0.5 * (r[2] - 2 * r[1] + r[0])
            assert a < 0.0
