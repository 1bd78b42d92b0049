"""End-to-end checks with a nonzero input signal.

The input path drives the linear coefficient and the offset quadrature, so
these tests pin the full (E, f, g) coupling: surface contact of optimal
rides and containment of arbitrary-disturbance trajectories both fail by
O(u^2 t) if any sign in the offset-rate matrix is off.
"""

import numpy as np
import pytest

import parareach as pr


@pytest.fixture(scope="module")
def driven_system():
    u = pr.SampledSignal(np.linspace(0.0, 5.0, 11),
                         0.7 * np.sin(np.linspace(0.0, 5.0, 11))[:, None])
    A = [[-0.8, 0.3], [-0.2, -1.1]]
    B = [[1.0, 0.0], [0.3, 0.8]]
    Bu = [[0.5], [-0.4]]
    M = np.zeros((5, 5))
    M[:2, :2] = [[1.2, 0.1], [0.1, 0.9]]
    M[:2, 2] = [0.2, -0.1]
    M[2, :2] = [0.2, -0.1]
    Mxw = np.array([[0.1, 0.0], [0.0, -0.2]])
    M[:2, 3:] = Mxw
    M[3:, :2] = Mxw.T
    M[2, 2] = 0.8
    M[2, 3:] = [0.1, -0.3]
    M[3:, 2] = [0.1, -0.3]
    M[3:, 3:] = [[-2.0, 0.3], [0.3, -1.5]]
    return pr.make_system(A, B, Bu, M, u=u)


@pytest.fixture(scope="module")
def driven_seed():
    return pr.Paraboloid(np.diag([1.0, 1.5]), [0.1, -0.2], -0.5)


@pytest.fixture(scope="module")
def driven_cfg():
    return pr.IntegratorConfig(rel_tol=1e-9, abs_tol=1e-12, max_step=0.01,
                               t_end=3.0)


@pytest.fixture(scope="module")
def driven_tvp(driven_system, driven_seed, driven_cfg):
    return pr.propagate(driven_seed, driven_system, driven_cfg)


def test_input_drives_linear_and_offset_parts(driven_tvp):
    assert driven_tvp.escape_time is None
    assert np.ptp(driven_tvp.f_samples, axis=0).min() > 1.0
    assert np.ptp(driven_tvp.g_samples) > 0.1


def test_touching_contact_with_input(driven_system, driven_seed, driven_cfg,
                                     driven_tvp):
    lam, V = np.linalg.eigh(driven_seed.E)
    root = V @ np.diag(1.0 / np.sqrt(lam)) @ V.T
    c = V @ ((V.T @ driven_seed.f) / lam)
    q_min = driven_seed.g - float(c @ driven_seed.E @ c)
    rng = np.random.default_rng(6)
    for _ in range(5):
        d = rng.standard_normal(2)
        d /= np.linalg.norm(d)
        level = rng.uniform(0.0, -q_min)
        x0 = c + np.sqrt(-q_min - level) * (root @ d)
        traj = pr.touching_trajectory(driven_tvp, pr.AugmentedState(x0, level),
                                      driven_system, driven_cfg)
        assert np.max(np.abs(traj.h_samples)) <= 1e-8


def test_containment_for_arbitrary_disturbances(driven_system, driven_seed,
                                                driven_tvp):
    rng = np.random.default_rng(0)
    worst = -np.inf
    for _ in range(15):
        x = rng.uniform(-0.5, 0.5, size=2)
        while driven_seed.quad(x) > 0:
            x = rng.uniform(-0.5, 0.5, size=2)
        xq = rng.uniform(0.0, -driven_seed.quad(x))
        state = np.concatenate([x, [xq]])
        levels = rng.normal(0.0, 0.6, size=(6, 2))
        n_steps = 600
        dt = 3.0 / n_steps
        for k in range(n_steps):
            t = k * dt
            w = levels[min(int(t // 0.5), 5)]

            def rhs(tt, y):
                ut = driven_system.u(tt)
                dx = (driven_system.A @ y[:2] + driven_system.B @ w
                      + driven_system.Bu @ ut)
                return np.concatenate(
                    [dx, [driven_system.energy_rate(y[:2], ut, w)]])

            k1 = rhs(t, state)
            k2 = rhs(t + dt / 2, state + dt / 2 * k1)
            k3 = rhs(t + dt / 2, state + dt / 2 * k2)
            k4 = rhs(t + dt, state + dt * k3)
            state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            E, f, g = driven_tvp.params_at((k + 1) * dt)
            h = state[:2] @ E @ state[:2] - 2 * f @ state[:2] + g + state[2]
            worst = max(worst, h)
    assert worst <= 1e-6


def test_oracle_bookkeeping_with_input(driven_system, driven_seed):
    from scipy.integrate import simpson

    times = np.linspace(0.0, 2.0, 321)
    cfg = pr.OracleConfig(n_trajectories=10, segments=1, w_scale=0.4,
                          seed=3, t_end=2.0, boundary_fraction=0.0)
    trajs = pr.sample_admissible(driven_system, driven_seed, cfg,
                                 sample_times=times)
    assert trajs
    for tr in trajs[:5]:
        rates = np.array([
            driven_system.energy_rate(tr.x_samples[k],
                                      driven_system.u_at(tr.grid[k]),
                                      tr.w_samples[k])
            for k in range(len(tr.grid))])
        recomputed = tr.xq_samples[0] + np.array(
            [0.0] + [simpson(rates[:k + 1], x=tr.grid[:k + 1])
                     for k in range(1, len(tr.grid))])
        np.testing.assert_allclose(recomputed, tr.xq_samples, atol=1e-8)
