"""Shared fixtures and independent oracles."""

from __future__ import annotations

import numpy as np
import pytest

import parareach as pr
from parareach.presets import load_preset

ROOT_LO = 2.0 - np.sqrt(2.0)
ROOT_HI = 2.0 + np.sqrt(2.0)


def scalar_flow(t, e0):
    """Closed-form solution of de/dt = -e^2/2 + 2e - 1.

    Separable: with r(t) = r0 * exp(-sqrt(2) t), r0 = (e0-hi)/(e0-lo), the
    solution is (hi - lo*r)/(1 - r).  Blows up when r(t) = 1.
    """
    if np.isclose(e0, ROOT_LO):
        return ROOT_LO
    r0 = (e0 - ROOT_HI) / (e0 - ROOT_LO)
    r = r0 * np.exp(-np.sqrt(2.0) * np.asarray(t, dtype=float))
    return (ROOT_HI - ROOT_LO * r) / (1.0 - r)


def scalar_blowup_time(e0):
    """Finite escape time of the scalar flow; only defined for e0 below the
    lower equilibrium."""
    assert e0 < ROOT_LO
    r0 = (e0 - ROOT_HI) / (e0 - ROOT_LO)
    return float(np.log(r0) / np.sqrt(2.0))


@pytest.fixture(scope="session")
def ex1_system():
    return load_preset("ex1-stable")["system"]


@pytest.fixture(scope="session")
def ex1_stable_seed():
    return load_preset("ex1-stable")["seed"]


@pytest.fixture(scope="session")
def ex1_escape_seed():
    return load_preset("ex1-escape")["seed"]


@pytest.fixture(scope="session")
def sec5_system():
    return load_preset("sec5")["system"]


@pytest.fixture(scope="session")
def sec5_seed():
    return load_preset("sec5")["seed"]


@pytest.fixture(scope="session")
def ex1_cfg():
    return pr.IntegratorConfig(rel_tol=1e-9, abs_tol=1e-12, max_step=0.025,
                               t_end=10.0)


@pytest.fixture(scope="session")
def sec5_cfg():
    return pr.IntegratorConfig(rel_tol=1e-9, abs_tol=1e-12, max_step=0.004,
                               t_end=1.0)


@pytest.fixture(scope="session")
def ex1_stable_tvp(ex1_system, ex1_stable_seed, ex1_cfg):
    return pr.propagate(ex1_stable_seed, ex1_system, ex1_cfg)


@pytest.fixture(scope="session")
def sec5_tvp(sec5_system, sec5_seed, sec5_cfg):
    return pr.propagate(sec5_seed, sec5_system, sec5_cfg)


def boundary_state(P0, direction, level):
    """State on the seed surface: x-part value -level along a unit direction,
    budget = level."""
    lam, V = np.linalg.eigh(P0.E)
    assert np.all(lam > 0)
    root = V @ np.diag(1.0 / np.sqrt(lam)) @ V.T
    c = V @ ((V.T @ P0.f) / lam)
    q_min = P0.g - float(c @ (P0.E @ c))
    rho = -q_min - level
    assert rho >= 0
    x = c + np.sqrt(rho) * (root @ np.asarray(direction, dtype=float))
    return pr.AugmentedState(x, level)


def random_boundary_states(P0, n, rng):
    dim = P0.dim
    out = []
    lam, _ = np.linalg.eigh(P0.E)
    c_q = -P0.g  # budget cap for centered seeds
    for _ in range(n):
        d = rng.standard_normal(dim)
        d /= np.linalg.norm(d)
        level = rng.uniform(0.0, c_q)
        out.append(boundary_state(P0, d, level))
    return out


def random_iqc_system(rng, n=None, m=None, p=None):
    """Random well-posed system (w-block strictly negative definite)."""
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 4))
    p = p or int(rng.integers(1, 4))
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    Bu = rng.standard_normal((n, p))
    k = n + p + m
    M = rng.standard_normal((k, k))
    M = 0.5 * (M + M.T)
    W = rng.standard_normal((m, m))
    M[n + p:, n + p:] = -(W @ W.T + np.eye(m))
    return pr.make_system(A, B, Bu, M)
