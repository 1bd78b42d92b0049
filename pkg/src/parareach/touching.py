"""Optimal disturbances and trajectories that ride a paraboloid surface.

The disturbance maximizing the time derivative of a paraboloid's value
function is an affine function of the state (strict concavity comes from the
negative-definite w-block of the energy-rate matrix).  Trajectories driven by
it keep the value function constant, so from a seed-boundary state they stay
on the moving surface; their budget rate at t=0, as a function of the seed
scaling, is the quadratic that the family construction solves for.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rk import CubicHermite, integrate
from .errors import DimensionMismatch, NotOnBoundary, StepSizeUnderflow
from .model import AugmentedState, IqcSystem, Paraboloid, value_function
from .riccati import (IntegratorConfig, TimeVaryingParaboloid,
                      g_quadrature_matrix, g_rhs)

TOUCH_TOL_FACTOR = 100.0  # touch_tol = factor * rel_tol unless given


def optimal_disturbance(P: Paraboloid, x, u_t, sys: IqcSystem) -> np.ndarray:
    """w* = -Mw^-1 (B'(Ex - f) + Mxw'x + Muw'u): the unique maximizer of the
    value-function derivative at state x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    if x.shape[0] != sys.n or u_t.shape[0] != sys.p or P.dim != sys.n:
        raise DimensionMismatch(
            f"optimal_disturbance shapes: x {x.shape}, u {u_t.shape}, P dim {P.dim}")
    v = sys.B.T @ (P.E @ x - P.f) + sys.Mxw.T @ x + sys.Muw.T @ u_t
    return -(sys.Mw_inv @ v)


@dataclass(frozen=True)
class ParaboloidRate:
    """Time derivatives (dE, df, dg) of paraboloid parameters at an instant."""

    dE: np.ndarray
    df: np.ndarray
    dg: float


def paraboloid_rate(P: Paraboloid, sys: IqcSystem, u_t) -> ParaboloidRate:
    """Parameter derivatives at the instant where the input takes value u_t."""
    from .riccati import f_rhs, riccati_rhs

    dE = riccati_rhs(P.E, sys)
    df = f_rhs(P.E, P.f, sys, u_t)
    dg = g_rhs(P.f, u_t, g_quadrature_matrix(sys))
    return ParaboloidRate(dE=dE, df=df, dg=dg)


def value_derivative(P: Paraboloid, x, x_q, u_t, w_t, sys: IqcSystem,
                     rate: ParaboloidRate) -> float:
    """dh/dt along the flow for disturbance w_t, by the chain rule over
    (x, x_q, E, f, g).  The budget level x_q itself does not enter (h is
    affine in x_q with unit slope); the argument is kept for signature
    symmetry with the state.  The quadratic coefficient in w_t is Mw, so the
    value at ``optimal_disturbance`` is the maximum.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    w_t = np.asarray(w_t, dtype=float).reshape(-1)
    if x.shape[0] != sys.n or u_t.shape[0] != sys.p or w_t.shape[0] != sys.m:
        raise DimensionMismatch(
            f"value_derivative shapes: x {x.shape}, u {u_t.shape}, w {w_t.shape}")
    xdot = sys.A @ x + sys.B @ w_t + sys.Bu @ u_t
    dxq = sys.energy_rate(x, u_t, w_t)
    return float(x @ rate.dE @ x - 2.0 * rate.df @ x + rate.dg
                 + 2.0 * (P.E @ x - P.f) @ xdot + dxq)


def xq_rate_at_zero(P0: Paraboloid, gamma: float, X: AugmentedState,
                    sys: IqcSystem) -> float:
    """Budget rate at t=0 of the surface-riding trajectory of the scaled seed
    through X.  Quadratic in gamma with negative leading coefficient."""
    from .model import scale_paraboloid

    u0 = sys.u_at(0.0)
    w = optimal_disturbance(scale_paraboloid(P0, gamma), X.x, u0, sys)
    return sys.energy_rate(X.x, u0, w)


class AugmentedTrajectory:
    """Time-sampled (x, x_q, w) with the owning paraboloid's value function
    recorded along the way as a diagnostic."""

    def __init__(self, grid, x_samples, xq_samples, w_samples, h_samples,
                 dx_samples=None, dxq_samples=None):
        self.grid = np.asarray(grid, dtype=float)
        self.x_samples = np.asarray(x_samples, dtype=float)
        self.xq_samples = np.asarray(xq_samples, dtype=float)
        self.w_samples = np.asarray(w_samples, dtype=float)
        self.h_samples = np.asarray(h_samples, dtype=float)
        self._dense = None
        if dx_samples is not None:
            ys = np.concatenate([self.x_samples, self.xq_samples[:, None]], axis=1)
            dys = np.concatenate([np.asarray(dx_samples, dtype=float),
                                  np.asarray(dxq_samples, dtype=float)[:, None]], axis=1)
            self._dense = CubicHermite(self.grid, ys, dys)

    def state_at(self, t: float):
        """(x, x_q) from dense output (available when built by the integrator)."""
        if self._dense is None:
            raise DimensionMismatch("trajectory carries no dense output")
        y = self._dense(t)
        return y[:-1], float(y[-1])

    @property
    def endpoint(self) -> AugmentedState:
        return AugmentedState(self.x_samples[-1], self.xq_samples[-1])

    def to_csv(self) -> str:
        n = self.x_samples.shape[1]
        m = self.w_samples.shape[1]
        cols = (["t"] + [f"x_{i}" for i in range(n)] + ["x_q"]
                + [f"w_{i}" for i in range(m)] + ["h"])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for k in range(len(self.grid)):
            row = np.concatenate([[self.grid[k]], self.x_samples[k],
                                  [self.xq_samples[k]], self.w_samples[k],
                                  [self.h_samples[k]]])
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def _touching_rhs(tvp: TimeVaryingParaboloid, sys: IqcSystem):
    u = sys.u

    def rhs(t, y):
        E, f, _ = tvp.params_at(min(t, tvp.t_end))
        x = y[:-1]
        u_t = u(t)
        w = -(sys.Mw_inv @ (sys.B.T @ (E @ x - f) + sys.Mxw.T @ x + sys.Muw.T @ u_t))
        dx = sys.A @ x + sys.B @ w + sys.Bu @ u_t
        dxq = sys.energy_rate(x, u_t, w)
        return np.concatenate([dx, [dxq]])

    return rhs


def touching_trajectory(tvp: TimeVaryingParaboloid, X0: AugmentedState,
                        sys: IqcSystem, cfg: IntegratorConfig,
                        touch_tol: Optional[float] = None) -> AugmentedTrajectory:
    """Integrate the surface-riding trajectory of ``tvp`` from a seed-boundary
    state over the paraboloid's interval of definition.

    The optimal disturbance is re-evaluated from the dense-output parameters
    at every integrator stage.  The value function is monitored at accepted
    steps; a step pushing |h| beyond ``touch_tol`` is rejected and retried
    smaller, and the run aborts (rather than projecting back) if the drift
    persists.
    """
    if touch_tol is None:
        touch_tol = TOUCH_TOL_FACTOR * cfg.rel_tol
    P_seed = tvp(0.0)
    h0 = value_function(P_seed, X0)
    if abs(h0) > touch_tol:
        raise NotOnBoundary(
            f"initial state is off the seed surface: h={h0:.3e} (tol {touch_tol:.1e})")

    t_end = min(cfg.t_end, tvp.t_end)
    rhs = _touching_rhs(tvp, sys)

    def h_of(t, y):
        E, f, g = tvp.params_at(min(t, tvp.t_end))
        x = y[:-1]
        return float(x @ E @ x - 2.0 * f @ x + g + y[-1])

    def within_tol(t, y):
        return abs(h_of(t, y)) <= touch_tol

    nodes = tvp.grid[(tvp.grid > 0) & (tvp.grid < t_end)]
    y0 = np.concatenate([X0.x, [X0.x_q]])
    res = integrate(rhs, 0.0, y0, t_end, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                    max_step=cfg.max_step, node_times=nodes,
                    halt_fn=within_tol)
    if res.status == "halted":
        raise StepSizeUnderflow(
            f"value-function drift exceeded touch_tol={touch_tol:.1e} near t={res.t_halt}",
            t_last=res.ts[-1])

    K = len(res.ts)
    u = sys.u
    w_s = np.empty((K, sys.m))
    h_s = np.empty(K)
    for k, t in enumerate(res.ts):
        E, f, g = tvp.params_at(min(t, tvp.t_end))
        x = res.ys[k, :-1]
        w_s[k] = -(sys.Mw_inv @ (sys.B.T @ (E @ x - f) + sys.Mxw.T @ x
                                 + sys.Muw.T @ u(t)))
        h_s[k] = x @ E @ x - 2.0 * f @ x + g + res.ys[k, -1]
    return AugmentedTrajectory(res.ts, res.ys[:, :-1], res.ys[:, -1], w_s, h_s,
                               dx_samples=res.dys[:, :-1], dxq_samples=res.dys[:, -1])


def trace_back_to_seed(tvp: TimeVaryingParaboloid, sys: IqcSystem,
                       cfg: IntegratorConfig, t_at: float, x_at) -> AugmentedState:
    """Find the seed state whose surface-riding trajectory passes through
    ``x_at`` (on the surface of tvp) at time ``t_at``, by integrating the
    closed-loop dynamics backward.  The budget at t_at is pinned to the
    surface, so the returned state lies on the seed surface up to integration
    error."""
    if t_at <= 0.0:
        E, f, g = tvp.params_at(0.0)
        x = np.asarray(x_at, dtype=float).reshape(-1)
        return AugmentedState(x, -(x @ E @ x - 2.0 * f @ x + g))
    rhs = _touching_rhs(tvp, sys)
    E, f, g = tvp.params_at(t_at)
    x_at = np.asarray(x_at, dtype=float).reshape(-1)
    xq_at = -(x_at @ E @ x_at - 2.0 * f @ x_at + g)

    def back_rhs(s, z):
        return -rhs(t_at - s, z)

    z0 = np.concatenate([x_at, [xq_at]])
    res = integrate(back_rhs, 0.0, z0, t_at, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                    max_step=cfg.max_step)
    z_end = res.ys[-1]
    return AugmentedState(z_end[:-1], float(z_end[-1]))
