"""Time propagation of paraboloid parameters.

The quadratic coefficient E follows a matrix Riccati differential equation,
the linear coefficient f a time-varying linear ODE driven by the input, and
the offset g the integral of a quadratic form in (f, u).  All three are
integrated as one coupled state so they share the error controller.  E is
carried in packed symmetric storage, which preserves symmetry exactly.

Riccati solutions can blow up in finite time; propagation then stops with the
blow-up time bracketed by step halving, and the stored grid ends strictly
before it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rk import CubicHermite, IntegrationResult, integrate
from .errors import DimensionMismatch, OutOfDomain, SingularMw
from .model import IqcSystem, Paraboloid

ESCAPE_BRACKET_RTOL = 1e-6  # relative width of the blow-up time bracket


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and horizon for parameter/trajectory integration."""

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: float = 0.025
    escape_norm: float = 1e7
    t_end: float = 1.0

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "escape_norm", "t_end"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise DimensionMismatch(f"IntegratorConfig.{name} must be positive, got {v}")
        if self.rel_tol < 1e-13 or self.abs_tol < 1e-13:
            raise DimensionMismatch("tolerances below 1e-13 are not resolvable in float64")


def _mw_solve(sys: IqcSystem, rhs):
    if sys.m == 0:
        return np.zeros_like(rhs)
    if sys.Mw_inv is None or not np.all(np.isfinite(sys.Mw_inv)):
        raise SingularMw("w-block of M is not invertible")
    return sys.Mw_inv @ rhs


def riccati_rhs(E: np.ndarray, sys: IqcSystem) -> np.ndarray:
    """dE/dt = -EA - A'E - Mx + (B'E + Mxw')' Mw^-1 (B'E + Mxw'), symmetrized."""
    E = np.asarray(E, dtype=float)
    if E.shape != (sys.n, sys.n):
        raise DimensionMismatch(f"E must be {sys.n}x{sys.n}, got {E.shape}")
    S = sys.B.T @ E + sys.Mxw.T
    dE = -E @ sys.A - sys.A.T @ E - sys.Mx + S.T @ _mw_solve(sys, S)
    return 0.5 * (dE + dE.T)


def f_rhs(E: np.ndarray, f: np.ndarray, sys: IqcSystem, u_t) -> np.ndarray:
    """df/dt = -A'f + (Mxu + E Bu) u + (E B + Mxw) Mw^-1 (B'f - Muw' u)."""
    E = np.asarray(E, dtype=float)
    f = np.asarray(f, dtype=float).reshape(-1)
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    if E.shape != (sys.n, sys.n) or f.shape[0] != sys.n or u_t.shape[0] != sys.p:
        raise DimensionMismatch(
            f"f_rhs shapes: E {E.shape}, f {f.shape}, u {u_t.shape} for n={sys.n}, p={sys.p}")
    r = sys.B.T @ f - sys.Muw.T @ u_t
    return (-sys.A.T @ f + (sys.Mxu + E @ sys.Bu) @ u_t
            + (E @ sys.B + sys.Mxw) @ _mw_solve(sys, r))


def g_quadrature_matrix(sys: IqcSystem) -> np.ndarray:
    """Constant matrix G with dg/dt = [f; u]' G [f; u].

    G = [[B Mw^-1 B',            Bu - B Mw^-1 Muw'],
         [(Bu - B Mw^-1 Muw')',  Muw Mw^-1 Muw' - Mu]].

    The sign of the u-block is fixed by requiring the maximum over w of the
    value-function time derivative to vanish identically (the property the
    whole overapproximation rests on); see tests for the numerical check.
    """
    BMw = _mw_solve(sys, sys.B.T).T if sys.m else np.zeros((sys.n, 0))
    # BMw = B Mw^-1  (n x m)
    G11 = BMw @ sys.B.T
    G12 = sys.Bu - BMw @ sys.Muw.T
    G22 = sys.Muw @ _mw_solve(sys, sys.Muw.T) - sys.Mu
    G = np.block([[G11, G12], [G12.T, G22]])
    return 0.5 * (G + G.T)


def g_rhs(f: np.ndarray, u_t, G: np.ndarray) -> float:
    z = np.concatenate([np.asarray(f, dtype=float).reshape(-1),
                        np.asarray(u_t, dtype=float).reshape(-1)])
    return float(z @ G @ z)


# -- packed symmetric storage ------------------------------------------------

def _sym_pack(E, iu):
    return E[iu]


def _sym_unpack(v, n, iu):
    E = np.zeros((n, n))
    E[iu] = v
    E.T[iu] = v
    return E


class TimeVaryingParaboloid:
    """Sampled solution (E(t), f(t), g(t)) with cubic-Hermite dense output.

    grid[0] = 0; if ``escape_time`` is set, the grid ends strictly before it
    and queries past the grid raise :class:`OutOfDomain`.  ``gamma`` records
    the seed scaling this propagation was started from.
    """

    def __init__(self, grid, E_samples, f_samples, g_samples,
                 dE_samples, df_samples, dg_samples,
                 escape_time: Optional[float] = None, gamma: float = 1.0):
        self.grid = np.asarray(grid, dtype=float)
        self.E_samples = np.asarray(E_samples, dtype=float)
        self.f_samples = np.asarray(f_samples, dtype=float)
        self.g_samples = np.asarray(g_samples, dtype=float)
        self.dE_samples = np.asarray(dE_samples, dtype=float)
        self.df_samples = np.asarray(df_samples, dtype=float)
        self.dg_samples = np.asarray(dg_samples, dtype=float)
        self.escape_time = escape_time
        self.gamma = float(gamma)
        self.n = self.E_samples.shape[1]
        K = len(self.grid)
        ys = np.concatenate([self.E_samples.reshape(K, -1),
                             self.f_samples,
                             self.g_samples[:, None]], axis=1)
        dys = np.concatenate([self.dE_samples.reshape(K, -1),
                              self.df_samples,
                              self.dg_samples[:, None]], axis=1)
        self._dense = CubicHermite(self.grid, ys, dys)
        for a in (self.grid, self.E_samples, self.f_samples, self.g_samples,
                  self.dE_samples, self.df_samples, self.dg_samples):
            a.flags.writeable = False

    @property
    def t_end(self) -> float:
        return float(self.grid[-1])

    def _check_domain(self, t: float):
        if t < -1e-12 or t > self.t_end * (1 + 1e-12) + 1e-15:
            if self.escape_time is not None and t >= self.t_end:
                raise OutOfDomain(
                    f"t={t} is beyond the interval of definition "
                    f"[0, {self.t_end}] (finite escape near t={self.escape_time})")
            raise OutOfDomain(f"t={t} outside [0, {self.t_end}]")

    def params_at(self, t: float):
        """(E, f, g) arrays at time t (dense output; exact at grid points)."""
        self._check_domain(t)
        t = min(max(t, 0.0), self.t_end)
        n = self.n
        y = self._dense(t)
        E = y[:n * n].reshape(n, n)
        return 0.5 * (E + E.T), y[n * n:n * n + n], float(y[-1])

    def params_at_many(self, tq):
        """(E, f, g) tables at an array of times within the domain:
        shapes (K, n, n), (K, n), (K,)."""
        tq = np.asarray(tq, dtype=float)
        for t in (tq.min(), tq.max()):
            self._check_domain(float(t))
        n = self.n
        Y = self._dense.eval_many(tq)
        E = Y[:, :n * n].reshape(len(tq), n, n)
        E = 0.5 * (E + np.swapaxes(E, 1, 2))
        return E, Y[:, n * n:n * n + n], Y[:, -1]

    def __call__(self, t: float) -> Paraboloid:
        E, f, g = self.params_at(t)
        return Paraboloid(E, f, g)

    def to_csv(self) -> str:
        """One row per grid point; columns t, E_ij (row-major), f_i, g."""
        n = self.n
        cols = (["t"]
                + [f"E_{i}{j}" for i in range(n) for j in range(n)]
                + [f"f_{i}" for i in range(n)] + ["g"])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for k, t in enumerate(self.grid):
            row = np.concatenate([[t], self.E_samples[k].ravel(),
                                  self.f_samples[k], [self.g_samples[k]]])
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def eval_paraboloid(tvp: TimeVaryingParaboloid, t: float) -> Paraboloid:
    """Paraboloid at time t from dense output; OutOfDomain outside the grid."""
    return tvp(t)


def propagate(P0: Paraboloid, sys: IqcSystem, cfg: IntegratorConfig,
              gamma: float = 1.0) -> TimeVaryingParaboloid:
    """Integrate the coupled (E, f, g) flow from the seed up to cfg.t_end.

    Stops early when the Frobenius norm of E exceeds ``cfg.escape_norm``; the
    crossing is bracketed by step halving and recorded as ``escape_time``.
    """
    if P0.dim != sys.n:
        raise DimensionMismatch(f"seed dim {P0.dim} != system dim {sys.n}")
    n = sys.n
    iu = np.triu_indices(n)
    G = g_quadrature_matrix(sys)
    u = sys.u
    nE = len(iu[0])

    def rhs(t, y):
        E = _sym_unpack(y[:nE], n, iu)
        f = y[nE:nE + n]
        u_t = u(t)
        dE = riccati_rhs(E, sys)
        df = f_rhs(E, f, sys, u_t)
        dg = g_rhs(f, u_t, G)
        return np.concatenate([_sym_pack(dE, iu), df, [dg]])

    def below_escape(t, y):
        E = _sym_unpack(y[:nE], n, iu)
        return np.linalg.norm(E) <= cfg.escape_norm

    y0 = np.concatenate([_sym_pack(P0.E, iu), P0.f, [P0.g]])
    res: IntegrationResult = integrate(
        rhs, 0.0, y0, cfg.t_end, rtol=cfg.rel_tol, atol=cfg.abs_tol,
        max_step=cfg.max_step, halt_fn=below_escape,
        halt_rtol=ESCAPE_BRACKET_RTOL)

    K = len(res.ts)
    E_s = np.empty((K, n, n))
    dE_s = np.empty((K, n, n))
    for k in range(K):
        E_s[k] = _sym_unpack(res.ys[k, :nE], n, iu)
        dE_s[k] = _sym_unpack(res.dys[k, :nE], n, iu)
    f_s = res.ys[:, nE:nE + n]
    df_s = res.dys[:, nE:nE + n]
    g_s = res.ys[:, -1]
    dg_s = res.dys[:, -1]
    escape = res.t_halt if res.status == "halted" else None
    return TimeVaryingParaboloid(res.ts, E_s, f_s, g_s, dE_s, df_s, dg_s,
                                 escape_time=escape, gamma=gamma)
