"""Brute-force evidence: sample admissible disturbances, integrate directly.

This module is deliberately independent of the adaptive machinery used by the
paraboloid flow: trajectories are integrated with a fixed-step classical RK4
on a shared time grid, vectorized across the batch.  Soundness of the
computed sets is then checked against these samples, and coverage measures
how much of a computed slice the samples actually visit.

Half of the samples can be steered by the surface-riding disturbance of a
randomly chosen family member (plus noise): extremal trajectories hug the
boundary, which uniform disturbances almost never reach.  All randomness is
drawn up front from one generator per batch in a fixed order, so a fixed
seed reproduces trajectories byte for byte regardless of how the integration
work is later distributed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, RejectionStarvation, UnboundedSlab
from .family import ParaboloidFamily
from .model import IqcSystem, Paraboloid
from .touching import AugmentedTrajectory


@dataclass(frozen=True)
class OracleConfig:
    """Sampling parameters.

    ``w_scale`` multiplies a per-trajectory affordability estimate derived
    from the drawn initial budget and harvest rate, so the same value works
    across systems of very different state scales.  Plain draws combine a
    per-trajectory persistent direction with per-segment noise; persistent
    pushes are what reach the far lobes of the set, and the admissibility
    rejection is the arbiter of how hard a push the budget allows.
    """

    n_trajectories: int
    segments: int = 8
    w_scale: float = 1.0
    seed: int = 0
    t_end: float = 1.0
    steps: Optional[int] = None       # RK4 substeps over [0, t_end]; default ~t_end/2.5e-3
    boundary_fraction: float = 0.5    # share steered by a member's optimal disturbance
    noise_rel: float = 0.05

    def __post_init__(self):
        if self.n_trajectories < 1 or self.segments < 1:
            raise DimensionMismatch("oracle counts must be positive")
        if self.t_end <= 0 or self.w_scale < 0:
            raise DimensionMismatch("oracle horizon must be positive, amplitude nonnegative")
        if not (0.0 <= self.boundary_fraction <= 1.0):
            raise DimensionMismatch("boundary_fraction must lie in [0, 1]")

    @property
    def n_steps(self) -> int:
        return self.steps if self.steps is not None else max(200, int(np.ceil(self.t_end / 2.5e-3)))


def _seed_box(P0: Paraboloid):
    """Bounding box of the seed footprint and the budget cap; needs a
    positive definite quadratic coefficient."""
    lam, V = np.linalg.eigh(P0.E)
    if np.any(lam <= 0.0):
        raise UnboundedSlab("seed footprint unbounded (E0 not positive definite); "
                            "cannot rejection-sample initial states")
    Einv = V @ np.diag(1.0 / lam) @ V.T
    c = Einv @ P0.f
    q_min = P0.g - float(c @ (P0.E @ c))
    if q_min >= 0.0:
        raise RejectionStarvation("seed contains no states with nonnegative budget")
    half = np.sqrt(-q_min * np.diag(Einv))
    return c, half, -q_min


def _draw_initial_states(P0: Paraboloid, n: int, rng):
    """Uniform draws from the solid seed set by blockwise rejection."""
    c, half, cap = _seed_box(P0)
    dim = P0.dim
    xs = np.empty((n, dim))
    xqs = np.empty(n)
    got, rounds, drawn = 0, 0, 0
    while got < n:
        block = max(2 * (n - got), 256)
        x = c + half * rng.uniform(-1.0, 1.0, size=(block, dim))
        xq = rng.uniform(0.0, cap, size=block)
        q = np.einsum("ki,ij,kj->k", x, P0.E, x) - 2.0 * x @ P0.f + P0.g
        ok = np.nonzero(q + xq <= 0.0)[0]
        take = ok[:n - got]
        xs[got:got + len(take)] = x[take]
        xqs[got:got + len(take)] = xq[take]
        got += len(take)
        drawn += block
        rounds += 1
        if rounds > 64 and got < 0.001 * drawn:
            raise RejectionStarvation(
                f"initial-state sampling starved: {got} accepted of {drawn} draws")
    return xs, xqs


def _qform_batch(sys: IqcSystem, X, u_t, W):
    """Rowwise [x; u; w]' M [x; u; w] for batches X (N,n), W (N,m)."""
    out = np.einsum("ki,ij,kj->k", X, sys.Mx, X)
    out += np.einsum("ki,ij,kj->k", W, sys.Mw, W)
    if sys.p:
        out += 2.0 * X @ (sys.Mxu @ u_t) + float(u_t @ sys.Mu @ u_t) + 2.0 * W @ (sys.Muw.T @ u_t)
    if sys.Mxw.size:
        out += 2.0 * np.einsum("ki,ij,kj->k", X, sys.Mxw, W)
    return out


class _MemberTables:
    """Member parameters pre-evaluated at every RK4 stage time."""

    def __init__(self, family: ParaboloidFamily, grid: np.ndarray):
        mids = 0.5 * (grid[:-1] + grid[1:])
        times = np.concatenate([grid, mids])  # nodes first, then midpoints
        self.E = []
        self.f = []
        for m in family.members:
            tq = np.minimum(times, m.t_end)
            E, f, _ = m.params_at_many(tq)
            self.E.append(E)
            self.f.append(f)
        self.E = np.stack(self.E)   # (M, n_times, n, n)
        self.f = np.stack(self.f)   # (M, n_times, n)


def _steered_w(sys, E, f, X, u_t, noise):
    """Optimal disturbance of per-row parameters (E, f) plus relative noise."""
    V = np.einsum("kij,kj->ki", E, X) - f
    V = V @ sys.B + X @ sys.Mxw
    if sys.p:
        V = V + u_t @ sys.Muw
    w = -(V @ sys.Mw_inv)
    scale = np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-3)
    return w + scale * noise


def _integrate_batch(sys: IqcSystem, X0, XQ0, grid, w_of, save_idx):
    """Fixed-step RK4 over ``grid``; w_of(step, stage, t, X) supplies the
    disturbance (stage 0: left node, 1: midpoint, 2: right node).  Saves
    states at ``save_idx`` nodes and tracks budget nonnegativity."""
    X, XQ = X0.copy(), XQ0.copy()
    N = X.shape[0]
    admissible = XQ >= 0.0
    saved_X = np.empty((len(save_idx), N, sys.n))
    saved_XQ = np.empty((len(save_idx), N))
    saved_W = np.empty((len(save_idx), N, sys.m))
    save_ptr = {int(i): k for k, i in enumerate(save_idx)}
    A_T, B_T, Bu_T = sys.A.T, sys.B.T, sys.Bu.T
    u = sys.u

    def rhs(step, stage, t, X, XQ):
        u_t = u(t)
        W = w_of(step, stage, t, X, XQ)
        dX = X @ A_T + W @ B_T
        if sys.p:
            dX = dX + u_t @ Bu_T
        return dX, _qform_batch(sys, X, u_t, W), W

    if 0 in save_ptr:
        k = save_ptr[0]
        saved_X[k], saved_XQ[k] = X, XQ
        saved_W[k] = rhs(0, 0, grid[0], X, XQ)[2]

    for i in range(len(grid) - 1):
        t0, t1 = grid[i], grid[i + 1]
        h = t1 - t0
        tm = 0.5 * (t0 + t1)
        k1x, k1q, w0 = rhs(i, 0, t0, X, XQ)
        k2x, k2q, _ = rhs(i, 1, tm, X + 0.5 * h * k1x, XQ + 0.5 * h * k1q)
        k3x, k3q, _ = rhs(i, 1, tm, X + 0.5 * h * k2x, XQ + 0.5 * h * k2q)
        k4x, k4q, _ = rhs(i, 2, t1, X + h * k3x, XQ + h * k3q)
        X = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        XQ = XQ + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        admissible &= XQ >= 0.0
        if int(i + 1) in save_ptr:
            k = save_ptr[int(i + 1)]
            saved_X[k], saved_XQ[k] = X, XQ
            saved_W[k] = rhs(i, 2, t1, X, XQ)[2]
    return saved_X, saved_XQ, saved_W, admissible


def sample_admissible(sys: IqcSystem, P0: Paraboloid, cfg: OracleConfig,
                      family: Optional[ParaboloidFamily] = None,
                      sample_times: Optional[Sequence[float]] = None,
                      min_admissible: Optional[int] = None):
    """Draw piecewise-constant disturbances, integrate the constrained plant,
    and keep the trajectories whose budget never dips below zero.

    With a ``family``, a ``boundary_fraction`` share of the draws is steered
    by the optimal disturbance of a randomly chosen member plus relative
    noise.  ``sample_times`` become trajectory grid points.  When
    ``min_admissible`` is set, further seeded batches are drawn until that
    many admissible trajectories are collected.
    """
    if sample_times is None:
        sample_times = []
    save_times = np.unique(np.concatenate([
        np.linspace(0.0, cfg.t_end, cfg.segments + 1),
        np.asarray(list(sample_times), dtype=float)]))
    if np.any(save_times < 0) or np.any(save_times > cfg.t_end):
        raise DimensionMismatch("sample times must lie within [0, t_end]")

    master = np.random.SeedSequence(cfg.seed)
    out = []
    total_drawn = 0
    batches = 0
    while True:
        out.extend(_one_batch(sys, P0, cfg, family, save_times,
                              master.spawn(1)[0]))
        total_drawn += cfg.n_trajectories
        batches += 1
        if min_admissible is None or len(out) >= min_admissible:
            break
        if total_drawn >= 20 * cfg.n_trajectories:
            raise RejectionStarvation(
                f"could not collect {min_admissible} admissible trajectories "
                f"({len(out)} of {total_drawn} drawn)")
    if total_drawn >= 1000 and len(out) < 0.001 * total_drawn:
        raise RejectionStarvation(
            f"acceptance rate {len(out) / total_drawn:.2e} below 0.1%")
    return out[:min_admissible] if min_admissible is not None else out


def _gamma_plus(sys, P0, X0):
    """Largest seed scaling whose surface ride starts with a nonnegative
    budget rate, per start state (the positive root of the rate quadratic;
    1 when none exists).  Batched over rows of X0."""
    u0 = sys.u_at(0.0)
    w_lin = -((X0 @ P0.E - P0.f) @ sys.B) @ sys.Mw_inv
    w_base = -(X0 @ sys.Mxw + u0 @ sys.Muw) @ sys.Mw_inv
    a = np.einsum("ki,ij,kj->k", w_lin, sys.Mw, w_lin)
    b = 2.0 * (np.einsum("ki,ij,kj->k", X0, sys.Mxw, w_lin)
               + w_lin @ (sys.Muw.T @ u0)
               + np.einsum("ki,ij,kj->k", w_base, sys.Mw, w_lin))
    c = _qform_batch(sys, X0, u0, w_base)
    disc = b * b - 4.0 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        root = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
    root = np.where((disc >= 0.0) & (a < -1e-300), root, 1.0)
    return np.maximum(root, 1.0)


def _affordable_amplitude(sys, X0, XQ0, t_end):
    """Disturbance scale a trajectory could sustain: balance the w-cost in
    the energy-rate form against the drawn budget plus the initial harvest
    rate over the horizon.  Only sets the sampling scale; admissibility is
    decided by the integration."""
    u0 = sys.u_at(0.0)
    Z = np.zeros((X0.shape[0], sys.m))
    harvest = _qform_batch(sys, X0, u0, Z)
    wcost = -float(np.min(np.linalg.eigvalsh(sys.Mw)))
    budget = XQ0 + np.maximum(harvest, 0.0) * t_end
    return np.sqrt(np.maximum(budget, 0.0) / (wcost * t_end)) + 1e-6


def _one_batch(sys, P0, cfg, family, save_times, seed_seq):
    N = cfg.n_trajectories
    rng = np.random.default_rng(seed_seq)

    # fixed draw order: initial states, amplitudes, directions, noise, picks
    X0, XQ0 = _draw_initial_states(P0, N, rng)
    amp = cfg.w_scale * rng.uniform(0.0, 1.0, size=N) * _affordable_amplitude(
        sys, X0, XQ0, cfg.t_end)
    direction = rng.standard_normal((N, sys.m))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    direction /= np.maximum(norms, 1e-12)
    persistence = rng.uniform(0.0, 1.0, size=(N, 1, 1))
    raw_W = rng.standard_normal((N, cfg.segments, sys.m))
    raw_W = (persistence * direction[:, None, :]
             + np.sqrt(1.0 - persistence ** 2) * raw_W)
    n_boundary = 0
    member_of = switch_t = None
    if family is not None and cfg.boundary_fraction > 0 and sys.m > 0:
        n_boundary = int(round(cfg.boundary_fraction * N))
        member_of = rng.integers(0, len(family.members), size=n_boundary)
        # half the picks follow the family's own scaling rule instead: ride a
        # member the start state can afford (initial budget rate >= 0), which
        # is what survives out to the far reaches of the set
        affordable = rng.random(size=n_boundary) < 0.5
        gplus = _gamma_plus(sys, P0, X0[:n_boundary])
        target = 1.0 + rng.random(size=n_boundary) ** 2 * np.maximum(gplus - 1.0, 0.0)
        nearest = np.clip(np.searchsorted(family.gammas, target), 0,
                          len(family.gammas) - 1)
        member_of = np.where(affordable, nearest, member_of)
        # ride the member surface (banking budget), then release it as a
        # plain push; switch beyond t_end means riding the whole horizon
        switch_t = cfg.t_end * rng.uniform(0.25, 1.5, size=n_boundary)

    base = np.linspace(0.0, cfg.t_end, cfg.n_steps + 1)
    seg_bounds = np.linspace(0.0, cfg.t_end, cfg.segments + 1)
    grid = np.unique(np.concatenate([base, seg_bounds, save_times]))
    save_idx = np.searchsorted(grid, save_times)
    seg_of_step = np.minimum(
        np.searchsorted(seg_bounds, 0.5 * (grid[:-1] + grid[1:]), side="right") - 1,
        cfg.segments - 1)

    tables = _MemberTables(family, grid) if n_boundary else None
    n_nodes = len(grid)

    def time_index(step, stage):
        # stage 0/2: grid nodes; stage 1: midpoint table offset
        return step + (0, n_nodes, 1)[stage]

    trajectories = []

    def emit(sX, sXQ, sW, ok, member_idx):
        href = None
        if family is not None:
            href = family.members[member_idx if member_idx is not None else 0]
            Eh, fh, gh = href.params_at_many(np.minimum(save_times, href.t_end))
        for j in np.nonzero(ok)[0]:
            if href is not None:
                x = sX[:, j, :]
                h = (np.einsum("ki,kij,kj->k", x, Eh, x) - 2.0 * np.sum(fh * x, axis=1)
                     + gh + sXQ[:, j])
                h[save_times > href.t_end * (1 + 1e-12)] = np.nan
            else:
                h = np.full(len(save_times), np.nan)
            trajectories.append(AugmentedTrajectory(
                save_times, sX[:, j, :], sXQ[:, j], sW[:, j, :], h))

    if n_boundary < N:
        idx = np.arange(n_boundary, N)
        W_plain = amp[idx, None, None] * raw_W[idx]

        def plain_w(step, stage, t, X, XQ, W_plain=W_plain):
            return W_plain[:, seg_of_step[step], :]

        sX, sXQ, sW, ok = _integrate_batch(sys, X0[idx], XQ0[idx], grid,
                                           plain_w, save_idx)
        emit(sX, sXQ, sW, ok, None)

    if n_boundary:
        idx = np.arange(n_boundary)
        members = member_of
        # noise level per trajectory, down to (near) pure rides: surface
        # riding is a knife edge for the budget, and only low-noise rides
        # survive it out to the far reaches of the set
        noise_lvl = cfg.noise_rel * rng.uniform(0.0, 1.0, size=n_boundary) ** 2
        noise = noise_lvl[:, None, None] * raw_W[idx]
        # releases above the balanced rate are sustainable because harvesting
        # continues; overdrafts are culled by the admissibility check
        release_u = cfg.w_scale * rng.uniform(0.3, 1.6, size=n_boundary)
        wcost = -float(np.min(np.linalg.eigvalsh(sys.Mw))) if sys.m else 1.0

        def steered(step, stage, t, X, XQ, members=members, noise=noise):
            ti = time_index(step, stage)
            E = tables.E[members, ti]
            f = tables.f[members, ti]
            seg = seg_of_step[step]
            w = _steered_w(sys, E, f, X, sys.u(t), noise[:, seg, :])
            riding = t < switch_t
            if np.all(riding):
                return w
            # release: spend the banked budget on the drawn direction pieces
            horizon = np.maximum(cfg.t_end - switch_t, 0.05 * cfg.t_end)
            spend = release_u * np.sqrt(np.maximum(XQ, 0.0) / (wcost * horizon))
            w_rel = spend[:, None] * raw_W[idx][:, seg, :]
            return np.where(riding[:, None], w, w_rel)

        sX, sXQ, sW, ok = _integrate_batch(sys, X0[idx], XQ0[idx], grid,
                                           steered, save_idx)
        # group emission by member so the diagnostic h tracks the right owner
        for mi in np.unique(members):
            sel = members == mi
            emit(sX[:, sel], sXQ[:, sel], sW[:, sel], ok[sel], int(mi))
    return trajectories


@dataclass
class CoverageReport:
    """Cell-coverage of a computed slice by oracle endpoints."""

    fraction: float
    n_inside_cells: int
    n_covered_cells: int
    gaps: list                      # centers of inside cells with no endpoint
    window_lo: np.ndarray
    window_hi: np.ndarray
    cells_per_dim: int
    t: float

    def to_json(self) -> dict:
        return {
            "fraction": self.fraction,
            "n_inside_cells": self.n_inside_cells,
            "n_covered_cells": self.n_covered_cells,
            "gaps": [list(map(float, g)) for g in self.gaps],
            "window_lo": list(map(float, self.window_lo)),
            "window_hi": list(map(float, self.window_hi)),
            "cells_per_dim": self.cells_per_dim,
            "t": self.t,
        }


def coverage(F: ParaboloidFamily, t: float, endpoints, cells_per_dim: int = 24,
             window=None) -> CoverageReport:
    """Fraction of slice cells with nonnegative budget headroom that contain
    at least one endpoint.  Uncovered cells point at over-conservatism of the
    family (or under-sampling) and are returned as the gap report.
    """
    from .family import xq_max_at

    pts = np.asarray(endpoints, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    pts = pts[:, :F.seed.dim]
    if window is None:
        if len(pts) == 0:
            raise DimensionMismatch("coverage needs endpoints or an explicit window")
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        pad = 0.05 * np.maximum(hi - lo, 1e-9)
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = (np.asarray(w, dtype=float) for w in window)
    dim = F.seed.dim
    width = (hi - lo) / cells_per_dim
    axes = [lo[d] + width[d] * (np.arange(cells_per_dim) + 0.5) for d in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    inside = xq_max_at(F, t, centers) >= 0.0

    covered = np.zeros(len(centers), dtype=bool)
    if len(pts):
        cell = np.floor((pts - lo) / width).astype(int)
        ok = np.all((cell >= 0) & (cell < cells_per_dim), axis=1)
        flat = np.zeros(len(pts), dtype=int)
        for d in range(dim):
            flat = flat * cells_per_dim + cell[:, d]
        covered[np.unique(flat[ok])] = True

    n_inside = int(np.count_nonzero(inside))
    n_cov = int(np.count_nonzero(inside & covered))
    gaps = [centers[k] for k in np.nonzero(inside & ~covered)[0]]
    frac = 1.0 if n_inside == 0 else n_cov / n_inside
    return CoverageReport(fraction=frac, n_inside_cells=n_inside,
                          n_covered_cells=n_cov, gaps=gaps,
                          window_lo=lo, window_hi=hi,
                          cells_per_dim=cells_per_dim, t=float(t))


def endpoints_to_csv(states) -> str:
    """CSV of endpoint states: columns x_i..., x_q."""
    states = list(states)
    if not states:
        return "x_q\n"
    n = len(states[0].x)
    cols = [f"x_{i}" for i in range(n)] + ["x_q"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for s in states:
        buf.write(",".join(repr(float(v)) for v in list(s.x) + [s.x_q]) + "\n")
    return buf.getvalue()
