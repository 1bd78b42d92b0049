"""Families of scaled-seed propagations and their intersection.

Scaling the seed paraboloid by gamma >= 1 relaxes it inside the nonnegative-
budget half-space, so every scaled propagation bounds the reachable set and
the intersection over scalings is a tighter bound.  The useful scalings are
those whose surface-riding trajectories can still gain budget near the seed
rim; the budget rate there is quadratic in gamma with negative leading
coefficient, which yields a finite largest useful scaling.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, OutOfDomain, UnboundedSlab
from .model import AugmentedState, IqcSystem, Paraboloid, scale_paraboloid
from .riccati import IntegratorConfig, propagate
from .touching import touching_trajectory, trace_back_to_seed
from ._util import pmap

_DEFINED_TOL = 1e-12


def _sphere_directions(n: int, count: int, seed: int = 20_170_824) -> np.ndarray:
    """Deterministic unit directions: exact grids for n <= 2, seeded otherwise."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sample_slab_states(P0: Paraboloid, eps_q: float, density: int = 64,
                       n_radial: int = 3, n_levels: int = 8):
    """Sample the slab of states near the seed rim: x with the x-part of the
    value function in [0, eps_q], budget levels in [-eps_q, 0].

    Parameterizes the shell through the whitening map of E0 (requires
    E0 positive definite, else :class:`UnboundedSlab`).
    """
    lam, V = np.linalg.eigh(P0.E)
    if np.any(lam <= 0.0):
        raise UnboundedSlab(
            f"seed quadratic coefficient not positive definite (eigenvalues {lam}); "
            "the rim slab is unbounded, supply the scaling bound explicitly")
    c = V @ ((V.T @ P0.f) / lam)
    q_min = P0.g - float(c @ (P0.E @ c))
    rho_lo = max(0.0, -q_min)
    rho_hi = -q_min + eps_q
    if rho_hi <= 0.0:
        return []
    root = V @ np.diag(1.0 / np.sqrt(lam)) @ V.T  # E0^{-1/2}
    dirs = _sphere_directions(P0.dim, density)
    radii = np.linspace(rho_lo, rho_hi, n_radial)
    radii = radii[radii > 0.0] if rho_lo == 0.0 else radii
    levels = np.linspace(-eps_q, 0.0, n_levels)
    states = []
    for rho in radii:
        xs = c + np.sqrt(rho) * dirs @ root.T
        for x in xs:
            for xq in levels:
                states.append(AugmentedState(x, xq))
    return states


def _rate_quadratic(P0: Paraboloid, X: AugmentedState, sys: IqcSystem):
    """Coefficients (a, b, c) of the budget rate as a quadratic in the
    scaling.  Assembled from the affine dependence of the optimal disturbance
    on the scaling (w = w_base + gamma * w_lin): interpolating three rate
    evaluations instead would cancel catastrophically when the leading
    coefficient is many orders below the rate itself."""
    u0 = sys.u_at(0.0)
    w_lin = -(sys.Mw_inv @ (sys.B.T @ (P0.E @ X.x - P0.f)))
    w_base = -(sys.Mw_inv @ (sys.Mxw.T @ X.x + sys.Muw.T @ u0))
    a = float(w_lin @ sys.Mw @ w_lin)
    b = 2.0 * float(X.x @ sys.Mxw @ w_lin + u0 @ sys.Muw @ w_lin
                    + w_base @ sys.Mw @ w_lin)
    c = sys.energy_rate(X.x, u0, w_base)
    return a, b, c


def gamma_bar(P0: Paraboloid, sys: IqcSystem, eps_q: float,
              sampler_density: int = 64) -> float:
    """Largest scaling with nonnegative initial budget rate over the sampled
    rim slab; 1.0 when no sampled state admits a rising rate."""
    if eps_q <= 0:
        raise DimensionMismatch(f"eps_q must be positive, got {eps_q}")
    states = sample_slab_states(P0, eps_q, density=sampler_density,
                                n_radial=3, n_levels=1)
    best = 1.0
    for X in states:
        a, b, c = _rate_quadratic(P0, X, sys)
        if a >= -1e-300:
            # degenerate sample (rate does not depend on the scaling)
            continue
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            continue
        root = (-b - np.sqrt(disc)) / (2.0 * a)
        if root >= 1.0:
            best = max(best, float(root))
    return best


@dataclass
class ParaboloidFamily:
    """Scaled-seed propagations sharing one seed; immutable after build."""

    seed: Paraboloid
    gammas: np.ndarray
    members: list
    eps_q: float
    T: float
    K_bound: float
    system: IqcSystem
    gamma_bar_value: Optional[float] = None

    @property
    def t_max(self) -> float:
        return max(m.t_end for m in self.members)

    def defined_at(self, t: float):
        """Indices of members whose interval of definition contains t."""
        return [i for i, m in enumerate(self.members)
                if t <= m.t_end * (1 + _DEFINED_TOL) + 1e-15]

    def params_at(self, t: float):
        """[(index, E, f, g)] over members defined at t."""
        out = []
        for i in self.defined_at(t):
            E, f, g = self.members[i].params_at(min(t, self.members[i].t_end))
            out.append((i, E, f, g))
        return out

    def to_manifest(self, assumption_report=None) -> dict:
        man = {
            "gammas": self.gammas.tolist(),
            "escape_times": [m.escape_time for m in self.members],
            "K_bound": self.K_bound,
            "eps_q": self.eps_q,
            "horizon": self.T,
            "gamma_bar": self.gamma_bar_value,
        }
        if assumption_report is not None:
            man["assumptions"] = assumption_report.to_json()
        return man


def build_family(P0: Paraboloid, sys: IqcSystem, eps_q: float, n_members: int,
                 cfg: IntegratorConfig, gammas: Optional[Sequence[float]] = None,
                 spacing: str = "uniform",
                 sampler_density: int = 64) -> ParaboloidFamily:
    """Propagate one member per scaling in [1, gamma_bar].

    The grid is uniform by default (``spacing="log"`` switches to log-spaced,
    useful when the scaling bound spans orders of magnitude); endpoints are
    always included.  Explicit ``gammas`` bypass the bound computation.
    Members that escape before the horizon keep their truncated domains.
    """
    gbar = None
    if gammas is None:
        if n_members < 1:
            raise DimensionMismatch(f"n_members must be >= 1, got {n_members}")
        gbar = gamma_bar(P0, sys, eps_q, sampler_density=sampler_density)
        if n_members == 1 or gbar <= 1.0:
            gs = np.array([1.0])
        elif spacing == "log":
            gs = np.geomspace(1.0, gbar, n_members)
        elif spacing == "uniform":
            gs = np.linspace(1.0, gbar, n_members)
        else:
            raise DimensionMismatch(f"unknown gamma spacing {spacing!r}")
    else:
        gs = np.asarray(sorted(float(g) for g in gammas), dtype=float)
        if len(gs) == 0 or np.any(gs <= 0):
            raise DimensionMismatch("explicit gammas must be positive and nonempty")
    gs = np.unique(gs)

    members = pmap(lambda g: propagate(scale_paraboloid(P0, g), sys, cfg, gamma=g), gs)
    k_bound = max(float(np.max(np.linalg.norm(m.E_samples, axis=(1, 2))))
                  for m in members)
    return ParaboloidFamily(seed=P0, gammas=gs, members=list(members),
                            eps_q=eps_q, T=cfg.t_end, K_bound=k_bound,
                            system=sys, gamma_bar_value=gbar)


def intersection_membership(F: ParaboloidFamily, t: float, X: AugmentedState):
    """(inside, margin): inside iff the budget is nonnegative and every member
    defined at t contains X; margin is the worst member value (negative
    inside)."""
    params = F.params_at(t)
    if not params:
        raise OutOfDomain(f"t={t} beyond the family's interval of definition "
                          f"[0, {F.t_max}]")
    margin = -np.inf
    for _, E, f, g in params:
        val = float(X.x @ E @ X.x - 2.0 * f @ X.x + g + X.x_q)
        margin = max(margin, val)
    return (X.x_q >= 0.0 and margin <= 0.0), margin


@dataclass
class ReachSlice:
    """Per-point budget headroom of the family intersection at one time.

    A point x belongs to the projected overapproximation iff xq_max(x) >= 0;
    the admissible budget slab there is [0, xq_max(x)].  ``member_argmin``
    holds the index (into the family's ascending gammas) of the active
    constraint; ties go to the lowest gamma.
    """

    t: float
    x_grid: np.ndarray
    xq_max: np.ndarray
    member_argmin: np.ndarray
    gammas: np.ndarray = field(repr=False, default=None)

    @property
    def argmin_gamma(self) -> np.ndarray:
        return self.gammas[self.member_argmin]

    def to_csv(self) -> str:
        n = self.x_grid.shape[1]
        cols = [f"x_{i}" for i in range(n)] + ["xq_max", "argmin_gamma"]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        ag = self.argmin_gamma
        for k in range(len(self.xq_max)):
            row = list(self.x_grid[k]) + [self.xq_max[k], ag[k]]
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def _member_values(F: ParaboloidFamily, t: float, xs: np.ndarray):
    """Stacked member values -(x'Ex - 2f'x + g) at t, shape (n_defined, G)."""
    params = F.params_at(t)
    if not params:
        raise OutOfDomain(f"t={t} beyond the family's interval of definition")
    idx = [i for i, *_ in params]
    vals = np.empty((len(params), xs.shape[0]))
    for row, (_, E, f, g) in enumerate(params):
        vals[row] = -(np.einsum("gi,ij,gj->g", xs, E, xs) - 2.0 * xs @ f + g)
    return np.array(idx), vals


def reach_slice(F: ParaboloidFamily, t: float, x_grid) -> ReachSlice:
    """Evaluate the intersection's budget headroom over a grid of states."""
    xs = np.asarray(x_grid, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[1] != F.seed.dim:
        raise DimensionMismatch(
            f"grid points have dim {xs.shape[1]}, family dim {F.seed.dim}")
    idx, vals = _member_values(F, t, xs)
    pos = np.argmin(vals, axis=0)          # first minimum = lowest gamma (sorted)
    xq_max = vals[pos, np.arange(xs.shape[0])]
    return ReachSlice(t=float(t), x_grid=xs, xq_max=xq_max,
                      member_argmin=idx[pos], gammas=F.gammas)


def xq_max_at(F: ParaboloidFamily, t: float, xs) -> np.ndarray:
    """Budget headroom min over members at arbitrary points (vectorized)."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[None, :]
    _, vals = _member_values(F, t, xs)
    return np.min(vals, axis=0)


def membership_margins(F: ParaboloidFamily, t: float, xs, xqs) -> np.ndarray:
    """Batched intersection margins: margin_k = x_q_k - xq_max(x_k).
    Negative inside; same value :func:`intersection_membership` reports."""
    return np.asarray(xqs, dtype=float) - xq_max_at(F, t, xs)


def find_nonconvex_witness(F: ParaboloidFamily, slc: ReachSlice,
                           n_pairs: int = 20000, seed: int = 7,
                           margin: float = 1e-9):
    """Search for inside points whose midpoint is outside the projected set.

    Returns (x1, x2, midpoint) with headroom > margin at the endpoints and
    < -margin at the midpoint (all re-evaluated exactly), or None.
    """
    inside = slc.x_grid[slc.xq_max > margin]
    if len(inside) < 2:
        return None
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(inside), size=n_pairs)
    j = rng.integers(0, len(inside), size=n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    mids = 0.5 * (inside[i] + inside[j])
    vals = xq_max_at(F, slc.t, mids)
    hits = np.nonzero(vals < -margin)[0]
    for h in hits:
        x1, x2, mid = inside[i[h]], inside[j[h]], mids[h]
        v1, v2 = xq_max_at(F, slc.t, np.stack([x1, x2]))
        if v1 > margin and v2 > margin:
            return x1, x2, mid
    return None


# -- assumption diagnostics ---------------------------------------------------

def rising_energy_violations(xq_values, xq_rates, eps_q: float,
                             margin: float = 0.0):
    """Indices where the budget sits in [-eps_q, 0] but is not strictly
    falling (rate >= -margin)."""
    xq = np.asarray(xq_values, dtype=float)
    rates = np.asarray(xq_rates, dtype=float)
    band = (xq >= -eps_q) & (xq <= 0.0)
    return np.nonzero(band & (rates >= -margin))[0]


@dataclass
class AssumptionReport:
    """Diagnostics for the two exactness hypotheses; violations are listed,
    never fatal (outer bounds stay valid without them)."""

    k_bound: float
    escape_norm: float
    bounded_ok: bool
    escaped_members: list
    falling_ok: bool
    violations: list
    n_boundary_points: int
    notes: str = ""

    @property
    def all_ok(self) -> bool:
        return self.bounded_ok and self.falling_ok

    def to_json(self) -> dict:
        return {
            "k_bound": self.k_bound,
            "escape_norm": self.escape_norm,
            "bounded_ok": self.bounded_ok,
            "escaped_members": self.escaped_members,
            "falling_ok": self.falling_ok,
            "violations": self.violations,
            "n_boundary_points": self.n_boundary_points,
            "notes": self.notes,
        }


def _rim_points(slc: ReachSlice):
    """Zero crossings of the headroom along grid-axis neighbors, located by
    linear interpolation.  Works on regular grids (row-major mesh) and on
    1-D grids."""
    xs, v = slc.x_grid, slc.xq_max
    pts = []
    order = np.lexsort(xs.T[::-1])
    xs_o, v_o = xs[order], v[order]
    for k in range(len(v_o) - 1):
        a, b = v_o[k], v_o[k + 1]
        if np.isfinite(a) and np.isfinite(b) and (a < 0) != (b < 0) and a != b:
            s = a / (a - b)
            # only interpolate between genuine neighbors (single axis moved)
            if np.count_nonzero(np.abs(xs_o[k + 1] - xs_o[k]) > 1e-12) == 1:
                pts.append(xs_o[k] + s * (xs_o[k + 1] - xs_o[k]))
    return pts


def _band_times(traj, eps_q):
    """Times where the trajectory's budget crosses or sits in [-eps_q, 0]."""
    t0, t1 = traj.grid[0], traj.grid[-1]
    ts = np.linspace(t0, t1, 1024)
    xq = np.array([traj.state_at(t)[1] for t in ts])
    out = []
    for level in (0.0, -0.5 * eps_q, -eps_q):
        z = xq - level
        for k in np.nonzero(np.signbit(z[:-1]) != np.signbit(z[1:]))[0]:
            lo, hi = ts[k], ts[k + 1]
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if np.signbit(traj.state_at(mid)[1] - level) == np.signbit(z[k]):
                    lo = mid
                else:
                    hi = mid
            out.append(0.5 * (lo + hi))
    out.extend(ts[(xq >= -eps_q) & (xq <= 0.0)])
    return sorted(out)


def check_assumptions(F: ParaboloidFamily, cfg: IntegratorConfig,
                      times=None, probe_grid=None, margin: float = 0.0,
                      membership_tol: float = 1e-4,
                      max_rim_points: int = 8,
                      extra_trajectories=None) -> AssumptionReport:
    """Diagnose the exactness hypotheses on the built family.

    (i) every member must stay defined (and below the escape norm) on [0, T];
    (ii) surface-riding trajectories of the intersection, located by tracing
    the active member back from sampled rim states, must have strictly
    falling budget whenever it lies in [-eps_q, 0].

    ``extra_trajectories`` takes (xq_values, xq_rates) pairs fed straight to
    the rising-budget detector; used to self-test the detector.
    """
    sys = F.system
    escaped = [(float(g), m.escape_time) for g, m in zip(F.gammas, F.members)
               if m.t_end < F.T * (1 - 1e-12)]
    bounded_ok = (not escaped) and F.K_bound <= cfg.escape_norm

    if times is None:
        times = np.linspace(F.T / 5.0, min(F.T, F.t_max), 5)
    if probe_grid is None:
        probe_grid = _default_probe_grid(F)

    violations = []
    n_points = 0
    skipped = 0
    for t in times:
        try:
            slc = reach_slice(F, float(t), probe_grid)
        except OutOfDomain:
            continue
        rims = _rim_points(slc)
        if len(rims) > max_rim_points:
            stride = max(1, len(rims) // max_rim_points)
            rims = rims[::stride][:max_rim_points]
        for x_rim in rims:
            member_idx = int(reach_slice(F, float(t), x_rim[None, :]).member_argmin[0])
            tvp = F.members[member_idx]
            try:
                X0 = trace_back_to_seed(tvp, sys, cfg, float(t), x_rim)
                # backtracing carries integration error at the state's scale
                tol = max(100.0 * cfg.rel_tol, 1e-4 * (1.0 + abs(X0.x_q)))
                traj = touching_trajectory(tvp, X0, sys, cfg, touch_tol=tol)
            except Exception:
                skipped += 1
                continue
            for tb in _band_times(traj, F.eps_q):
                x, xq = traj.state_at(tb)
                _, mval = intersection_membership(F, tb, AugmentedState(x, xq))
                if mval > membership_tol * (1.0 + abs(xq)):
                    continue  # not on the intersection's surface
                u_t = sys.u_at(tb)
                from .touching import optimal_disturbance
                w = optimal_disturbance(tvp(min(tb, tvp.t_end)), x, u_t, sys)
                rate = sys.energy_rate(x, u_t, w)
                n_points += 1
                if rate >= -margin:
                    violations.append({"t": float(tb), "x": list(map(float, x)),
                                       "x_q": float(xq), "rate": float(rate),
                                       "gamma": float(F.gammas[member_idx])})

    if extra_trajectories:
        for xq_vals, rates in extra_trajectories:
            for k in rising_energy_violations(xq_vals, rates, F.eps_q, margin):
                violations.append({"t": None, "x": None,
                                   "x_q": float(np.asarray(xq_vals)[k]),
                                   "rate": float(np.asarray(rates)[k]),
                                   "gamma": None})

    notes = "diagnostic only; outer approximation holds regardless"
    if skipped:
        notes += f"; {skipped} boundary trace(s) not usable"
    return AssumptionReport(
        k_bound=F.K_bound, escape_norm=cfg.escape_norm, bounded_ok=bounded_ok,
        escaped_members=escaped, falling_ok=not violations,
        violations=violations, n_boundary_points=n_points, notes=notes)


def _default_probe_grid(F: ParaboloidFamily, points_per_dim: int = 41,
                        inflate: float = 3.0):
    """Axis-aligned grid covering the seed footprint, inflated."""
    lam, V = np.linalg.eigh(F.seed.E)
    if np.any(lam <= 0):
        raise DimensionMismatch("automatic probe grid needs a positive definite "
                                "seed quadratic coefficient; pass probe_grid")
    c = V @ ((V.T @ F.seed.f) / lam)
    q_min = F.seed.g - float(c @ (F.seed.E @ c))
    rho = max(-q_min, F.eps_q)
    half = inflate * np.sqrt(rho * np.sum(V ** 2 / lam, axis=1))
    axes = [np.linspace(c[d] - half[d], c[d] + half[d], points_per_dim)
            for d in range(F.seed.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
