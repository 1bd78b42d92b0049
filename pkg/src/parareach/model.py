"""Core domain types: constrained LTI system, paraboloids, augmented states.

The plant is ``xdot = A x + B w + B_u u`` where the disturbance w is unknown
but bounded through an energy budget: the running integral of
``[x; u; w]' M [x; u; w]`` added to the initial budget must stay nonnegative.
The budget is tracked as an extra scalar state ``x_q``, and sets of augmented
states ``(x, x_q)`` are represented by paraboloids: sublevel sets of a value
function quadratic in x and affine in x_q with unit coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetricMatrix,
    DimensionMismatch,
    NonPositiveScale,
    NotNegativeDefinite,
)
from .signals import ZeroSignal, signal_from_json

SYM_TOL = 1e-10      # relative symmetry tolerance before construction rejects
PD_MARGIN = 1e-12    # strict margin for the negative-definiteness of M_w


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim == 1:
        a = a.reshape(len(a), 1) if len(a) else a.reshape(0, 0)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch(f"{name} has non-finite entries")
    return a


def _symmetrize(a, name, tol=SYM_TOL):
    scale = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.T)
    if asym > tol * max(scale, 1e-300) and asym > tol:
        raise AsymmetricMatrix(f"{name} is not symmetric: rel deviation {asym / max(scale, 1e-300):.3e}")
    return 0.5 * (a + a.T)


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True)
class IqcSystem:
    """Validated constrained plant. Immutable; build with :func:`make_system`."""

    A: np.ndarray
    B: np.ndarray
    Bu: np.ndarray
    M: np.ndarray
    u: object
    n: int
    m: int
    p: int
    # blocks of M in (x, u, w) order
    Mx: np.ndarray = field(repr=False, default=None)
    Mxu: np.ndarray = field(repr=False, default=None)
    Mxw: np.ndarray = field(repr=False, default=None)
    Mu: np.ndarray = field(repr=False, default=None)
    Muw: np.ndarray = field(repr=False, default=None)
    Mw: np.ndarray = field(repr=False, default=None)
    Mw_inv: np.ndarray = field(repr=False, default=None)

    def u_at(self, t: float) -> np.ndarray:
        return self.u(t)

    def energy_rate(self, x, u_t, w) -> float:
        """[x; u; w]' M [x; u; w] evaluated blockwise."""
        x = np.asarray(x, dtype=float).reshape(self.n)
        u_t = np.asarray(u_t, dtype=float).reshape(self.p)
        w = np.asarray(w, dtype=float).reshape(self.m)
        return float(
            x @ self.Mx @ x
            + 2.0 * x @ self.Mxu @ u_t
            + 2.0 * x @ self.Mxw @ w
            + u_t @ self.Mu @ u_t
            + 2.0 * u_t @ self.Muw @ w
            + w @ self.Mw @ w
        )

    def to_json(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "Bu": self.Bu.tolist(),
            "M": self.M.tolist(),
            "u": self.u.to_json(),
        }


def make_system(A, B, B_u, M, u=None, sym_tol=SYM_TOL, pd_margin=PD_MARGIN) -> IqcSystem:
    """Validate matrices and assemble an :class:`IqcSystem`.

    ``M`` is indexed in (x, u, w) block order and must be symmetric up to
    ``sym_tol`` (it is symmetrized on construction); its w-block must be
    negative definite with eigenvalues at most ``-pd_margin``.  ``u`` may be
    ``None`` (zero input), a signal object, or the JSON form accepted by
    :func:`parareach.signals.signal_from_json`.
    """
    A = _as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    B = _as_matrix(B, "B")
    if B.shape[0] != n:
        raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
    m = B.shape[1]
    B_u = _as_matrix(B_u, "B_u")
    if B_u.shape[0] != n:
        raise DimensionMismatch(f"B_u must have {n} rows, got {B_u.shape}")
    p = B_u.shape[1]
    M = _as_matrix(M, "M")
    k = n + p + m
    if M.shape != (k, k):
        raise DimensionMismatch(f"M must be {k}x{k} for n={n}, p={p}, m={m}; got {M.shape}")
    M = _symmetrize(M, "M", sym_tol)

    Mx = M[:n, :n]
    Mxu = M[:n, n:n + p]
    Mxw = M[:n, n + p:]
    Mu = M[n:n + p, n:n + p]
    Muw = M[n:n + p, n + p:]
    Mw = M[n + p:, n + p:]

    if m > 0:
        eig = np.linalg.eigvalsh(Mw)
        if np.any(eig > -pd_margin):
            raise NotNegativeDefinite(
                f"w-block of M must be negative definite; eigenvalues {eig}"
            )
        Mw_inv = np.linalg.inv(Mw)
    else:
        Mw_inv = Mw.copy()

    if u is None:
        u = ZeroSignal(p)
    elif isinstance(u, (str, dict)):
        u = signal_from_json(u, p)
    if getattr(u, "dim", p) != p:
        raise DimensionMismatch(f"input signal dimension {u.dim} != {p}")

    arrays = (A, B, B_u, M, Mx, Mxu, Mxw, Mu, Muw, Mw, Mw_inv)
    for a in arrays:
        a.flags.writeable = False
    return IqcSystem(A=A, B=B, Bu=B_u, M=M, u=u, n=n, m=m, p=p,
                     Mx=Mx, Mxu=Mxu, Mxw=Mxw, Mu=Mu, Muw=Muw, Mw=Mw, Mw_inv=Mw_inv)


def system_from_json(obj: dict) -> IqcSystem:
    """Load a system from its JSON form (fields A, B, Bu, M, u)."""
    for key in ("A", "B", "Bu", "M"):
        if key not in obj:
            raise DimensionMismatch(f"system JSON missing field {key!r}")
    return make_system(obj["A"], obj["B"], obj["Bu"], obj["M"], obj.get("u", "zero"))


@dataclass(frozen=True)
class Paraboloid:
    """Parameters (E, f, g) of the value function x'Ex - 2f'x + g + x_q.

    E must be symmetric; no definiteness is required (indefinite and negative
    quadratic coefficients arise naturally during propagation).
    """

    E: np.ndarray
    f: np.ndarray
    g: float

    def __post_init__(self):
        E = _as_matrix(self.E, "E")
        if E.shape[0] != E.shape[1]:
            raise DimensionMismatch(f"E must be square, got {E.shape}")
        E = _symmetrize(E, "E")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.shape[0] != E.shape[0]:
            raise DimensionMismatch(f"f has length {f.shape[0]}, expected {E.shape[0]}")
        if not np.all(np.isfinite(f)) or not np.isfinite(self.g):
            raise DimensionMismatch("paraboloid parameters must be finite")
        _freeze(E, f)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", float(self.g))

    @property
    def dim(self) -> int:
        return self.E.shape[0]

    def quad(self, x) -> float:
        """x'Ex - 2f'x + g (the x-only part of the value function)."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return float(x @ self.E @ x - 2.0 * self.f @ x + self.g)


@dataclass(frozen=True)
class AugmentedState:
    """LTI state together with the remaining energy budget."""

    x: np.ndarray
    x_q: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)) or not np.isfinite(self.x_q):
            raise DimensionMismatch("augmented state must be finite")
        _freeze(x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_q", float(self.x_q))


def value_function(P: Paraboloid, X: AugmentedState) -> float:
    """h = x'Ex - 2f'x + g + x_q; membership in P means h <= 0."""
    if X.x.shape[0] != P.dim:
        raise DimensionMismatch(f"state dim {X.x.shape[0]} != paraboloid dim {P.dim}")
    return P.quad(X.x) + X.x_q


def scale_paraboloid(P: Paraboloid, gamma: float) -> Paraboloid:
    """Componentwise scaling (gE, gf, gg); requires gamma > 0.

    For gamma >= 1 the scaled set contains the original within the
    nonnegative-budget half-space.
    """
    if not np.isfinite(gamma) or gamma <= 0.0:
        raise NonPositiveScale(f"scaling factor must be positive, got {gamma}")
    return Paraboloid(gamma * P.E, gamma * P.f, gamma * P.g)
