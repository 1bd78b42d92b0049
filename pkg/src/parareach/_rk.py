"""Embedded Dormand-Prince 5(4) integrator with PI step-size control.

Shared by the paraboloid-parameter flow and the trajectory integrators.
Accepted steps store the right-hand side at each node, so a cubic Hermite
interpolant between nodes gives dense output whose node values are exact.

A ``halt_fn`` hook turns the integrator into a bracketing device: when the
hook rejects an otherwise acceptable step, the step size is halved until the
bracket around the first rejected time is below ``halt_rtol`` (relative), and
integration stops just below it.  This is how finite escape times of the
parameter flow are located.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeUnderflow

# Dormand-Prince 5(4) tableau (FSAL: last stage = RHS at the new node).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
])
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_ALPHA = 0.7 / 5.0   # PI controller exponents
_BETA = 0.4 / 5.0


@dataclass
class IntegrationResult:
    ts: np.ndarray       # accepted node times, ts[0] = t0
    ys: np.ndarray       # states at nodes, shape (K, d)
    dys: np.ndarray      # RHS at nodes, shape (K, d)
    status: str          # "reached" or "halted"
    t_halt: float | None  # upper bracket of the first halted time, if halted


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    if not np.all(np.isfinite(err)):
        return np.inf
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(rhs, t0, y0, f0, t_end, rtol, atol, max_step):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, abs(t_end - t0))
    y1 = y0 + h0 * f0
    f1 = rhs(t0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step, abs(t_end - t0))


def integrate(rhs, t0, y0, t_end, rtol, atol, max_step=np.inf,
              node_times=None, halt_fn=None, halt_rtol=1e-6,
              grow_after_halt=False):
    """Integrate ``dy/dt = rhs(t, y)`` from ``t0`` to ``t_end``.

    node_times: optional increasing array of times in (t0, t_end] the
        integrator lands on exactly (in addition to t_end).
    halt_fn(t, y): return False to refuse an error-accepted step; the first
        refused time is then bracketed by step halving to ``halt_rtol``
        relative accuracy and integration stops ("halted").
    """
    y0 = np.asarray(y0, dtype=float)
    d = y0.shape[0]
    f0 = rhs(t0, y0)
    h = _initial_step(rhs, t0, y0, f0, t_end, rtol, atol, max_step)

    nodes = None
    node_idx = 0
    if node_times is not None and len(node_times):
        nodes = np.asarray(node_times, dtype=float)
        nodes = nodes[(nodes > t0) & (nodes < t_end)]

    ts = [t0]
    ys = [y0.copy()]
    dys = [f0.copy()]

    t, y, f = t0, y0.copy(), f0
    err_prev = 1.0
    halt_pending = False
    k = np.empty((7, d))

    while t < t_end:
        # land exactly on the next mandatory node / the horizon
        t_next_node = t_end
        if nodes is not None:
            while node_idx < len(nodes) and nodes[node_idx] <= t + 1e-14 * max(1.0, abs(t)):
                node_idx += 1
            if node_idx < len(nodes):
                t_next_node = nodes[node_idx]
        h = min(h, max_step, t_next_node - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepSizeUnderflow(
                f"step size underflow at t={t!r} (h={h!r})", t_last=t)

        k[0] = f
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(1, 6):
                k[i] = rhs(t + _C[i] * h, y + h * (k[:i].T @ _A[i, :i]))
            y_new = y + h * (k[:6].T @ _B[:6])
            t_new = t + h
            k[6] = rhs(t_new, y_new)
            err = h * (k.T @ _E)
        err_norm = _error_norm(err, y, y_new, rtol, atol)

        if err_norm > 1.0:
            factor = max(_MIN_FACTOR, _SAFETY * err_norm ** (-_ALPHA))
            h *= factor
            continue

        if halt_fn is not None and not halt_fn(t_new, y_new):
            halt_pending = True
            if h <= halt_rtol * max(abs(t_new), 1e-3):
                return IntegrationResult(np.array(ts), np.array(ys), np.array(dys),
                                         "halted", t_new)
            h *= 0.5
            continue

        # commit
        t, y, f = t_new, y_new, k[6].copy()
        ts.append(t)
        ys.append(y.copy())
        dys.append(f.copy())

        with np.errstate(divide="ignore"):
            factor = _SAFETY * err_norm ** (-_ALPHA) * err_prev ** _BETA if err_norm > 0 else _MAX_FACTOR
        factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
        if halt_pending and not grow_after_halt:
            factor = min(factor, 1.0)
        h *= factor
        err_prev = max(err_norm, 1e-10)

    return IntegrationResult(np.array(ts), np.array(ys), np.array(dys), "reached", None)


class CubicHermite:
    """Piecewise cubic Hermite interpolant over stored (t, y, dy) nodes.

    Exact at nodes; between nodes it matches values and derivatives at both
    ends of the bracketing interval.
    """

    def __init__(self, ts, ys, dys):
        self.ts = np.asarray(ts, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.dys = np.asarray(dys, dtype=float)
        self._last = 0

    @property
    def t_min(self):
        return self.ts[0]

    @property
    def t_max(self):
        return self.ts[-1]

    def _bracket(self, t):
        ts = self.ts
        i = self._last
        if not (ts[i] <= t <= ts[i + 1] if i + 1 < len(ts) else False):
            i = int(np.searchsorted(ts, t, side="right")) - 1
            i = min(max(i, 0), len(ts) - 2)
            self._last = i
        return i

    def __call__(self, t):
        ts = self.ts
        if t <= ts[0]:
            return self.ys[0].copy()
        if t >= ts[-1]:
            return self.ys[-1].copy()
        i = self._bracket(t)
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return (h00 * self.ys[i] + h01 * self.ys[i + 1]
                + h * (h10 * self.dys[i] + h11 * self.dys[i + 1]))

    def eval_many(self, tq):
        """Vectorized evaluation at an array of times, shape (len(tq), d)."""
        ts = self.ts
        tq = np.clip(np.asarray(tq, dtype=float), ts[0], ts[-1])
        i = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, len(ts) - 2)
        h = (ts[i + 1] - ts[i])[:, None]
        s = ((tq - ts[i]) / (ts[i + 1] - ts[i]))[:, None]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return (h00 * self.ys[i] + h01 * self.ys[i + 1]
                + h * (h10 * self.dys[i] + h11 * self.dys[i + 1]))
