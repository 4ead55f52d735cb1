"""Geodesics as solutions of the Euler-Lagrange equations of the energy.

Integration uses SciPy's Dormand-Prince 4(5) pair with dense output; leaving
the chart is a terminal event located by root finding on the dense output.
Several initial conditions can be integrated as one stacked system so that
finite-difference variations share a single step sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, HorizonError
from .metric import FinslerMetric

RTOL = 1e-9
ATOL = 1e-10
VARIATION_STEP = 1e-5

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True, eq=False)
class Curve:
    """Piecewise-linear curve through ``points`` at strictly increasing times ``t``."""

    t: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] != t.size:
            raise ValueError("points must have shape (len(t), n)")
        if t.size < 2:
            raise ValueError("a curve needs at least two samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "points", pts)

    @classmethod
    def segment(cls, a, b, samples: int = 2, t0: float = 0.0, t1: float = 1.0) -> "Curve":
        s = np.linspace(0.0, 1.0, samples)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(t0 + (t1 - t0) * s, a + s[:, None] * (b - a))

    def __call__(self, t):
        return np.stack([np.interp(t, self.t, self.points[:, i]) for i in range(self.points.shape[1])], axis=-1)


def _segment_integrals(metric: FinslerMetric, curve: Curve, power: int) -> np.ndarray:
    if not np.all(metric.chart.contains(curve.points)):
        raise DomainError("curve leaves the chart domain")
    dt = np.diff(curve.t)
    dx = np.diff(curve.points, axis=0)
    vel = dx / dt[:, None]
    x0 = curve.points[:-1]
    nodes = x0[None] + _GL_NODES[:, None, None] * dx[None]
    vals = metric._norm(nodes, vel[None]) ** power
    return dt * np.einsum("q,qm->m", _GL_WEIGHTS, vals)


def length(metric: FinslerMetric, curve: Curve) -> float:
    """Finsler length by 3-point Gauss-Legendre quadrature on every segment."""
    return float(np.sum(_segment_integrals(metric, curve, 1)))


def energy(metric: FinslerMetric, curve: Curve) -> float:
    """Integral of ``F(gamma')**2`` with the same quadrature as :func:`length`."""
    return float(np.sum(_segment_integrals(metric, curve, 2)))


def euler_lagrange_residual(metric: FinslerMetric, x, v, a) -> np.ndarray:
    """``g_v a + (d2L/dv dx) v - dL/dx``; vanishes along geodesics."""
    g = metric.fiber_hessian(x, v)
    grad, mixed = metric.spatial_terms(x, v)
    return (
        np.einsum("...ij,...j->...i", g, a)
        + np.einsum("...ik,...k->...i", mixed, v)
        - grad
    )


class Flow:
    """Stacked integration of ``m`` geodesics sharing one adaptive step sequence."""

    def __init__(self, metric: FinslerMetric, P0, V0, t_max: float, rtol: float = RTOL, atol: float = ATOL):
        P0 = np.atleast_2d(np.asarray(P0, dtype=float))
        V0 = np.atleast_2d(np.asarray(V0, dtype=float))
        if P0.shape != V0.shape:
            raise ValueError("initial points and velocities must have matching shapes")
        if not t_max > 0:
            raise ValueError("t_max must be positive")
        self.metric = metric
        self.m, self.n = P0.shape
        m, n = self.m, self.n
        lower, upper = metric.chart.lower, metric.chart.upper

        def rhs(t, y):
            y = y.reshape(m, 2, n)
            x, v = y[:, 0], y[:, 1]
            acc = metric.geodesic_acceleration(x, v)
            return np.stack([v, acc], axis=1).ravel()

        def leave(t, y):
            x = y.reshape(m, 2, n)[:, 0]
            return float(min(np.min(x - lower), np.min(upper - x)))

        leave.terminal = True
        leave.direction = -1

        y0 = np.stack([P0, V0], axis=1).ravel()
        sol = solve_ivp(rhs, (0.0, float(t_max)), y0, method="RK45", rtol=rtol, atol=atol,
                        dense_output=True, events=leave)
        if sol.status == -1:
            raise RuntimeError(f"geodesic integration failed: {sol.message}")
        self.t_max = float(t_max)
        self.exited = bool(sol.status == 1)
        self.t_end = float(sol.t[-1])
        self.t_exit = self.t_end if self.exited else None
        self.nfev = int(sol.nfev)
        self.steps = sol.t
        self._states = sol.y.T.reshape(-1, m, 2, n)
        self._dense = sol.sol
        self._P0, self._V0 = P0, V0

    def state(self, t):
        """Positions and velocities, shape ``t.shape + (m, 2, n)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_end + 1e-12):
            raise HorizonError(f"requested time outside [0, {self.t_end}]", self.t_exit)
        y = self._dense(np.clip(t, 0.0, self.t_end).ravel()).T
        y = y.reshape(t.shape + (self.m, 2, self.n))
        at_zero = t == 0
        if np.any(at_zero):
            y[at_zero] = np.stack([self._P0, self._V0], axis=1)
        return y

    def positions(self, t):
        return self.state(t)[..., 0, :]

    def velocities(self, t):
        return self.state(t)[..., 1, :]


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    """A single integrated geodesic with its accepted-step samples."""

    p0: np.ndarray
    v0: np.ndarray
    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    t_end: float
    exited: bool
    t_exit: float | None
    rtol: float
    atol: float
    flow: Flow

    def position(self, t):
        return self.flow.positions(t)[..., 0, :]

    def velocity(self, t):
        return self.flow.velocities(t)[..., 0, :]

    def speeds(self, metric: FinslerMetric) -> np.ndarray:
        return metric._norm(self.positions, self.velocities)

    def sample(self, count: int):
        """Uniform resampling on ``[0, t_end]``: ``(t, positions, velocities)``."""
        ts = np.linspace(0.0, self.t_end, count)
        st = self.flow.state(ts)[:, 0]
        return ts, st[:, 0], st[:, 1]


def shoot(metric: FinslerMetric, p, v, t_max: float, rtol: float = RTOL, atol: float = ATOL) -> GeodesicPath:
    """Integrate the geodesic with ``gamma(0) = p`` and ``gamma'(0) = v`` up to ``t_max``.

    Integration stops early, without raising, when the path leaves the chart;
    ``exited`` and ``t_exit`` record where.
    """
    p = metric.chart.check(np.asarray(p, dtype=float))
    v = metric._check_vector(v)
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    flow = Flow(metric, p[None], v[None], t_max, rtol=rtol, atol=atol)
    states = flow._states[:, 0]
    return GeodesicPath(
        p0=p.copy(), v0=v.copy(), t=flow.steps.copy(),
        positions=states[:, 0], velocities=states[:, 1],
        t_end=flow.t_end, exited=flow.exited, t_exit=flow.t_exit,
        rtol=rtol, atol=atol, flow=flow,
    )


def exp_map(metric: FinslerMetric, p, v) -> np.ndarray:
    """``exp(v) = gamma_v(1)``; raises :class:`HorizonError` if the chart is left first."""
    path = shoot(metric, p, v, 1.0)
    if path.exited:
        raise HorizonError(f"geodesic left the chart at t={path.t_exit:.6g} < 1", path.t_exit)
    return path.position(1.0)


def d_exp(metric: FinslerMetric, variation, delta: float = VARIATION_STEP) -> np.ndarray:
    """Central difference of ``s -> exp(variation(s))`` at ``s = 0``.

    ``variation`` maps a real parameter to a ``(base point, vector)`` pair.
    Both perturbed geodesics are integrated as one stacked system.
    """
    (pa, va), (pb, vb) = variation(delta), variation(-delta)
    P0 = np.stack([np.asarray(pa, float), np.asarray(pb, float)])
    V0 = np.stack([np.asarray(va, float), np.asarray(vb, float)])
    metric.chart.check(P0)
    metric._check_vector(V0)
    flow = Flow(metric, P0, V0, 1.0)
    if flow.exited:
        raise HorizonError(f"variation left the chart at t={flow.t_exit:.6g} < 1", flow.t_exit)
    ends = flow.positions(1.0)
    return (ends[0] - ends[1]) / (2 * delta)
