"""First focal instants of orthogonal geodesics.

The variation map of a unit normal stacks the ``n - 1`` Jacobi fields obtained
by differentiating orthogonal geodesics along a local chart of the unit cone.
A focal instant is where this ``n x (n-1)`` matrix drops rank, detected by a
sign change of ``det[J, gamma']`` or by the smallest singular value falling
below a relative threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .geodesic import VARIATION_STEP, Flow
from .metric import FinslerMetric
from .normal import NormalVariation, NormalVector
from .submanifold import Submanifold

COLLAPSE_THRESHOLD = 1e-4
SCAN_POINTS = 400


@dataclass(eq=False)
class FocalResult:
    normal: NormalVector
    value: float
    horizon: float
    width: float
    mode: str
    times: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    truncated: bool = False
    error: str | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


class VariationMap:
    """Batched finite-difference Jacobi fields around a unit normal."""

    def __init__(self, metric: FinslerMetric, sub: Submanifold, normal: NormalVector,
                 horizon: float, delta: float = VARIATION_STEP):
        self.normal = normal
        self.delta = delta
        chart = NormalVariation(metric, sub, normal)
        m = chart.dimension
        C = np.vstack([np.zeros(m), delta * np.eye(m), -delta * np.eye(m)])
        P, V = chart(C)
        # the unperturbed geodesic starts exactly at the given normal
        P[0], V[0] = normal.base, normal.vector
        self.m = m
        self.flow = Flow(metric, P, V, horizon)
        self.t_end = self.flow.t_end
        self.truncated = self.flow.exited

    def jacobi(self, t):
        """``(J, velocity)`` with ``J`` of shape ``t.shape + (n, n-1)``."""
        st = self.flow.state(np.asarray(t, dtype=float))
        X = st[..., 0, :]
        m = self.m
        J = (X[..., 1:m + 1, :] - X[..., m + 1:, :]) / (2 * self.delta)
        return np.swapaxes(J, -1, -2), st[..., 0, 1, :]

    def profile(self, t):
        """Smallest singular value and ``det[J, gamma']`` at each time."""
        J, vel = self.jacobi(t)
        sigma = np.linalg.svd(J, compute_uv=False)[..., -1] if self.m else np.ones(np.shape(t))
        det = np.linalg.det(np.concatenate([J, vel[..., None]], axis=-1))
        norms = np.linalg.norm(J, axis=-2).max(axis=-1) if self.m else np.ones(np.shape(t))
        return sigma, det, norms


def focal_instant(metric: FinslerMetric, sub: Submanifold, normal: NormalVector, horizon: float,
                  tol: float = 1e-3, delta: float = VARIATION_STEP, threshold: float = COLLAPSE_THRESHOLD,
                  scan: int = SCAN_POINTS) -> FocalResult:
    """First focal instant of ``normal`` on ``(0, horizon]``.

    The collapse threshold is ``threshold`` times the largest Jacobi column
    norm seen so far (including ``t = 0``). Before the profile first exceeds
    the threshold (a point submanifold starts with ``J(0) = 0``) it is not armed.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    vm = VariationMap(metric, sub, normal, horizon, delta)
    t_stop = vm.t_end
    times = np.linspace(0.0, t_stop, scan + 1)
    sigma, det, norms = vm.profile(times)
    typical = np.maximum.accumulate(norms)
    below = sigma < threshold * typical
    armed = np.maximum.accumulate(~below)
    sgn = np.sign(det)

    hit = None
    for i in range(1, len(times)):
        if not armed[i - 1]:
            continue
        if sgn[i] != sgn[i - 1] and sgn[i - 1] != 0:
            hit = (i - 1, i, "determinant")
            break
        if below[i]:
            # a transversal zero just past the grid point is located exactly
            if i + 1 < len(times) and sgn[i + 1] != sgn[i - 1] and sgn[i - 1] != 0:
                hit = (i - 1, i + 1, "determinant")
            else:
                hit = (i - 1, i, "singular-value")
            break
    if hit is None:
        return FocalResult(normal, math.inf, t_stop, 0.0, "none", times, sigma, vm.truncated)

    a, b, mode = hit
    lo, hi = float(times[a]), float(times[b])
    if mode == "determinant":
        xtol = min(tol, 1e-12 * max(t_stop, 1.0))
        value = brentq(lambda t: vm.profile(np.array([t]))[1][0], lo, hi, xtol=xtol)
        return FocalResult(normal, value, t_stop, xtol, mode, times, sigma, vm.truncated)
    ref = typical[a]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if vm.profile(np.array([mid]))[0][0] < threshold * ref:
            hi = mid
        else:
            lo = mid
    return FocalResult(normal, hi, t_stop, hi - lo, mode, times, sigma, vm.truncated)
