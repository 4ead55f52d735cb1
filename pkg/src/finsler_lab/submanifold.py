"""Parametrized embedded submanifolds of the chart."""
from __future__ import annotations

import numpy as np

from .errors import DomainError, ImmersionError

IMMERSION_TOL = 1e-8
FD_PARAM_STEP = 1e-6


class Submanifold:
    """Immersion ``u -> p(u)`` of a parameter box of dimension ``k`` into ``R^n``.

    Subclasses implement :meth:`point` (vectorized over leading axes) and may
    override :meth:`tangents`; the default differentiates by central
    differences with step ``1e-6`` times the parameter-box size.
    """

    def __init__(self, n: int, lower, upper, periodic=None):
        self.n = int(n)
        self.param_lower = np.asarray(lower, dtype=float).reshape(-1)
        self.param_upper = np.asarray(upper, dtype=float).reshape(-1)
        if self.param_lower.shape != self.param_upper.shape:
            raise ValueError("parameter bounds have different lengths")
        if not np.all(self.param_lower < self.param_upper):
            raise ValueError("empty parameter box")
        self.k = self.param_lower.size
        if self.k >= self.n:
            raise ValueError("submanifold dimension must be below the ambient dimension")
        self.periodic = tuple(periodic) if periodic is not None else (False,) * self.k

    def point(self, u):
        raise NotImplementedError

    def tangents(self, u):
        """Tangent basis, shape ``(..., n, k)``."""
        u = np.asarray(u, dtype=float)
        cols = []
        for i in range(self.k):
            h = FD_PARAM_STEP * (self.param_upper[i] - self.param_lower[i])
            e = np.zeros(self.k)
            e[i] = h
            cols.append((self.point(u + e) - self.point(u - e)) / (2 * h))
        if not cols:
            return np.zeros(u.shape[:-1] + (self.n, 0))
        return np.stack(cols, axis=-1)

    def check_parameter(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.k:
            raise DomainError(f"parameter has {u.size} components, expected {self.k}")
        if np.any(u < self.param_lower - 1e-12) or np.any(u > self.param_upper + 1e-12):
            raise DomainError(f"parameter {u} outside the parameter box")
        return u

    def check_immersion(self, u) -> np.ndarray:
        T = self.tangents(u)
        if self.k:
            sv = np.linalg.svd(T, compute_uv=False)
            if np.min(sv) <= IMMERSION_TOL:
                raise ImmersionError(f"tangent vectors are dependent at u={u}")
        return T

    def sample_parameters(self, resolution: int, lower=None, upper=None) -> np.ndarray:
        """Tensor grid of ``resolution`` points per axis, shape ``(m, k)``.

        A periodic axis sampled over its full period omits the duplicate endpoint.
        """
        if self.k == 0:
            return np.zeros((1, 0))
        lower = self.param_lower if lower is None else np.asarray(lower, dtype=float)
        upper = self.param_upper if upper is None else np.asarray(upper, dtype=float)
        axes = []
        for i in range(self.k):
            full = np.isclose(lower[i], self.param_lower[i]) and np.isclose(upper[i], self.param_upper[i])
            endpoint = not (self.periodic[i] and full)
            axes.append(np.linspace(lower[i], upper[i], resolution, endpoint=endpoint))
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack(grid, axis=-1).reshape(-1, self.k)


class PointSubmanifold(Submanifold):
    def __init__(self, p):
        p = np.asarray(p, dtype=float).reshape(-1)
        super().__init__(p.size, [], [])
        self.p = p

    def point(self, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(self.p, u.shape[:-1] + (self.n,)).copy()

    def tangents(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-1] + (self.n, 0))


class LineSubmanifold(Submanifold):
    """Segment ``origin + u * direction`` for ``u`` in ``[lower, upper]``."""

    def __init__(self, origin, direction, lower: float, upper: float):
        self.origin = np.asarray(origin, dtype=float).reshape(-1)
        self.direction = np.asarray(direction, dtype=float).reshape(-1)
        super().__init__(self.origin.size, [lower], [upper])

    def point(self, u):
        u = np.asarray(u, dtype=float)
        return self.origin + u[..., :1] * self.direction

    def tangents(self, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(self.direction[:, None], u.shape[:-1] + (self.n, 1)).copy()


class CircleSubmanifold(Submanifold):
    """Circle ``center + r (cos u e1 + sin u e2)``; ``e1, e2`` default to the first two axes."""

    def __init__(self, center, radius: float, lower: float = 0.0, upper: float = 2 * np.pi, axes=None):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.radius = float(radius)
        n = self.center.size
        if axes is None:
            axes = np.eye(n)[:2]
        self.axes = np.asarray(axes, dtype=float)
        super().__init__(n, [lower], [upper], periodic=[np.isclose(upper - lower, 2 * np.pi)])

    def point(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        return self.center + self.radius * (
            np.cos(th)[..., None] * self.axes[0] + np.sin(th)[..., None] * self.axes[1]
        )

    def tangents(self, u):
        th = np.asarray(u, dtype=float)[..., 0]
        t = self.radius * (-np.sin(th)[..., None] * self.axes[0] + np.cos(th)[..., None] * self.axes[1])
        return t[..., None]


class GraphSubmanifold(Submanifold):
    """Graph ``u -> (u, f(u))`` of a function of the first ``k`` coordinates."""

    def __init__(self, func, n: int, lower, upper, jacobian=None):
        super().__init__(n, lower, upper)
        self.func = func
        self.jacobian = jacobian

    def point(self, u):
        u = np.asarray(u, dtype=float)
        f = np.asarray(self.func(u), dtype=float).reshape(u.shape[:-1] + (self.n - self.k,))
        return np.concatenate([u, f], axis=-1)

    def tangents(self, u):
        if self.jacobian is None:
            return super().tangents(u)
        u = np.asarray(u, dtype=float)
        J = np.asarray(self.jacobian(u), dtype=float).reshape(u.shape[:-1] + (self.n - self.k, self.k))
        eye = np.broadcast_to(np.eye(self.k), u.shape[:-1] + (self.k, self.k))
        return np.concatenate([eye, J], axis=-2)


class CustomImmersion(Submanifold):
    def __init__(self, func, n: int, lower, upper, periodic=None):
        super().__init__(n, lower, upper, periodic)
        self.func = func

    def point(self, u):
        u = np.asarray(u, dtype=float)
        return np.asarray(self.func(u), dtype=float).reshape(u.shape[:-1] + (self.n,))
