"""Legendre transform, annihilators and the orthogonal cone of a submanifold.

Unit orthogonal vectors are produced through covector space: the unit
sphere of the annihilator of ``T_pP`` is parametrized linearly, each
covector is pulled back by the inverse Legendre transform and the result is
rescaled to ``F = 1``. All nonlinearity lives in :func:`legendre_inverse`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import ConditioningError, DegenerateVectorError, DomainError, InversionError
from .geodesic import shoot
from .metric import FinslerMetric
from .submanifold import Submanifold

NEWTON_MAX_ITER = 50
NEWTON_TARGET = 1e-13
NEWTON_ACCEPT = 1e-10


@dataclass(frozen=True, eq=False)
class Covector:
    base: np.ndarray
    components: np.ndarray

    def __call__(self, w) -> float:
        return float(np.dot(self.components, w))


@dataclass(frozen=True, eq=False)
class NormalVector:
    """Element of the orthogonal cone with its foot parameter.

    ``side`` is ``"+"``/``"-"`` for hypersurfaces and ``None`` otherwise;
    ``direction`` holds the annihilator-sphere coordinates of its covector.
    """

    base: np.ndarray
    vector: np.ndarray
    u: np.ndarray
    side: str | None = None
    direction: np.ndarray | None = None

    def scaled(self, factor: float) -> "NormalVector":
        return NormalVector(self.base, factor * self.vector, self.u, self.side, self.direction)


def legendre(metric: FinslerMetric, p, v) -> Covector:
    """``L(v) = g_v(v, .)``."""
    p = metric.chart.check(np.asarray(p, dtype=float))
    v = metric._check_vector(v)
    return Covector(p, metric.fiber_gradient(p, v))


def _solve(g, r):
    return np.linalg.solve(g, r[..., None])[..., 0]


def legendre_inverse_batch(metric: FinslerMetric, P, XI) -> np.ndarray:
    """Vectorized damped Newton inversion of the Legendre transform.

    Raises :class:`InversionError` carrying the first offending covector.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    XI = np.atleast_2d(np.asarray(XI, dtype=float))
    P, XI = np.broadcast_arrays(P, XI)
    xn = np.linalg.norm(XI, axis=-1)
    if np.any(xn == 0):
        raise DegenerateVectorError("cannot invert the zero covector")
    direction = XI / xn[:, None]
    V = _solve(metric.fiber_hessian(P, direction), XI)

    def residual(V):
        return np.linalg.norm(metric.fiber_gradient(P, V) - XI, axis=-1) / xn

    res = residual(V)
    for _ in range(NEWTON_MAX_ITER):
        active = res > NEWTON_TARGET
        if not np.any(active):
            break
        Pa, Va, Xa = P[active], V[active], XI[active]
        step = _solve(metric.fiber_hessian(Pa, Va), metric.fiber_gradient(Pa, Va) - Xa)
        ra = res[active]
        lam = np.ones(len(Va))
        best_V, best_r = Va.copy(), ra.copy()
        pending = np.ones(len(Va), dtype=bool)
        for _ in range(30):
            trial = Va - lam[:, None] * step
            ok = np.linalg.norm(trial, axis=-1) > 0
            r_trial = np.full(len(Va), np.inf)
            r_trial[ok] = (
                np.linalg.norm(metric.fiber_gradient(Pa[ok], trial[ok]) - Xa[ok], axis=-1)
                / xn[active][ok]
            )
            accept = pending & (r_trial < (1 - 1e-4 * lam) * ra)
            best_V[accept] = trial[accept]
            best_r[accept] = r_trial[accept]
            pending &= ~accept
            if not np.any(pending):
                break
            lam[pending] *= 0.5
        stalled = np.zeros(len(res), dtype=bool)
        stalled[np.flatnonzero(active)[pending]] = True
        V[active] = best_V
        res[active] = best_r
        if np.all(stalled | (res <= NEWTON_TARGET)):
            break
    bad = np.flatnonzero(~(res <= NEWTON_ACCEPT))
    if bad.size:
        i = bad[0]
        raise InversionError(
            f"Legendre inversion did not converge (residual {res[i]:.3g})",
            covector=Covector(P[i], XI[i]),
        )
    return V


def legendre_inverse(metric: FinslerMetric, xi) -> np.ndarray:
    """Tangent vector ``v`` with ``L(v) = xi``; ``xi`` is a :class:`Covector` or ``(p, components)``."""
    if isinstance(xi, Covector):
        p, comps = xi.base, xi.components
    else:
        p, comps = xi
    p = metric.chart.check(np.asarray(p, dtype=float))
    return legendre_inverse_batch(metric, p[None], np.asarray(comps, dtype=float)[None])[0]


def _annihilator_rows(T: np.ndarray) -> np.ndarray:
    """Orthonormal annihilator basis (rows) of the column span of ``T`` (n x k).

    For ``k = n - 1`` the single row is oriented so that ``det[xi, T] > 0``.
    """
    n, k = T.shape
    if k == 0:
        return np.eye(n)
    _, sv, vh = np.linalg.svd(T.T)
    rows = vh[k:].copy()
    if k == n - 1:
        if np.linalg.det(np.column_stack([rows[0], T])) < 0:
            rows[0] = -rows[0]
    return rows


def annihilator_basis(sub: Submanifold, u) -> list[Covector]:
    """Euclidean-orthonormal basis of the covectors vanishing on ``T_{p(u)} P``."""
    u = sub.check_parameter(u)
    T = sub.check_immersion(u)
    p = sub.point(u)
    return [Covector(p, row) for row in _annihilator_rows(T)]


def sphere_directions(dim: int, resolution: int) -> np.ndarray:
    """Deterministic points on the unit sphere of ``R^dim`` (rows)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * np.pi * np.arange(resolution) / resolution
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if dim == 3:
        i = np.arange(resolution) + 0.5
        z = 1 - 2 * i / resolution
        phi = np.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((resolution, dim))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def sample_unit_normals(metric: FinslerMetric, sub: Submanifold, params, resolution: int = 32,
                        side: str | None = None) -> list[NormalVector]:
    """Unit orthogonal vectors at every foot parameter in ``params``.

    ``side`` filters hypersurface normals to ``"+"`` or ``"-"``.
    """
    params = np.asarray(params, dtype=float)
    params = params.reshape(-1, sub.k) if sub.k else params.reshape(max(1, len(np.atleast_2d(params))), 0)
    d = sub.n - sub.k
    coeffs = sphere_directions(d, resolution)
    feet, covs, meta = [], [], []
    for u in params:
        u = sub.check_parameter(u)
        rows = _annihilator_rows(sub.check_immersion(u))
        p = sub.point(u)
        for c in coeffs:
            label = None
            if d == 1:
                label = "+" if c[0] > 0 else "-"
                if side is not None and label != side:
                    continue
            feet.append(p)
            covs.append(c @ rows)
            meta.append((u, label, c))
    if not feet:
        return []
    P = np.array(feet)
    metric.chart.check(P)
    V = legendre_inverse_batch(metric, P, np.array(covs))
    V = V / metric._norm(P, V)[:, None]
    return [NormalVector(P[i], V[i], u, label, c) for i, (u, label, c) in enumerate(meta)]


def unit_normal_cone(metric: FinslerMetric, sub: Submanifold, u, resolution: int = 32) -> list[NormalVector]:
    """Sample of the unit orthogonal vectors at ``p(u)``; two vectors for a hypersurface."""
    return sample_unit_normals(metric, sub, np.asarray(u, dtype=float).reshape(1, -1), resolution)


def orthogonality_residual(metric: FinslerMetric, sub: Submanifold, normal: NormalVector) -> float:
    """``max_i |g_v(v, T_i)| / (F(v) |T_i|)`` over the tangent basis at the foot."""
    T = sub.tangents(normal.u)
    if T.shape[-1] == 0:
        return 0.0
    xi = metric.fiber_gradient(normal.base, normal.vector)
    F = metric._norm(normal.base, normal.vector)
    return float(np.max(np.abs(xi @ T) / (F * np.linalg.norm(T, axis=0))))


def build_orthogonal_frame(metric: FinslerMetric, p, v, seeds) -> np.ndarray:
    """Gram-Schmidt under ``g_v`` starting from ``E_1 = v``.

    ``seeds`` holds ``n - 1`` vectors (or ``n``, the first being discarded).
    Rows ``E_2..E_n`` of the result are ``g_v``-orthonormal and ``g_v``-orthogonal to ``v``.
    """
    g = metric.fundamental_tensor(p, v)
    v = np.asarray(v, dtype=float)
    n = v.size
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[0] == n:
        seeds = seeds[1:]
    if seeds.shape != (n - 1, n):
        raise ValueError(f"expected {n - 1} seed vectors of length {n}")
    frame = [v]
    for s in seeds:
        scale = np.sqrt(s @ g @ s)
        w = s.copy()
        for e in frame:
            w = w - (w @ g @ e) / (e @ g @ e) * e
        size = np.sqrt(max(w @ g @ w, 0.0))
        if size <= 1e-8 * scale:
            raise ConditioningError("seed vector is nearly dependent on the frame")
        frame.append(w / size)
    return np.array(frame)


def exp_submanifold(metric: FinslerMetric, sub: Submanifold, u, normal: NormalVector, t: float) -> np.ndarray:
    """``gamma_normal(t)``: the normal-exponential evaluation map restricted to one normal."""
    u = sub.check_parameter(u)
    if not np.allclose(sub.point(u), normal.base, atol=1e-12 * metric.chart.diameter):
        raise DomainError("normal is not based at p(u)")
    path = shoot(metric, normal.base, normal.vector, t)
    if path.exited:
        from .errors import HorizonError

        raise HorizonError(f"normal geodesic left the chart at t={path.t_exit:.6g}", path.t_exit)
    return path.position(t)


class NormalVariation:
    """Local chart ``c in R^{n-1} -> (p, unit normal)`` of the unit orthogonal cone around a normal.

    The first ``k`` coordinates move the foot point; the remaining ``n-1-k``
    move the covector along the annihilator sphere.
    """

    def __init__(self, metric: FinslerMetric, sub: Submanifold, normal: NormalVector):
        self.metric = metric
        self.sub = sub
        self.u0 = np.asarray(normal.u, dtype=float).reshape(-1)
        xi0 = metric.fiber_gradient(normal.base, normal.vector)
        self.xi0 = xi0 / np.linalg.norm(xi0)
        rows = _annihilator_rows(sub.tangents(self.u0))
        proj = rows - np.outer(rows @ self.xi0, self.xi0)
        d = rows.shape[0]
        if d > 1:
            _, _, vh = np.linalg.svd(proj)
            self.sphere_dirs = vh[: d - 1]
        else:
            self.sphere_dirs = np.zeros((0, sub.n))
        self.dimension = sub.n - 1

    def __call__(self, c):
        c = np.atleast_2d(np.asarray(c, dtype=float))
        k = self.sub.k
        u = self.u0 + c[:, :k]
        xi = self.xi0 + c[:, k:] @ self.sphere_dirs
        P = self.sub.point(u)
        if k:
            T = self.sub.tangents(u)
            coef = np.linalg.solve(np.einsum("mik,mil->mkl", T, T), np.einsum("mik,mi->mk", T, xi)[..., None])
            xi = xi - np.einsum("mik,mk->mi", T, coef[..., 0])
        V = legendre_inverse_batch(self.metric, P, xi)
        V = V / self.metric._norm(P, V)[:, None]
        return P, V


def closest_foot_point(metric: FinslerMetric, sub: Submanifold, q, samples: int = 4001):
    """Brute-force foot point of ``q`` on ``P`` for a translation-invariant metric.

    The distance is exactly ``F(q - p)`` and the connecting minimizer is the
    straight segment. Returns ``(u, p, initial direction, orthogonality residual)``.
    """
    if not metric.translation_invariant:
        raise ValueError("brute-force foot points need a translation-invariant metric")
    q = np.asarray(q, dtype=float)

    def dist(u):
        u = np.atleast_2d(u)
        return metric._norm(sub.point(u), q - sub.point(u))

    if sub.k == 0:
        u = np.zeros(0)
    else:
        per_axis = max(2, int(round(samples ** (1.0 / sub.k))))
        grid = sub.sample_parameters(per_axis)
        vals = dist(grid)
        i = int(np.argmin(vals))
        u = grid[i]
        if sub.k == 1:
            step = (sub.param_upper[0] - sub.param_lower[0]) / (per_axis - 1)
            lo = max(sub.param_lower[0], u[0] - step)
            hi = min(sub.param_upper[0], u[0] + step)
            res = minimize_scalar(lambda x: float(dist([[x]])[0]), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-13})
            u = np.array([res.x])
        else:
            bounds = list(zip(sub.param_lower, sub.param_upper))
            res = minimize(lambda x: float(dist(x)[0]), u, bounds=bounds, method="L-BFGS-B",
                           options={"ftol": 1e-15, "gtol": 1e-12})
            u = res.x
    p = sub.point(u)
    direction = q - p
    normal = NormalVector(p, direction, u)
    return u, p, direction, orthogonality_residual(metric, sub, normal)
