"""Finsler metrics on a single coordinate chart.

Every metric exposes vectorized, unchecked kernels (leading axes broadcast,
last axis is the coordinate index) used by the integrators and the distance
oracle, plus checked public methods for single evaluations.

The Lagrangian is ``L = F**2 / 2``. Its fiber gradient is the Legendre
transform, its fiber Hessian is the fundamental tensor, and its spatial
derivatives drive the geodesic spray.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, DomainError, NonConvexMetricError

FD_GRADIENT_STEP = 1e-5
FD_HESSIAN_STEP = 1e-4
FD_SPATIAL_STEP = 1e-5
ZERO_THRESHOLD = 1e-12


@dataclass(frozen=True, eq=False)
class Chart:
    """Axis-aligned open box in coordinate space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise DomainError("chart bounds have different lengths")
        if lower.size < 2:
            raise DomainError("chart dimension must be at least 2")
        if not np.all(lower < upper):
            raise DomainError(f"empty chart box: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def box(cls, n: int, low: float, high: float) -> "Chart":
        return cls(np.full(n, float(low)), np.full(n, float(high)))

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.all((p > self.lower) & (p < self.upper), axis=-1)

    def check(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.dimension:
            raise DomainError(
                f"point has {p.shape[-1]} components, chart dimension is {self.dimension}"
            )
        if not np.all(self.contains(p)):
            raise DomainError(f"point outside chart domain: {p}")
        return p

    def contains_box(self, lower, upper) -> bool:
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return bool(np.all(lower >= self.lower) and np.all(upper <= self.upper))


# --------------------------------------------------------------------------
# coefficient fields


class TensorField:
    """Symmetric matrix field ``p -> A(p)``.

    ``gradient`` returns ``dA[..., i, j, k] = d A_ij / d x_k``. The default
    implementation differentiates ``__call__`` by central differences.
    """

    constant = False

    def __call__(self, p):
        raise NotImplementedError

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        n = p.shape[-1]
        h = FD_SPATIAL_STEP * np.maximum(np.linalg.norm(p, axis=-1), 1.0)[..., None]
        cols = []
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            cols.append((self(p + h * e) - self(p - h * e)) / (2 * h[..., None]))
        return np.stack(cols, axis=-1)


class ConstantTensor(TensorField):
    constant = True

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("tensor must be a square matrix")
        if not np.allclose(matrix, matrix.T, atol=1e-14):
            raise ValueError("tensor must be symmetric")
        if np.linalg.eigvalsh(matrix).min() <= 0:
            raise NonConvexMetricError("tensor must be positive-definite")
        self.matrix = matrix

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.matrix, p.shape[:-1] + self.matrix.shape)

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        n = self.matrix.shape[0]
        return np.zeros(p.shape[:-1] + (n, n, n))


class StereographicSphere(TensorField):
    """Round sphere of given radius seen through stereographic projection.

    The chart origin is the north pole and the circle of radius ``radius``
    is the equator; the conformal factor is ``4 R^4 / (R^2 + |x|^2)^2``.
    """

    def __init__(self, radius: float = 1.0):
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        self.radius = float(radius)

    def factor(self, p):
        r2 = self.radius**2
        return 4 * r2**2 / (r2 + np.sum(p * p, axis=-1)) ** 2

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        n = p.shape[-1]
        return self.factor(p)[..., None, None] * np.eye(n)

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        n = p.shape[-1]
        r2 = self.radius**2
        dlam = -16 * r2**2 * p / (r2 + np.sum(p * p, axis=-1))[..., None] ** 3
        return np.eye(n)[..., None] * dlam[..., None, None, :]


class CallableTensor(TensorField):
    def __init__(self, func, gradient=None):
        self.func = func
        self._gradient = gradient

    def __call__(self, p):
        return np.asarray(self.func(np.asarray(p, dtype=float)), dtype=float)

    def gradient(self, p):
        if self._gradient is None:
            return super().gradient(p)
        return np.asarray(self._gradient(np.asarray(p, dtype=float)), dtype=float)


class OneForm:
    """Covector field ``p -> b(p)``; ``gradient[..., i, k] = d b_i / d x_k``."""

    constant = False

    def __call__(self, p):
        raise NotImplementedError

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        n = p.shape[-1]
        h = FD_SPATIAL_STEP * np.maximum(np.linalg.norm(p, axis=-1), 1.0)[..., None]
        cols = []
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            cols.append((self(p + h * e) - self(p - h * e)) / (2 * h))
        return np.stack(cols, axis=-1)


class ConstantOneForm(OneForm):
    constant = True

    def __init__(self, components):
        self.components = np.asarray(components, dtype=float).reshape(-1)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.components, p.shape[:-1] + self.components.shape)

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        n = self.components.size
        return np.zeros(p.shape[:-1] + (n, n))


class CallableOneForm(OneForm):
    def __init__(self, func, gradient=None):
        self.func = func
        self._gradient = gradient

    def __call__(self, p):
        return np.asarray(self.func(np.asarray(p, dtype=float)), dtype=float)

    def gradient(self, p):
        if self._gradient is None:
            return super().gradient(p)
        return np.asarray(self._gradient(np.asarray(p, dtype=float)), dtype=float)


def as_tensor_field(value) -> TensorField:
    if isinstance(value, TensorField):
        return value
    if callable(value):
        return CallableTensor(value)
    return ConstantTensor(value)


def as_one_form(value) -> OneForm:
    if isinstance(value, OneForm):
        return value
    if callable(value):
        return CallableOneForm(value)
    return ConstantOneForm(value)


# --------------------------------------------------------------------------
# metrics


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


class FinslerMetric:
    """Base class; subclasses implement ``_norm`` and optionally analytic jets."""

    differentiation = "fd"
    translation_invariant = False
    reversible = False

    def __init__(self, chart: Chart):
        self.chart = chart

    @property
    def dimension(self) -> int:
        return self.chart.dimension

    # --- kernels (vectorized, no domain checks) ---------------------------

    def _norm(self, p, v):
        raise NotImplementedError

    def _lagrangian(self, p, v):
        return 0.5 * self._norm(p, v) ** 2

    def fiber_gradient(self, p, v):
        """Vectorized ``dL/dv`` (the Legendre transform as components)."""
        return self._fd_fiber_gradient(p, v)

    def fiber_hessian(self, p, v):
        """Vectorized fundamental tensor ``g_v``."""
        return self._fd_fiber_hessian(p, v)

    def spatial_terms(self, p, v):
        """Return ``(dL/dx, d2L/dv dx)`` with ``[..., i, k] = d2L/dv_i dx_k``."""
        return self._fd_spatial_terms(p, v)

    def _fd_fiber_gradient(self, p, v):
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        n = v.shape[-1]
        h = FD_GRADIENT_STEP * np.maximum(np.linalg.norm(v, axis=-1), 1.0)
        out = np.empty(v.shape)
        for i in range(n):
            e = h[..., None] * _unit(n, i)
            out[..., i] = (self._lagrangian(p, v + e) - self._lagrangian(p, v - e)) / (2 * h)
        return out

    def _fd_fiber_hessian(self, p, v):
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        n = v.shape[-1]
        h = FD_HESSIAN_STEP * np.maximum(np.linalg.norm(v, axis=-1), 1.0)
        L0 = self._lagrangian(p, v)
        out = np.empty(v.shape + (n,))
        for i in range(n):
            ei = h[..., None] * _unit(n, i)
            out[..., i, i] = (
                self._lagrangian(p, v + ei) - 2 * L0 + self._lagrangian(p, v - ei)
            ) / h**2
            for j in range(i + 1, n):
                ej = h[..., None] * _unit(n, j)
                val = (
                    self._lagrangian(p, v + ei + ej)
                    - self._lagrangian(p, v + ei - ej)
                    - self._lagrangian(p, v - ei + ej)
                    + self._lagrangian(p, v - ei - ej)
                ) / (4 * h**2)
                out[..., i, j] = val
                out[..., j, i] = val
        return out

    def _fd_spatial_terms(self, p, v):
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        n = p.shape[-1]
        h = FD_SPATIAL_STEP * np.maximum(np.linalg.norm(p, axis=-1), 1.0)
        grad = np.empty(p.shape)
        mixed = np.empty(p.shape + (n,))
        for k in range(n):
            e = h[..., None] * _unit(n, k)
            grad[..., k] = (self._lagrangian(p + e, v) - self._lagrangian(p - e, v)) / (2 * h)
            mixed[..., :, k] = (
                self.fiber_gradient(p + e, v) - self.fiber_gradient(p - e, v)
            ) / (2 * h[..., None])
        return grad, mixed

    def geodesic_acceleration(self, p, v):
        """Solve the Euler-Lagrange system ``g_v a = dL/dx - (d2L/dv dx) v``."""
        g = self.fiber_hessian(p, v)
        grad, mixed = self.spatial_terms(p, v)
        rhs = grad - np.einsum("...ik,...k->...i", mixed, v)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise NonConvexMetricError(
                "fundamental tensor is not positive-definite along the path"
            ) from exc
        return np.linalg.solve(g, rhs[..., None])[..., 0]

    # --- checked public API ---------------------------------------------

    def zero_threshold(self) -> float:
        return ZERO_THRESHOLD * self.chart.diameter

    def _check_vector(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dimension:
            raise DomainError(f"vector has {v.shape[-1]} components, expected {self.dimension}")
        if np.any(np.linalg.norm(v, axis=-1) < self.zero_threshold()):
            raise DegenerateVectorError("vector is below the zero threshold")
        return v

    def evaluate(self, p, v):
        """``F(p, v)``; zero vectors return 0."""
        p = self.chart.check(p)
        v = np.asarray(v, dtype=float)
        value = self._norm(p, v)
        zero = np.linalg.norm(v, axis=-1) == 0
        value = np.where(zero, 0.0, value)
        return float(value) if np.ndim(value) == 0 else value

    def fundamental_tensor(self, p, v):
        """Half-Hessian of ``F**2`` in the fiber at ``v`` (symmetric, positive-definite)."""
        p = self.chart.check(p)
        v = self._check_vector(v)
        g = self.fiber_hessian(p, v)
        if np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2))).min() <= 0:
            raise NonConvexMetricError(f"fundamental tensor not positive-definite at p={p}, v={v}")
        return g

    def __repr__(self):
        return f"{type(self).__name__}(dimension={self.dimension}, differentiation={self.differentiation!r})"


class RiemannianMetric(FinslerMetric):
    """``F(p, v) = sqrt(v^T G(p) v)``."""

    reversible = True

    def __init__(self, chart: Chart, tensor, differentiation: str = "analytic"):
        super().__init__(chart)
        self.tensor = as_tensor_field(tensor)
        self.differentiation = _check_backend(differentiation)
        self.translation_invariant = self.tensor.constant

    def _norm(self, p, v):
        G = self.tensor(p)
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, G, v))

    def fiber_gradient(self, p, v):
        if self.differentiation == "fd":
            return self._fd_fiber_gradient(p, v)
        return np.einsum("...ij,...j->...i", self.tensor(p), v)

    def fiber_hessian(self, p, v):
        if self.differentiation == "fd":
            return self._fd_fiber_hessian(p, v)
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        return np.array(self.tensor(p), dtype=float)

    def spatial_terms(self, p, v):
        if self.differentiation == "fd":
            return self._fd_spatial_terms(p, v)
        dG = self.tensor.gradient(p)
        grad = 0.5 * np.einsum("...i,...ijk,...j->...k", v, dG, v)
        mixed = np.einsum("...ijk,...j->...ik", dG, v)
        return grad, mixed


class RandersMetric(FinslerMetric):
    """``F(p, v) = sqrt(v^T A(p) v) + b(p) . v`` with ``|b|_A < 1``."""

    def __init__(self, chart: Chart, a, b, differentiation: str = "analytic", audit_samples: int = 7):
        super().__init__(chart)
        self.a = as_tensor_field(a)
        self.b = as_one_form(b)
        self.differentiation = _check_backend(differentiation)
        self.translation_invariant = self.a.constant and self.b.constant
        self.reversible = self.b.constant and not np.any(self.b.components)
        worst = self.max_drift_norm(audit_samples)
        if not worst < 1.0:
            raise NonConvexMetricError(
                f"Randers one-form has A-norm {worst:.6g} >= 1; F would not be positive"
            )

    def max_drift_norm(self, per_axis: int = 7) -> float:
        """Largest sampled ``sqrt(b^T A^{-1} b)`` over a grid of the chart."""
        axes = [np.linspace(lo, hi, per_axis + 2)[1:-1] for lo, hi in zip(self.chart.lower, self.chart.upper)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)
        A = self.a(pts)
        b = self.b(pts)
        sol = np.linalg.solve(A, b[..., None])[..., 0]
        return float(np.sqrt(np.max(np.einsum("...i,...i->...", b, sol))))

    def _norm(self, p, v):
        A = self.a(p)
        alpha = np.sqrt(np.einsum("...i,...ij,...j->...", v, A, v))
        return alpha + np.einsum("...i,...i->...", self.b(p), v)

    def _parts(self, p, v):
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        A = self.a(p)
        b = self.b(p)
        Av = np.einsum("...ij,...j->...i", A, v)
        alpha = np.sqrt(np.einsum("...i,...i->...", v, Av))
        F = alpha + np.einsum("...i,...i->...", b, v)
        Fv = Av / alpha[..., None] + b
        return p, v, A, Av, alpha, F, Fv

    def fiber_gradient(self, p, v):
        if self.differentiation == "fd":
            return self._fd_fiber_gradient(p, v)
        _, _, _, _, _, F, Fv = self._parts(p, v)
        return F[..., None] * Fv

    def fiber_hessian(self, p, v):
        if self.differentiation == "fd":
            return self._fd_fiber_hessian(p, v)
        _, _, A, Av, alpha, F, Fv = self._parts(p, v)
        a = alpha[..., None, None]
        Fvv = A / a - np.einsum("...i,...j->...ij", Av, Av) / a**3
        return np.einsum("...i,...j->...ij", Fv, Fv) + F[..., None, None] * Fvv

    def spatial_terms(self, p, v):
        if self.differentiation == "fd":
            return self._fd_spatial_terms(p, v)
        p, v, A, Av, alpha, F, Fv = self._parts(p, v)
        dA = self.a.gradient(p)
        db = self.b.gradient(p)
        dAv = np.einsum("...ijk,...j->...ik", dA, v)  # (d_k A) v
        vdAv = np.einsum("...i,...ik->...k", v, dAv)
        Fx = vdAv / (2 * alpha[..., None]) + np.einsum("...ik,...i->...k", db, v)
        Fvx = (
            dAv / alpha[..., None, None]
            - np.einsum("...i,...k->...ik", Av, vdAv) / (2 * alpha[..., None, None] ** 3)
            + db
        )
        grad = F[..., None] * Fx
        mixed = np.einsum("...i,...k->...ik", Fv, Fx) + F[..., None, None] * Fvx
        return grad, mixed


class MinkowskiMetric(FinslerMetric):
    """Position-independent norm ``F(p, v) = norm(v)``; fiber derivatives by finite differences."""

    translation_invariant = True

    def __init__(self, chart: Chart, norm, reversible: bool = False):
        super().__init__(chart)
        self.norm = norm
        self.reversible = reversible

    def _norm(self, p, v):
        v = np.asarray(v, dtype=float)
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.norm(v), np.broadcast_shapes(p.shape, v.shape)[:-1])

    def spatial_terms(self, p, v):
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        return np.zeros(p.shape), np.zeros(p.shape + (p.shape[-1],))


class CustomMetric(FinslerMetric):
    """Arbitrary ``F(p, v)`` given as a vectorized callable; always finite differences.

    Positive-definiteness is audited where the tensor is used, not assumed.
    """

    def __init__(self, chart: Chart, func):
        super().__init__(chart)
        self.func = func

    def _norm(self, p, v):
        return np.asarray(self.func(np.asarray(p, float), np.asarray(v, float)), dtype=float)


class ReversedMetric(FinslerMetric):
    """``F~(p, v) = F(p, -v)``."""

    def __init__(self, base: FinslerMetric):
        super().__init__(base.chart)
        self.base = base
        self.differentiation = base.differentiation
        self.translation_invariant = base.translation_invariant
        self.reversible = base.reversible

    def _norm(self, p, v):
        return self.base._norm(p, -np.asarray(v, dtype=float))

    def fiber_gradient(self, p, v):
        return -self.base.fiber_gradient(p, -np.asarray(v, dtype=float))

    def fiber_hessian(self, p, v):
        return self.base.fiber_hessian(p, -np.asarray(v, dtype=float))

    def spatial_terms(self, p, v):
        grad, mixed = self.base.spatial_terms(p, -np.asarray(v, dtype=float))
        return grad, -mixed


def _check_backend(name: str) -> str:
    if name not in ("analytic", "fd"):
        raise ValueError(f"unknown differentiation backend {name!r}")
    return name


def euclidean(chart: Chart) -> RiemannianMetric:
    return RiemannianMetric(chart, np.eye(chart.dimension))


def reverse(metric: FinslerMetric) -> FinslerMetric:
    """Reverse metric; reversing twice returns the original object."""
    if isinstance(metric, ReversedMetric):
        return metric.base
    return ReversedMetric(metric)


def reversibility_constant(metric: FinslerMetric, region, samples: int) -> float:
    """Sampled maximum of ``F(p, -v) / F(p, v)`` over unit directions.

    ``samples`` directions are swept at the region centre (and, for more than
    one sample, at 16 further Halton points). In two dimensions the sweep
    starts at angle pi/2 and is uniform.
    """
    lower, upper = (np.asarray(b, dtype=float) for b in region)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not np.all(lower < upper):
        raise DomainError("empty region")
    if not metric.chart.contains_box(lower, upper):
        raise DomainError("region is not inside the chart")
    n = metric.dimension
    points = [0.5 * (lower + upper)]
    if samples > 1:
        from scipy.stats import qmc

        unit_pts = qmc.Halton(d=n, scramble=False).random(17)[1:]
        points.extend(lower + unit_pts * (upper - lower))
    points = np.array(points)
    if n == 2:
        theta = np.pi / 2 + 2 * np.pi * np.arange(samples) / samples
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((samples, n))
        dirs[0] = _unit(n, 1)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    P = points[:, None, :]
    V = dirs[None, :, :]
    ratio = metric._norm(P, -V) / metric._norm(P, V)
    return float(np.max(ratio))
