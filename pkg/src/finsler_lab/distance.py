"""Directed grid-graph oracle for the non-symmetric distance.

Nodes form a regular grid over a box. Each node links to the nodes at every
primitive integer offset of Chebyshev radius at most ``stencil``; the edge
weight is ``F`` at the edge midpoint applied to the edge displacement.
Sources are attached through a virtual super-node whose edges to the grid
nodes around each source sample carry the local straight-segment cost, so
sources need not sit on nodes.
"""
from __future__ import annotations

import hashlib
import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import linprog
from scipy.sparse.csgraph import dijkstra

from .errors import DomainError
from .metric import FinslerMetric
from .submanifold import Submanifold

DEFAULT_RESOLUTION = 256
DEFAULT_STENCIL = 3
CACHE_MAGIC = b"FLDIST01"


def stencil_offsets(n: int, radius: int) -> np.ndarray:
    """Nonzero integer vectors with entries in ``[-radius, radius]`` and gcd 1."""
    rng = range(-radius, radius + 1)
    out = [o for o in itertools.product(rng, repeat=n) if any(o) and math.gcd(*map(abs, o)) == 1]
    return np.array(out, dtype=int)


class GridGraph:
    """Directed weighted graph on a grid; reusable across source sets."""

    def __init__(self, metric: FinslerMetric, region, resolution=DEFAULT_RESOLUTION, stencil=DEFAULT_STENCIL):
        lower, upper = (np.asarray(b, dtype=float).reshape(-1) for b in region)
        n = metric.dimension
        if lower.size != n or not np.all(lower < upper):
            raise DomainError("invalid oracle region")
        if not metric.chart.contains_box(lower, upper):
            raise DomainError("oracle region must lie inside the chart")
        shape = tuple(np.broadcast_to(np.asarray(resolution, dtype=int), (n,)))
        if min(shape) < 2:
            raise ValueError("resolution must be at least 2 per axis")
        self.metric = metric
        self.lower, self.upper = lower, upper
        self.shape = shape
        self.stencil = int(stencil)
        self.axes = [np.linspace(lo, hi, r) for lo, hi, r in zip(lower, upper, shape)]
        self.h = (upper - lower) / (np.array(shape) - 1)
        self.size = int(np.prod(shape))
        self.offsets = stencil_offsets(n, self.stencil)

        # nodes on the closed boundary are evaluated there; the metric kernels
        # are unchecked, so only region-in-chart matters.
        idx = np.indices(shape).reshape(n, -1).T
        self.coords = lower + idx * self.h
        rows, cols, weights = [], [], []
        for o in self.offsets:
            target = idx + o
            ok = np.all((target >= 0) & (target < np.array(shape)), axis=1)
            src = np.flatnonzero(ok)
            dst = np.ravel_multi_index(target[ok].T, shape)
            disp = o * self.h
            mid = self.coords[src] + 0.5 * disp
            rows.append(src)
            cols.append(dst)
            weights.append(metric._norm(mid, disp))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        weights = np.concatenate(weights)
        order = np.lexsort((cols, rows))
        rows, cols, weights = rows[order], cols[order], weights[order]
        indptr = np.zeros(self.size + 2, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        self._indptr = np.cumsum(indptr)
        self._indices = cols.astype(np.int32)
        self._data = weights
        self.fmax = float(self._fmax(weights, rows, cols))
        self.metrication = self._metrication()

    def _fmax(self, weights, rows, cols):
        disp = self.coords[cols] - self.coords[rows]
        return np.max(weights / np.linalg.norm(disp, axis=1))

    def _sample_points(self) -> np.ndarray:
        c = 0.5 * (self.lower + self.upper)
        half = 0.4 * (self.upper - self.lower)
        corners = np.array(list(itertools.product([-1, 1], repeat=len(c))))
        return np.vstack([c, c + corners * half])

    def _metrication(self) -> float:
        """Upper bound on the relative excess of straight graph paths over ``F``.

        Combines the stencil quantization (exact cone analysis in 2-D, linear
        programs otherwise) with the midpoint-rule error measured on sampled edges.
        """
        metric = self.metric
        pts = self._sample_points()
        disp = self.offsets * self.h
        worst = 0.0
        if len(self.h) == 2:
            ang = np.arctan2(disp[:, 1], disp[:, 0])
            order = np.argsort(ang)
            d_sorted = disp[order]
            e1 = d_sorted
            e2 = np.roll(d_sorted, -1, axis=0)
            s = np.linspace(0.0, 1.0, 65)
            u1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
            u2 = e2 / np.linalg.norm(e2, axis=1, keepdims=True)
            q = (1 - s)[None, :, None] * u1[:, None] + s[None, :, None] * u2[:, None]
            M = np.stack([e1, e2], axis=-1)  # (m, 2, 2)
            coef = np.linalg.solve(M[:, None], q[..., None])[..., 0]
            for p in pts:
                F1 = metric._norm(p, e1)
                F2 = metric._norm(p, e2)
                cost = coef[..., 0] * F1[:, None] + coef[..., 1] * F2[:, None]
                ratio = cost / metric._norm(p, q)
                worst = max(worst, float(np.max(ratio)) - 1.0)
        else:
            rng = np.random.default_rng(0)
            dirs = rng.standard_normal((48, len(self.h)))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            for p in pts[:3]:
                Fe = metric._norm(p, disp)
                for q in dirs:
                    res = linprog(Fe, A_eq=disp.T, b_eq=q, bounds=(0, None), method="highs")
                    if res.success:
                        worst = max(worst, res.fun / float(metric._norm(p, q)) - 1.0)
        # midpoint quadrature error on a deterministic sample of edges
        rng = np.random.default_rng(1)
        pick = rng.integers(0, self._data.size, size=min(4000, self._data.size))
        rows = np.searchsorted(self._indptr, pick, side="right") - 1
        a = self.coords[rows]
        b = self.coords[self._indices[pick]]
        d = b - a
        simpson = (metric._norm(a, d) + 4 * metric._norm(0.5 * (a + b), d) + metric._norm(b, d)) / 6
        quad = float(np.max(np.abs(simpson - self._data[pick]) / self._data[pick]))
        return max(worst, 0.0) + quad

    def csr(self, seed_nodes=None, seed_weights=None) -> sp.csr_matrix:
        """Graph matrix with the super-node (index ``size``) wired to the seeds."""
        indptr = self._indptr.copy()
        data, indices = self._data, self._indices
        if seed_nodes is not None and len(seed_nodes):
            data = np.concatenate([data, seed_weights])
            indices = np.concatenate([indices, seed_nodes.astype(np.int32)])
            indptr[-1] = indptr[-2] + len(seed_nodes)
        return sp.csr_matrix((data, indices, indptr), shape=(self.size + 1, self.size + 1))

    def transpose(self) -> "GridGraph":
        """Graph of the reverse metric: every edge weight moved onto the opposite edge."""
        from .metric import reverse

        twin = object.__new__(GridGraph)
        twin.__dict__.update(self.__dict__)
        twin.metric = reverse(self.metric)
        t = sp.csr_matrix((self._data, self._indices, self._indptr), shape=(self.size + 1, self.size + 1)).T.tocsr()
        t.sort_indices()
        twin._indptr, twin._indices, twin._data = t.indptr.astype(np.int64), t.indices.astype(np.int32), t.data
        twin.metrication = twin._metrication()
        return twin

    def contains(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.all((q >= self.lower - 1e-12) & (q <= self.upper + 1e-12), axis=-1)

    def seeds(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Super-node edges from source samples to the surrounding ``(2 stencil)^n`` nodes."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[1]
        base = np.floor((points - self.lower) / self.h).astype(int)
        window = np.array(list(itertools.product(range(-self.stencil + 1, self.stencil + 1), repeat=n)))
        idx = base[:, None, :] + window[None]
        ok = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=-1)
        src = np.broadcast_to(points[:, None, :], idx.shape)[ok]
        idx = idx[ok]
        nodes = np.ravel_multi_index(idx.T, self.shape)
        node_pts = self.lower + idx * self.h
        w = self.metric._norm(0.5 * (src + node_pts), node_pts - src)
        best = np.full(self.size, np.inf)
        np.minimum.at(best, nodes, w)
        keep = np.flatnonzero(np.isfinite(best))
        return keep, best[keep]


def _submanifold_samples(sub: Submanifold, spacing: float, max_points: int = 200_000) -> np.ndarray:
    """Parameter samples whose images are at most ``spacing`` apart."""
    if sub.k == 0:
        return sub.point(np.zeros((1, 0)))
    pilot = sub.sample_parameters(65)
    counts = []
    for axis in range(sub.k):
        grid = pilot.reshape((65,) * sub.k + (sub.k,))
        pts = sub.point(grid)
        seg = np.linalg.norm(np.diff(pts, axis=axis), axis=-1)
        counts.append(int(np.ceil(np.max(np.sum(seg, axis=axis)) / spacing)) + 2)
    per_axis = max(counts)
    per_axis = min(per_axis, int(max_points ** (1.0 / sub.k)))
    return sub.point(sub.sample_parameters(per_axis))


@dataclass(eq=False)
class DistanceField:
    """Node distances from a source set plus the oracle's error model."""

    graph: GridGraph
    values: np.ndarray
    source_points: np.ndarray

    def __post_init__(self):
        self._interp = RegularGridInterpolator(self.graph.axes, self.values, method="linear", bounds_error=True)
        self._grad_interp = None

    @property
    def step(self) -> float:
        return float(np.max(self.graph.h))

    def distance(self, q):
        q = np.asarray(q, dtype=float)
        if not np.all(self.graph.contains(q)):
            raise DomainError(f"query outside the oracle region: {q}")
        q = np.clip(q, self.graph.lower, self.graph.upper)
        out = self._interp(q.reshape(-1, q.shape[-1])).reshape(q.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def error_bound(self, d):
        """Oracle error model: relative metrication plus two interpolation cells."""
        g = self.graph
        return g.metrication * np.asarray(d) + 2.0 * self.step * g.fmax * (1 + g.metrication)

    def gradient(self, q, spacing: float | None = None):
        """Central-difference gradient of the interpolated field at ``q``."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        h = 2 * self.step if spacing is None else spacing
        n = q.shape[1]
        out = np.empty(q.shape)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out[:, i] = (self.distance(q + e) - self.distance(q - e)) / (2 * h)
        return out


def build_field(metric: FinslerMetric, region, resolution=DEFAULT_RESOLUTION, stencil=DEFAULT_STENCIL,
                sources=None, graph: GridGraph | None = None, values: np.ndarray | None = None) -> DistanceField:
    """Shortest directed distances from ``sources`` (point, points or submanifold).

    ``values`` skips the shortest-path solve (node distances loaded from a cache).
    """
    if graph is None:
        graph = GridGraph(metric, region, resolution, stencil)
    if isinstance(sources, Submanifold):
        pts = _submanifold_samples(sources, 0.5 * float(np.min(graph.h)))
        pts = pts[graph.contains(pts)]
        if not len(pts):
            raise DomainError("submanifold does not meet the oracle region")
    else:
        pts = np.atleast_2d(np.asarray(sources, dtype=float))
        if not np.all(graph.contains(pts)):
            raise DomainError("source outside the oracle region")
    if values is None:
        nodes, weights = graph.seeds(pts)
        dist = dijkstra(graph.csr(nodes, weights), directed=True, indices=graph.size)
        values = dist[: graph.size].reshape(graph.shape)
    return DistanceField(graph, values, pts)


def ball_membership(field_forward: DistanceField, field_backward: DistanceField, r: float, q) -> str:
    """Classify ``q`` against the open forward and backward balls of radius ``r``.

    ``field_forward`` measures ``d(p, .)``; ``field_backward`` is built with the
    reverse metric from the same source and measures ``d(., p)``.
    """
    fwd = field_forward.distance(q) < r
    bwd = field_backward.distance(q) < r
    if fwd and bwd:
        return "both"
    if fwd:
        return "in-forward-ball"
    if bwd:
        return "in-backward-ball"
    return "neither"


def distance_from_submanifold(metric: FinslerMetric, sub: Submanifold, region, q,
                              resolution=DEFAULT_RESOLUTION, stencil=DEFAULT_STENCIL,
                              field: DistanceField | None = None) -> float:
    if field is None:
        field = build_field(metric, region, resolution, stencil, sources=sub)
    return field.distance(q)


# --------------------------------------------------------------------------
# binary cache


def cache_key(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_field_values(path, key: str, values: np.ndarray) -> None:
    """Header (magic, hex key, ndim, shape) then row-major little-endian float64."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    header = CACHE_MAGIC + key.encode("ascii") + struct.pack("<I", values.ndim)
    header += struct.pack(f"<{values.ndim}I", *values.shape)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes(order="C"))
    tmp.replace(path)


def load_field_values(path, key: str) -> np.ndarray | None:
    """Stored values, or ``None`` if missing or keyed differently."""
    path = Path(path)
    if not path.exists():
        return None
    raw = path.read_bytes()
    off = len(CACHE_MAGIC)
    if raw[:off] != CACHE_MAGIC or raw[off:off + 64].decode("ascii", "replace") != key:
        return None
    off += 64
    try:
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        return np.frombuffer(raw, dtype="<f8", offset=off).reshape(shape).copy()
    except (struct.error, ValueError):
        return None
