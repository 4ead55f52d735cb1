"""Meeting points of sampled geodesics.

Geodesics are sampled as polylines; a spatial hash proposes nearby segment
pairs, the chord geometry filters them, and Gauss-Newton on the dense ODE
output refines every surviving pair to an actual meeting ``gamma_a(t) =
gamma_b(s)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geodesic import GeodesicPath


@dataclass(eq=False)
class Polyline:
    """Uniform samples of a geodesic on ``[0, t_stop]`` with chord sag estimate."""

    path: GeodesicPath
    times: np.ndarray
    points: np.ndarray
    sag: float

    @classmethod
    def from_path(cls, path: GeodesicPath, step: float, t_stop: float | None = None) -> "Polyline":
        t_stop = path.t_end if t_stop is None else min(t_stop, path.t_end)
        count = max(2, int(np.ceil(t_stop / step)) + 1)
        times = np.linspace(0.0, t_stop, count)
        points = path.position(times)
        mid = path.position(0.5 * (times[1:] + times[:-1]))
        sag = float(np.max(np.linalg.norm(mid - 0.5 * (points[1:] + points[:-1]), axis=-1)))
        return cls(path, times, points, sag)


def segment_distance(A0, A1, B0, B1):
    """Closest points of segment pairs; returns ``(distance, a, b)`` with chord parameters in [0, 1]."""
    d1 = A1 - A0
    d2 = B1 - B0
    r = A0 - B0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    a_pos, e_pos = a > 0, e > 0
    a_safe = np.where(a_pos, a, 1.0)
    e_safe = np.where(e_pos, e, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-14 * a * e, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
    t = (b * s + f) / e_safe
    s = np.where(t < 0, np.clip(-c / a_safe, 0.0, 1.0), np.where(t > 1, np.clip((b - c) / a_safe, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    # zero-length segments degrade to points
    s = np.where(e_pos, s, np.clip(-c / a_safe, 0.0, 1.0))
    t = np.where(e_pos, t, 0.0)
    t = np.where(a_pos, t, np.clip(f / e_safe, 0.0, 1.0))
    s = np.where(a_pos, s, 0.0)
    pa = A0 + s[:, None] * d1
    pb = B0 + t[:, None] * d2
    return np.linalg.norm(pa - pb, axis=-1), s, t


class SegmentHash:
    """Uniform-grid hash of polyline segments (owner index, segment index)."""

    def __init__(self, lines: list[Polyline], cell: float, pad: float = 0.0):
        self.cell = float(cell)
        self.pad = float(pad)
        starts, ends, owner, seg = [], [], [], []
        for i, line in enumerate(lines):
            m = len(line.times) - 1
            starts.append(line.points[:-1])
            ends.append(line.points[1:])
            owner.append(np.full(m, i))
            seg.append(np.arange(m))
        self.A0 = np.concatenate(starts)
        self.A1 = np.concatenate(ends)
        self.owner = np.concatenate(owner)
        self.seg = np.concatenate(seg)
        self.origin = np.minimum(self.A0.min(axis=0), self.A1.min(axis=0)) - 4 * self.cell
        keys, idx = self._keys(self.A0, self.A1, self.pad)
        order = np.argsort(keys, kind="stable")
        self.keys = keys[order]
        self.idx = idx[order]

    def _keys(self, P0, P1, pad):
        lo = np.floor((np.minimum(P0, P1) - pad - self.origin) / self.cell).astype(np.int64)
        hi = np.floor((np.maximum(P0, P1) + pad - self.origin) / self.cell).astype(np.int64)
        span = hi - lo
        if np.any(span > 1):
            raise ValueError("hash cell smaller than a segment")
        n = P0.shape[1]
        keys, idx = [], []
        base = np.arange(len(P0))
        for corner in np.ndindex(*(2,) * n):
            c = np.array(corner)
            ok = np.all(c <= span, axis=1)
            cells = lo[ok] + c
            keys.append(self._encode(cells))
            idx.append(base[ok])
        return np.concatenate(keys), np.concatenate(idx)

    @staticmethod
    def _encode(cells):
        key = np.zeros(len(cells), dtype=np.int64)
        for j in range(cells.shape[1]):
            key = key * 1_000_003 + cells[:, j]
        return key

    def query(self, P0, P1):
        """Candidate pairs ``(query segment, stored segment)`` sharing a cell."""
        keys, qidx = self._keys(P0, P1, 0.0)
        left = np.searchsorted(self.keys, keys, side="left")
        right = np.searchsorted(self.keys, keys, side="right")
        counts = right - left
        q = np.repeat(qidx, counts)
        starts = np.repeat(left, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        stored = self.idx[starts + offs]
        if len(q) == 0:
            return q, stored
        pair = np.unique(np.stack([q, stored], axis=1), axis=0)
        return pair[:, 0], pair[:, 1]


def refine_meeting(pa: GeodesicPath, pb: GeodesicPath, ta: float, tb: float, tol: float, iters: int = 25):
    """Gauss-Newton for ``gamma_a(ta) = gamma_b(tb)``; returns ``(ta, tb, residual)``."""
    best = (ta, tb, np.inf)
    for _ in range(iters):
        sa = pa.flow.state(np.array(ta))[0]
        sb = pb.flow.state(np.array(tb))[0]
        r = sa[0] - sb[0]
        res = float(np.linalg.norm(r))
        if res < best[2]:
            best = (ta, tb, res)
        if res <= tol:
            break
        J = np.column_stack([sa[1], -sb[1]])
        step, *_ = np.linalg.lstsq(J, -r, rcond=1e-12)
        ta = float(np.clip(ta + step[0], 0.0, pa.t_end))
        tb = float(np.clip(tb + step[1], 0.0, pb.t_end))
    return best


def chord_times(line: Polyline, seg: np.ndarray, frac: np.ndarray) -> np.ndarray:
    t = line.times
    return t[seg] + frac * (t[seg + 1] - t[seg])
