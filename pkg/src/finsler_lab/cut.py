"""Cut values of orthogonal geodesics and samples of the cut locus.

A normal geodesic stops minimizing the distance from ``P`` once some other
point of ``P`` reaches it faster. Two independent detectors look for that:

* competitor search: every minimizer from ``P`` is itself an orthogonal
  geodesic, so a meeting ``gamma_v(t) = gamma_w(s)`` with ``s <= t`` and
  ``w != v`` certifies ``d(P, gamma_v(t)) <= s``; the earliest such ``t``
  over a fan of orthogonal geodesics is exact up to ODE tolerance;
* oracle scan: ``t - d_P(gamma_v(t))`` is compared with the grid oracle's
  error bound and the first sustained violation is bracketed by bisection.

The reported value is the earlier of the two.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .crossing import Polyline, SegmentHash, chord_times, refine_meeting, segment_distance
from .distance import DistanceField
from .geodesic import GeodesicPath, shoot
from .metric import FinslerMetric
from .normal import NormalVector, sample_unit_normals
from .submanifold import Submanifold

SAMPLES_PER_HORIZON = 400
MEET_TOL = 1e-9
LENGTH_SLACK = 1e-7
VIOLATION_FACTOR = 3.0
SAME_NORMAL_TOL = 1e-9


@dataclass(eq=False)
class CutResult:
    normal: NormalVector
    value: float
    horizon: float
    width: float
    point: np.ndarray | None
    method: str
    truncated: bool = False
    competitor: tuple | None = None
    error: str | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


class NormalFan:
    """Orthogonal geodesics from a sample of the unit cone of ``P``, shot once."""

    def __init__(self, metric: FinslerMetric, sub: Submanifold, horizon: float,
                 foot_resolution: int = 64, sphere_resolution: int = 32, normals=None):
        self.metric = metric
        self.sub = sub
        self.horizon = float(horizon)
        if normals is None:
            normals = sample_unit_normals(metric, sub, sub.sample_parameters(foot_resolution), sphere_resolution)
        self.normals = list(normals)
        self.step = self.horizon / SAMPLES_PER_HORIZON
        self.paths = [shoot(metric, nv.base, nv.vector, self.horizon) for nv in self.normals]
        self.lines = [Polyline.from_path(p, self.step) for p in self.paths]
        seg_len = max(float(np.max(np.linalg.norm(np.diff(l.points, axis=0), axis=-1))) for l in self.lines)
        self.sag = max(l.sag for l in self.lines)
        self.cell = 1.01 * seg_len + 4 * self.sag + 1e-12
        self.hash = SegmentHash(self.lines, self.cell, pad=2 * self.sag + 1e-12)
        self.start_tol = 1e-9 * self.horizon

    def _same(self, p0, v0, p1, v1) -> bool:
        # normals recomputed in another batch agree only up to roundoff
        scale = self.metric.chart.diameter
        return bool(np.linalg.norm(p0 - p1) <= SAME_NORMAL_TOL * scale
                    and np.linalg.norm(v0 - v1) <= SAME_NORMAL_TOL * max(1.0, float(np.linalg.norm(v0))))

    def path_for(self, normal: NormalVector) -> GeodesicPath:
        for nv, path in zip(self.normals, self.paths):
            if self._same(nv.base, nv.vector, normal.base, normal.vector):
                return path
        return shoot(self.metric, normal.base, normal.vector, self.horizon)

    def earliest_competitor(self, path: GeodesicPath, t_stop: float):
        """Earliest ``(t, s, fan index)`` with ``gamma(t) = gamma_w(s)``, ``s <= t``, ``w != v``."""
        line = Polyline.from_path(path, self.step, t_stop)
        qi, si = self.hash.query(line.points[:-1], line.points[1:])
        if len(qi) == 0:
            return None
        owner = self.hash.owner[si]
        seg = self.hash.seg[si]
        B0 = np.stack([self.lines[o].points[s] for o, s in zip(owner, seg)])
        B1 = np.stack([self.lines[o].points[s + 1] for o, s in zip(owner, seg)])
        dist, fa, fb = segment_distance(line.points[qi], line.points[qi + 1], B0, B1)
        close = dist <= line.sag + self.sag + 1e-12 * self.horizon
        if not np.any(close):
            return None
        qi, owner, seg, fa, fb = qi[close], owner[close], seg[close], fa[close], fb[close]
        ta = chord_times(line, qi, fa)
        tb = np.array([chord_times(self.lines[o], np.array([s]), np.array([f]))[0]
                       for o, s, f in zip(owner, seg, fb)])
        order = np.argsort(ta, kind="stable")
        slack = 4 * self.step
        best = None
        for j in order:
            if best is not None and ta[j] > best[0] + slack:
                break
            other = self.paths[owner[j]]
            if self._same(other.p0, other.v0, path.p0, path.v0):
                continue
            t, s, res = refine_meeting(path, other, float(ta[j]), float(tb[j]), MEET_TOL * self.horizon)
            if res > MEET_TOL * self.horizon * 10:
                continue
            if t <= self.start_tol and s <= self.start_tol:
                continue
            if t > t_stop or s > t + LENGTH_SLACK:
                continue
            if best is None or t < best[0]:
                best = (t, s, int(owner[j]))
        return best


def _oracle_deficit(field: DistanceField, path: GeodesicPath, t):
    q = path.position(t)
    inside = field.graph.contains(q)
    deficit = np.full(np.shape(t), np.nan)
    if np.any(inside):
        d = field.distance(q[inside])
        deficit[inside] = np.asarray(t)[inside] - d
    return deficit


def oracle_cut(field: DistanceField, path: GeodesicPath, t_stop: float, tol: float, coarse: int = 64):
    """First sustained oracle violation, bracketed to ``tol``; ``None`` if none."""
    ts = np.linspace(0.0, t_stop, coarse + 1)[1:]
    deficit = _oracle_deficit(field, path, ts)
    thr = VIOLATION_FACTOR * field.error_bound(ts)
    viol = deficit > thr
    for k in range(len(ts) - 1):
        if np.isnan(deficit[k]):
            break
        if viol[k] and viol[k + 1]:
            lo = ts[k - 1] if k else 0.0
            hi = ts[k]
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                dm = _oracle_deficit(field, path, np.array([mid]))[0]
                if dm > VIOLATION_FACTOR * field.error_bound(mid):
                    hi = mid
                else:
                    lo = mid
            return lo, hi
    return None


def cut_value(metric: FinslerMetric, sub: Submanifold, normal: NormalVector, horizon: float,
              tol: float = 1e-3, field: DistanceField | None = None, fan: NormalFan | None = None) -> CutResult:
    """Estimate the cut value of a unit normal.

    ``fan`` defaults to 64 feet (32 sphere directions) over the whole of ``P``;
    without ``field`` only the competitor search runs.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if fan is None:
        fan = NormalFan(metric, sub, horizon)
    path = fan.path_for(normal)
    t_stop = min(path.t_end, horizon)
    truncated = path.exited and path.t_end < horizon
    best = fan.earliest_competitor(path, t_stop)
    oracle = oracle_cut(field, path, t_stop, tol) if field is not None else None

    if best is not None and (oracle is None or best[0] <= oracle[1]):
        t, s, owner = best
        width = 2 * LENGTH_SLACK
        return CutResult(normal, t, t_stop, width, path.position(t), "competitor", truncated,
                         competitor=(fan.normals[owner], s))
    if oracle is not None:
        lo, hi = oracle
        return CutResult(normal, hi, t_stop, hi - lo, path.position(hi), "oracle", truncated)
    return CutResult(normal, math.inf, t_stop, 0.0, None, "none", truncated)


def sample_cut_locus(metric: FinslerMetric, sub: Submanifold, resolution: int, horizon: float,
                     tol: float = 1e-3, field: DistanceField | None = None, side: str | None = None,
                     fan: NormalFan | None = None, params=None, workers: int = 1):
    """Cut values over a sample of the unit cone; failures are attached, never raised.

    ``workers > 1`` maps the samples over a thread pool; the output order is the sample order.
    """
    if fan is None:
        fan = NormalFan(metric, sub, horizon, foot_resolution=max(resolution, 64), sphere_resolution=max(resolution, 32))
    if params is None:
        params = sub.sample_parameters(resolution)
    normals = sample_unit_normals(metric, sub, params, resolution, side)

    def one(nv):
        try:
            return nv, cut_value(metric, sub, nv, horizon, tol, field, fan)
        except Exception as exc:  # noqa: BLE001 - recorded per sample
            return nv, CutResult(nv, math.nan, horizon, math.nan, None, "error", error=repr(exc))

    return parallel_map(one, normals, workers)


def parallel_map(func, items, workers: int = 1) -> list:
    if workers <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
