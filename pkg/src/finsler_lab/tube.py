"""Tubular-radius estimation and verification of the normal exponential tube."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crossing import Polyline, SegmentHash, chord_times, refine_meeting, segment_distance
from .cut import CutResult, NormalFan, cut_value, parallel_map
from .distance import DistanceField
from .errors import DomainError
from .focal import FocalResult, focal_instant
from .geodesic import shoot
from .metric import FinslerMetric
from .normal import NormalVector, sample_unit_normals
from .submanifold import Submanifold

SAFETY_FACTOR = 0.9
COLLISION_FACTOR = 10.0
PARTIAL_FRACTION = 0.01
GRADIENT_FACTOR = 10.0


def check_q_box(sub: Submanifold, lower=None, upper=None) -> tuple[np.ndarray, np.ndarray]:
    """Validate ``Q`` as a sub-box strictly inside the parameter box.

    A periodic axis may span its full period: the closed curve has no boundary.
    """
    lo = sub.param_lower.copy() if lower is None else np.asarray(lower, dtype=float).reshape(-1)
    hi = sub.param_upper.copy() if upper is None else np.asarray(upper, dtype=float).reshape(-1)
    if lo.shape != (sub.k,) or hi.shape != (sub.k,):
        raise DomainError(f"Q must have {sub.k} lower and upper bounds")
    for i in range(sub.k):
        full = np.isclose(lo[i], sub.param_lower[i]) and np.isclose(hi[i], sub.param_upper[i])
        if sub.periodic[i] and full:
            continue
        if not (sub.param_lower[i] < lo[i] < hi[i] < sub.param_upper[i]):
            raise DomainError(f"Q axis {i} [{lo[i]}, {hi[i]}] is not strictly inside "
                              f"[{sub.param_lower[i]}, {sub.param_upper[i]}]")
    return lo, hi


def _q_normals(metric, sub, lower, upper, resolution, sphere_resolution, side):
    lo, hi = check_q_box(sub, lower, upper)
    params = sub.sample_parameters(resolution, lo, hi)
    return lo, hi, sample_unit_normals(metric, sub, params, sphere_resolution, side)


def _normal_record(nv: NormalVector) -> dict:
    return {"base": nv.base.tolist(), "vector": nv.vector.tolist(), "u": np.asarray(nv.u).tolist(), "side": nv.side}


@dataclass(eq=False)
class TubeSample:
    normal: NormalVector
    cut: CutResult | None
    focal: FocalResult | None
    exit_time: float
    error: str | None = None


@dataclass(eq=False)
class TubeReport:
    q_lower: np.ndarray
    q_upper: np.ndarray
    epsilon: float
    epsilon_cut: float
    epsilon_focal: float
    epsilon_domain: float
    horizon: float
    safety: float
    samples: list[TubeSample] = field(repr=False)
    failures: int = 0
    partial: bool = False

    def summary(self) -> dict:
        return {
            "Q": {"lower": self.q_lower.tolist(), "upper": self.q_upper.tolist()},
            "epsilon": self.epsilon,
            "epsilon_cut": self.epsilon_cut,
            "epsilon_focal": self.epsilon_focal,
            "epsilon_domain": self.epsilon_domain,
            "horizon": self.horizon,
            "safety_factor": self.safety,
            "samples": len(self.samples),
            "failures": self.failures,
            "partial": self.partial,
        }


def estimate_tube_radius(metric: FinslerMetric, sub: Submanifold, q_lower=None, q_upper=None,
                         resolution: int = 32, horizon: float = 2.0, tol: float = 1e-3,
                         field: DistanceField | None = None, side: str | None = None,
                         sphere_resolution: int = 32, fan: NormalFan | None = None,
                         safety: float = SAFETY_FACTOR, workers: int = 1) -> TubeReport:
    """``eps = safety * min(eps_cut, eps_focal, eps_domain)`` over sampled unit normals of ``Q``.

    Exceeds-horizon samples do not bound ``eps_cut``/``eps_focal``; ``eps_domain``
    is the earliest chart exit, or the horizon when nothing leaves the chart.
    """
    lo, hi, normals = _q_normals(metric, sub, q_lower, q_upper, resolution, sphere_resolution, side)
    if fan is None:
        fan = NormalFan(metric, sub, horizon, foot_resolution=max(64, resolution),
                        sphere_resolution=max(32, sphere_resolution))

    def one(nv):
        try:
            cut = cut_value(metric, sub, nv, horizon, tol, field, fan)
            foc = focal_instant(metric, sub, nv, horizon, tol)
            path = fan.path_for(nv)
            return TubeSample(nv, cut, foc, path.t_exit if path.exited else math.inf)
        except Exception as exc:  # noqa: BLE001 - attached to the sample
            return TubeSample(nv, None, None, math.nan, repr(exc))

    samples = parallel_map(one, normals, workers)
    good = [s for s in samples if s.error is None]
    failures = len(samples) - len(good)
    if not good:
        raise RuntimeError(f"all {len(samples)} tube samples failed; first: {samples[0].error if samples else None}")
    eps_cut = min((s.cut.value for s in good), default=math.inf)
    eps_focal = min((s.focal.value for s in good), default=math.inf)
    eps_domain = min(min(s.exit_time for s in good), horizon)
    eps = safety * min(eps_cut, eps_focal, eps_domain)
    return TubeReport(lo, hi, eps, eps_cut, eps_focal, eps_domain, horizon, safety, samples,
                      failures, failures > PARTIAL_FRACTION * len(samples))


# --------------------------------------------------------------------------
# verification


@dataclass(eq=False)
class CheckResult:
    name: str
    passed: bool
    worst: float
    witnesses: list[dict] = field(default_factory=list)
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "witnesses": self.witnesses, **self.detail}


@dataclass(eq=False)
class Verification:
    epsilon: float
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        return next(c for c in self.checks if c.name == name)

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


def collision_scan(paths, normals, t_max: float, threshold: float, samples: int = 64,
                   max_witnesses: int = 50) -> CheckResult:
    """Meetings ``gamma_v(t) = gamma_w(s)`` of distinct normals with ``0 < t, s <= t_max``.

    Segment pairs closer than ``threshold`` are near pairs; a near pair is a
    collision only if Gauss-Newton on the two geodesics closes the gap.
    """
    step = t_max / samples
    lines = [Polyline.from_path(p, step, t_max) for p in paths]
    seg_len = max(float(np.max(np.linalg.norm(np.diff(l.points, axis=0), axis=-1))) for l in lines)
    sag = max(l.sag for l in lines)
    table = SegmentHash(lines, 1.01 * (seg_len + 2 * threshold) + 1e-12, pad=threshold)
    start_tol = 1e-6 * t_max
    meet_tol = 1e-9 * max(1.0, t_max)
    near = 0
    witnesses = []
    seen = set()
    for a, line in enumerate(lines):
        qi, si = table.query(line.points[:-1], line.points[1:])
        if not len(qi):
            continue
        b = table.owner[si]
        keep = b > a
        qi, si, b = qi[keep], si[keep], b[keep]
        if not len(qi):
            continue
        seg = table.seg[si]
        B0 = np.stack([lines[o].points[s] for o, s in zip(b, seg)])
        B1 = np.stack([lines[o].points[s + 1] for o, s in zip(b, seg)])
        dist, fa, fb = segment_distance(line.points[qi], line.points[qi + 1], B0, B1)
        close = dist <= threshold
        near += int(np.count_nonzero(close))
        cand = np.flatnonzero(dist <= line.sag + sag + meet_tol)
        for j in cand:
            o = int(b[j])
            ta = float(chord_times(line, qi[j:j + 1], fa[j:j + 1])[0])
            tb = float(chord_times(lines[o], seg[j:j + 1], fb[j:j + 1])[0])
            t, s, res = refine_meeting(paths[a], paths[o], ta, tb, meet_tol)
            if res > 10 * meet_tol or min(t, s) <= start_tol or max(t, s) > t_max:
                continue
            key = (a, o, round(t / step), round(s / step))
            if key in seen:
                continue
            seen.add(key)
            if len(witnesses) < max_witnesses:
                witnesses.append({"v": _normal_record(normals[a]), "t": t, "w": _normal_record(normals[o]),
                                  "s": s, "point": paths[a].position(t).tolist(), "gap": res})
    return CheckResult("injectivity", not seen, float(len(seen)), witnesses,
                       {"collisions": len(seen), "near_pairs": near, "threshold": threshold})


def _regularity(metric, sub, normals, eps, tol, max_witnesses=50) -> CheckResult:
    witnesses = []
    worst = math.inf
    for nv in normals:
        foc = focal_instant(metric, sub, nv, eps, tol)
        if foc.truncated:
            witnesses.append({"v": _normal_record(nv), "t": foc.horizon, "reason": "left the chart"})
        elif foc.finite:
            witnesses.append({"v": _normal_record(nv), "t": foc.value, "reason": foc.mode,
                              "sigma_min": float(np.min(foc.sigma))})
        worst = min(worst, float(np.min(foc.sigma[1:])) if len(foc.sigma) > 1 else math.inf)
    return CheckResult("regularity", not witnesses, worst, witnesses[:max_witnesses],
                       {"failing_normals": len(witnesses)})


def _minimization(paths, normals, times, field: DistanceField, name="minimization", max_witnesses=50):
    witnesses = []
    worst = 0.0
    skipped = 0
    for nv, path in zip(normals, paths):
        ts = times[times <= path.t_end]
        q = path.position(ts)
        inside = field.graph.contains(q)
        skipped += int(len(times) - np.count_nonzero(inside))
        if not np.any(inside):
            continue
        ts, q = ts[inside], q[inside]
        gap = np.abs(field.distance(q) - ts)
        bound = field.error_bound(ts)
        ratio = gap / bound
        worst = max(worst, float(np.max(ratio)))
        for j in np.flatnonzero(ratio > 1):
            if len(witnesses) < max_witnesses:
                witnesses.append({"v": _normal_record(nv), "t": float(ts[j]), "point": q[j].tolist(),
                                  "distance_gap": float(gap[j]), "bound": float(bound[j])})
    failing = worst > 1
    return CheckResult(name, not failing, worst, witnesses, {"skipped_outside_region": skipped})


def verify_tube(metric: FinslerMetric, sub: Submanifold, eps: float, field: DistanceField,
                q_lower=None, q_upper=None, resolution: int = 32, time_samples: int = 64,
                side: str | None = None, sphere_resolution: int = 32, tol: float = 1e-3) -> Verification:
    """Injectivity, regularity and minimization over ``{t v : 0 < t < eps}``.

    ``field`` measures distance from ``P``; its grid step sets the collision
    threshold and its error model the minimization tolerance. Every check runs
    to completion and reports its worst sample (``worst`` is the collision
    count, the smallest singular value, or the largest gap/bound ratio).
    """
    if not eps > 0:
        raise ValueError("tube radius must be positive")
    _, _, normals = _q_normals(metric, sub, q_lower, q_upper, resolution, sphere_resolution, side)
    paths = [shoot(metric, nv.base, nv.vector, eps) for nv in normals]
    threshold = COLLISION_FACTOR * field.step
    inj = collision_scan(paths, normals, eps, threshold, time_samples)
    reg = _regularity(metric, sub, normals, eps, tol)
    times = eps * np.arange(1, time_samples + 1) / (time_samples + 1)
    mini = _minimization(paths, normals, times, field)
    return Verification(eps, [inj, reg, mini])


def _neighbour_pairs(normals: list[NormalVector], sub: Submanifold):
    """Index pairs of normals with adjacent feet and the same cone direction."""
    groups: dict = {}
    for i, nv in enumerate(normals):
        key = (nv.side, None if nv.direction is None else tuple(np.round(nv.direction, 12)))
        groups.setdefault(key, []).append(i)
    pairs = []
    wrap = sub.k == 1 and sub.periodic[0]
    for idx in groups.values():
        pairs.extend(zip(idx[:-1], idx[1:]))
        if wrap and len(idx) > 2:
            pairs.append((idx[-1], idx[0]))
    return pairs


def verify_smooth_distance(metric: FinslerMetric, sub: Submanifold, eps: float, field: DistanceField,
                           q_lower=None, q_upper=None, resolution: int = 32, time_samples: int = 32,
                           side: str | None = None, sphere_resolution: int = 32) -> Verification:
    """Distance equals the radial tube parameter, and its gradient has no jumps.

    Samples sit at ``t in [0.1 eps, 0.9 eps]``. For neighbouring samples
    ``a, b`` (consecutive times on one normal, or adjacent feet at equal time)
    the jump of the oracle's difference gradient must stay below
    ``10 * (|xi_a - xi_b| + noise)``: ``xi`` is the Legendre covector of the
    geodesic velocity (the exact gradient inside the tube) and ``noise`` the
    oracle's metrication times its largest unit edge weight.
    """
    if not eps > 0:
        raise ValueError("tube radius must be positive")
    _, _, normals = _q_normals(metric, sub, q_lower, q_upper, resolution, sphere_resolution, side)
    times = np.linspace(0.1 * eps, 0.9 * eps, time_samples)
    paths = [shoot(metric, nv.base, nv.vector, 0.9 * eps) for nv in normals]
    mini = _minimization(paths, normals, times, field, name="distance-equals-radius")

    spacing = 2 * field.step
    g = field.graph
    n = metric.dimension
    m = len(normals)
    G = np.full((m, len(times), n), np.nan)
    XI = np.full((m, len(times), n), np.nan)
    for i, path in enumerate(paths):
        ts = times[times <= path.t_end]
        st = path.flow.state(ts)[:, 0]
        q, v = st[:, 0], st[:, 1]
        ok = np.all((q - spacing > g.lower) & (q + spacing < g.upper), axis=-1)
        if np.any(ok):
            G[i, : len(ts)][ok] = field.gradient(q[ok], spacing)
            XI[i, : len(ts)][ok] = metric.fiber_gradient(q[ok], v[ok]) / metric._norm(q[ok], v[ok])[:, None]
    noise = g.metrication * g.fmax

    worst, worst_pair = 0.0, None
    witnesses = []

    def compare(a, b, label):
        nonlocal worst, worst_pair
        ga, gb = G[a], G[b]
        valid = ~(np.isnan(ga).any(-1) | np.isnan(gb).any(-1))
        if not np.any(valid):
            return
        jump = np.linalg.norm(ga[valid] - gb[valid], axis=-1)
        bound = GRADIENT_FACTOR * (np.linalg.norm(XI[a][valid] - XI[b][valid], axis=-1) + noise)
        ratio = jump / bound
        j = int(np.argmax(ratio))
        if ratio[j] > worst:
            worst, worst_pair = float(ratio[j]), (a, b, label)
        for k in np.flatnonzero(ratio > 1)[:5]:
            if len(witnesses) < 50:
                witnesses.append({"pair": label, "jump": float(jump[k]), "bound": float(bound[k])})

    for i in range(m):
        compare((i, slice(0, -1)), (i, slice(1, None)), f"normal {i}: consecutive times")
    for a, b in _neighbour_pairs(normals, sub):
        compare((a, slice(None)), (b, slice(None)), f"normals {a}/{b}: adjacent feet")
    grad = CheckResult("gradient-continuity", worst <= 1.0, worst, witnesses,
                       {"noise_floor": noise, "worst_pair": None if worst_pair is None else worst_pair[2]})
    return Verification(eps, [mini, grad])
