import numpy as np
import pytest

from finsler_lab import (
    Chart,
    CircleSubmanifold,
    DomainError,
    LineSubmanifold,
    RandersMetric,
    build_field,
    estimate_tube_radius,
    euclidean,
    reverse,
    shoot,
    unit_normal_cone,
    verify_smooth_distance,
    verify_tube,
)
from finsler_lab.cut import NormalFan
from finsler_lab.tube import check_q_box, collision_scan

CHART = Chart.box(2, -4.0, 4.0)
REGION = ([-3.5, -3.5], [3.5, 3.5])
FLAT = euclidean(CHART)
RANDERS = RandersMetric(CHART, np.eye(2), [0.5, 0.0])
CIRCLE = CircleSubmanifold([0, 0], 1.0)


@pytest.fixture(scope="module")
def circle_field():
    return build_field(FLAT, REGION, 192, 3, sources=CIRCLE)


@pytest.fixture(scope="module")
def circle_report(circle_field):
    fan = NormalFan(FLAT, CIRCLE, 2.0, foot_resolution=48, sphere_resolution=2)
    return estimate_tube_radius(FLAT, CIRCLE, resolution=12, horizon=2.0, tol=1e-4, field=circle_field,
                                sphere_resolution=2, fan=fan)


class TestQBox:
    def test_full_period_allowed(self):
        lo, hi = check_q_box(CIRCLE)
        assert lo[0] == 0.0 and hi[0] == pytest.approx(2 * np.pi)

    def test_line_needs_strict_interior(self):
        line = LineSubmanifold([0, 0], [1, 0], -2, 2)
        with pytest.raises(DomainError):
            check_q_box(line)
        with pytest.raises(DomainError):
            check_q_box(line, [-2.0], [1.0])
        assert check_q_box(line, [-1.0], [1.0])[0][0] == -1.0

    def test_wrong_shape(self):
        with pytest.raises(DomainError):
            check_q_box(CIRCLE, [0.0, 1.0], [1.0, 2.0])


class TestEstimate:
    def test_circle_both_sides(self, circle_report):
        assert circle_report.epsilon == pytest.approx(0.9, abs=0.9 * 5e-3)
        assert circle_report.epsilon_cut == pytest.approx(1.0, abs=5e-3)
        assert circle_report.epsilon_focal == pytest.approx(1.0, abs=1e-3)
        assert circle_report.epsilon_domain == 2.0
        assert not circle_report.partial and circle_report.failures == 0

    def test_summary_keys(self, circle_report):
        s = circle_report.summary()
        assert s["samples"] == 24
        assert set(s) >= {"epsilon", "epsilon_cut", "epsilon_focal", "epsilon_domain", "Q", "partial"}

    def test_randers_line_domain_limited(self):
        chart = Chart.box(2, -2.0, 2.0)
        m = RandersMetric(chart, np.eye(2), [0.5, 0.0])
        line = LineSubmanifold([0, 0], [0, 1], -1.5, 1.5)
        rep = estimate_tube_radius(m, line, [-1.0], [1.0], resolution=6, horizon=6.0, sphere_resolution=2)
        assert rep.epsilon_cut == np.inf and rep.epsilon_focal == np.inf
        # the slow normal (-2, 0) leaves x = -2 at t = 1
        assert rep.epsilon_domain == pytest.approx(1.0, abs=1e-8)
        assert rep.epsilon == pytest.approx(0.9 * rep.epsilon_domain)

    def test_threads_match_serial(self, circle_field):
        fan = NormalFan(FLAT, CIRCLE, 2.0, foot_resolution=48, sphere_resolution=2)
        kw = dict(resolution=6, horizon=2.0, tol=1e-4, field=circle_field, sphere_resolution=2, fan=fan)
        a = estimate_tube_radius(FLAT, CIRCLE, **kw)
        b = estimate_tube_radius(FLAT, CIRCLE, workers=2, **kw)
        assert a.summary() == b.summary()


class TestVerifyTube:
    def test_passes_inside(self, circle_field):
        ver = verify_tube(FLAT, CIRCLE, 0.9, circle_field, resolution=24, sphere_resolution=2)
        assert ver.passed, ver.as_dict()
        assert ver.check("injectivity").worst == 0

    def test_fails_past_centre(self, circle_field):
        ver = verify_tube(FLAT, CIRCLE, 1.1, circle_field, resolution=24, sphere_resolution=2)
        assert not ver.passed
        inj = ver.check("injectivity")
        assert not inj.passed and inj.witnesses
        w = inj.witnesses[0]
        assert {"t", "s"} <= set(w)
        assert not ver.check("regularity").passed

    def test_rejects_nonpositive_radius(self, circle_field):
        with pytest.raises(ValueError):
            verify_tube(FLAT, CIRCLE, 0.0, circle_field)

    def test_collision_scan_witness(self):
        circ_normals = [n for u in (0.0, np.pi) for n in unit_normal_cone(FLAT, CIRCLE, [u])
                        if n.vector @ n.base < 0]
        paths = [shoot(FLAT, n.base, n.vector, 1.5) for n in circ_normals]
        res = collision_scan(paths, circ_normals, 1.5, 0.05)
        assert res.worst >= 1
        w = res.witnesses[0]
        # the two diameters overlap, so any t + s = 2 is a meeting
        assert w["t"] + w["s"] == pytest.approx(2.0, abs=1e-6)


class TestSmoothDistance:
    def test_x_axis_flat(self):
        line = LineSubmanifold([0, 0], [1, 0], -3, 3)
        fld = build_field(FLAT, REGION, 160, 3, sources=line)
        ver = verify_smooth_distance(FLAT, line, 1.0, fld, [-1.0], [1.0], resolution=8, sphere_resolution=2)
        assert ver.passed, ver.as_dict()

    def test_randers_y_axis(self):
        line = LineSubmanifold([0, 0], [0, 1], -3, 3)
        fld = build_field(RANDERS, REGION, 160, 3, sources=line)
        ver = verify_smooth_distance(RANDERS, line, 1.0, fld, [-1.0], [1.0], resolution=8, sphere_resolution=2)
        assert ver.passed, ver.as_dict()

    def test_circle_inside_tube(self, circle_field):
        ver = verify_smooth_distance(FLAT, CIRCLE, 0.9, circle_field, resolution=16, sphere_resolution=2)
        assert ver.passed, ver.as_dict()

    def test_circle_past_centre_fails(self, circle_field):
        ver = verify_smooth_distance(FLAT, CIRCLE, 1.2, circle_field, resolution=16, side="-",
                                     sphere_resolution=2)
        assert not ver.passed


class TestReverseTube:
    def test_reversible_metric_same_radius(self, circle_field):
        rev = reverse(FLAT)
        kw = dict(resolution=6, horizon=2.0, tol=1e-4, sphere_resolution=2)
        a = estimate_tube_radius(FLAT, CIRCLE, field=circle_field, **kw)
        b = estimate_tube_radius(rev, CIRCLE, field=circle_field, **kw)
        assert a.epsilon == pytest.approx(b.epsilon, abs=1e-6)
