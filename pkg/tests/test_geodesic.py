import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler_lab import (
    Curve,
    DegenerateVectorError,
    DomainError,
    HorizonError,
    d_exp,
    energy,
    euler_lagrange_residual,
    exp_map,
    length,
    shoot,
)


def great_circle(p0, v0, t):
    """Analytic unit-sphere geodesic mapped to stereographic coordinates (projection from the south pole)."""
    p0 = np.asarray(p0, float)
    v0 = np.asarray(v0, float)
    r2 = p0 @ p0
    X = np.append(2 * p0, 1 - r2) / (1 + r2)
    # differential of the inverse projection
    dX = np.append(2 * v0 / (1 + r2) - 4 * p0 * (p0 @ v0) / (1 + r2) ** 2, -4 * (p0 @ v0) / (1 + r2) ** 2)
    s = np.linalg.norm(dX)
    Y = np.cos(s * t)[:, None] * X + np.sin(s * t)[:, None] * (dX / s)
    return Y[:, :2] / (1 + Y[:, 2:])


class TestLength:
    def test_euclidean_segment(self, flat):
        assert length(flat, Curve.segment([0, 0], [3, 4])) == pytest.approx(5.0, abs=1e-9)

    def test_randers_direction_matters(self, randers):
        assert length(randers, Curve.segment([0, 0], [1, 0])) == pytest.approx(1.5, abs=1e-12)
        assert length(randers, Curve.segment([1, 0], [0, 0])) == pytest.approx(0.5, abs=1e-12)

    def test_reparametrization_invariant(self, randers):
        s = np.linspace(0, 1, 57) ** 2
        c = Curve(s, np.outer(s**1.5, [1.0, 2.0]))
        assert length(randers, c) == pytest.approx(length(randers, Curve.segment([0, 0], [1, 2])), abs=1e-6)

    def test_additive_under_concatenation(self, randers):
        t = np.linspace(0, 1, 21)
        pts = np.stack([np.cos(3 * t), np.sin(2 * t)], axis=-1)
        whole = length(randers, Curve(t, pts))
        split = length(randers, Curve(t[:11], pts[:11])) + length(randers, Curve(t[10:], pts[10:]))
        assert whole == pytest.approx(split, abs=1e-12)

    def test_curve_outside_chart(self, flat):
        with pytest.raises(DomainError):
            length(flat, Curve.segment([0, 0], [9, 0]))

    def test_curve_validation(self):
        with pytest.raises(ValueError):
            Curve([0.0, 0.0], [[0, 0], [1, 1]])
        with pytest.raises(ValueError):
            Curve([0.0], [[0, 0]])


class TestEnergy:
    def test_constant_speed(self, flat):
        assert energy(flat, Curve.segment([0, 0], [1, 0])) == pytest.approx(1.0, abs=1e-12)

    def test_accelerating_profile(self, flat):
        t = np.linspace(0, 1, 2001)
        c = Curve(t, np.stack([t**2, 0 * t], axis=-1))
        assert energy(flat, c) == pytest.approx(4 / 3, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(x=st.floats(-2, 2), y=st.floats(-0.8, 0.8), dur=st.floats(0.1, 5))
    def test_cauchy_schwarz(self, randers, x, y, dur):
        t = np.linspace(0, dur, 33)
        pts = np.stack([x * np.sin(t), y * t], axis=-1)
        if np.ptp(pts) < 1e-6:
            return
        c = Curve(t, pts)
        assert energy(randers, c) >= length(randers, c) ** 2 / dur - 1e-12

    def test_equality_for_constant_speed(self, randers):
        c = Curve.segment([0, 0], [1, 1], t1=2.0)
        assert energy(randers, c) == pytest.approx(length(randers, c) ** 2 / 2.0, abs=1e-6)


class TestShoot:
    @pytest.mark.parametrize("v0", [[1.0, 0.0], [-0.3, 0.8], [0.1, -2.0]])
    def test_straight_lines_constant_coefficients(self, randers, v0):
        path = shoot(randers, [0.2, -0.1], v0, 2.0)
        t, x, _ = path.sample(101)
        np.testing.assert_allclose(x, np.array([0.2, -0.1]) + np.outer(t, v0), atol=1e-8)

    def test_sphere_equator_to_pole(self, sphere):
        path = shoot(sphere, [1.0, 0.0], [-1.0, 0.0], np.pi / 2)
        np.testing.assert_allclose(path.position(np.pi / 2), [0, 0], atol=1e-5)

    def test_initial_state_exact(self, sphere):
        path = shoot(sphere, [0.3, 0.2], [0.1, -0.4], 1.0)
        assert np.array_equal(path.positions[0], [0.3, 0.2])
        assert np.array_equal(path.velocities[0], [0.1, -0.4])

    def test_rejects_nonpositive_time(self, flat):
        with pytest.raises(ValueError):
            shoot(flat, [0, 0], [1, 0], 0.0)

    def test_tiny_time(self, sphere):
        path = shoot(sphere, [0.3, 0.2], [0.1, -0.4], 1e-9)
        np.testing.assert_allclose(path.position(1e-9), [0.3 + 1e-10, 0.2 - 4e-10], atol=1e-15)

    def test_degenerate_vector(self, flat):
        with pytest.raises(DegenerateVectorError):
            shoot(flat, [0, 0], [0, 0], 1.0)

    def test_domain_exit_recorded(self, flat):
        path = shoot(flat, [0, 0], [1, 0], 10.0)
        assert path.exited
        assert path.t_exit == pytest.approx(5.0, abs=1e-10)

    def test_speed_conservation(self, sphere):
        path = shoot(sphere, [0.5, -0.2], [0.3, 0.9], 3.0)
        F = path.speeds(sphere)
        assert np.abs(F - F[0]).max() <= 1e-6 * F[0]

    @pytest.mark.parametrize("lam", [0.5, 2.0])
    def test_affine_rescaling(self, sphere, lam):
        v = np.array([0.4, 0.3])
        a = shoot(sphere, [0.1, 0.2], lam * v, 1.0).position(1.0)
        b = shoot(sphere, [0.1, 0.2], v, lam).position(lam)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_great_circle(self, sphere):
        p0, v0 = [0.4, -0.3], [0.2, 0.5]
        path = shoot(sphere, p0, v0, 3.0)
        t = np.linspace(0, 3.0, 61)
        np.testing.assert_allclose(path.position(t), great_circle(p0, v0, t), atol=1e-5)

    def test_straight_line_residual(self, randers):
        x = np.array([0.3, 0.1])
        v = np.array([0.7, -0.2])
        assert np.abs(euler_lagrange_residual(randers, x, v, np.zeros(2))).max() <= 1e-10

    def test_local_minimization(self, sphere):
        rng = np.random.default_rng(3)
        for _ in range(3):
            p0 = rng.uniform(-0.8, 0.8, 2)
            v0 = rng.standard_normal(2)
            v0 *= 0.25 / sphere.evaluate(p0, v0)
            path = shoot(sphere, p0, v0, 1.0)
            t, x, _ = path.sample(201)
            best = length(sphere, Curve(t, x))
            for _ in range(50):
                bump = np.sin(np.pi * t)[:, None] * rng.normal(0, 0.02, 2)
                assert best <= length(sphere, Curve(t, x + bump)) + 1e-7


class TestExpMap:
    def test_euclidean(self, flat):
        np.testing.assert_allclose(exp_map(flat, [0, 0], [0.3, 0.4]), [0.3, 0.4], atol=1e-12)

    def test_homogeneity(self, sphere):
        v = np.array([0.6, 0.8]) / sphere.evaluate([0.2, 0.2], [0.6, 0.8])
        path = shoot(sphere, [0.2, 0.2], v, 1.3)
        np.testing.assert_allclose(exp_map(sphere, [0.2, 0.2], 1.3 * v), path.position(1.3), atol=1e-9)

    def test_sphere_pole(self, sphere):
        v = (np.pi / 2) * np.array([-1.0, 0.0])
        np.testing.assert_allclose(exp_map(sphere, [1.0, 0.0], v), [0, 0], atol=1e-5)

    def test_horizon_error_carries_exit(self, flat):
        with pytest.raises(HorizonError) as info:
            exp_map(flat, [4.0, 0.0], [3.0, 0.0])
        assert info.value.t_exit == pytest.approx(1 / 3, abs=1e-9)


class TestDExp:
    def test_euclidean_shift(self, flat):
        u = np.array([0.2, -0.7])
        out = d_exp(flat, lambda s: ([0.0, 0.0], np.array([0.5, 0.5]) + s * u))
        np.testing.assert_allclose(out, u, atol=1e-7)

    def test_zero_variation(self, sphere):
        out = d_exp(sphere, lambda s: ([0.1, 0.0], [0.3, 0.2]))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_equator_focusing(self, sphere):
        def variation(s):
            p = np.array([np.cos(s), np.sin(s)])
            return p, -(np.pi / 2) * p

        assert np.linalg.norm(d_exp(sphere, variation)) <= 1e-4
