import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler_lab import (
    CircleSubmanifold,
    ConditioningError,
    CustomImmersion,
    DegenerateVectorError,
    GraphSubmanifold,
    ImmersionError,
    LineSubmanifold,
    NormalVariation,
    PointSubmanifold,
    RandersMetric,
    RiemannianMetric,
    annihilator_basis,
    build_orthogonal_frame,
    closest_foot_point,
    exp_submanifold,
    legendre,
    legendre_inverse,
    orthogonality_residual,
    sample_unit_normals,
    unit_normal_cone,
)
from finsler_lab.normal import Covector

X_AXIS = LineSubmanifold([0, 0], [1, 0], -3, 3)
Y_AXIS = LineSubmanifold([0, 0], [0, 1], -3, 3)
CIRCLE = CircleSubmanifold([0, 0], 1.0)

vector = (st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(np.array)
          .filter(lambda v: np.linalg.norm(v) > 1e-2))


def by_side(normals):
    return {n.side: n.vector for n in normals}


class TestLegendre:
    def test_euclidean(self, flat):
        np.testing.assert_allclose(legendre(flat, [0, 0], [1, 0]).components, [1, 0], atol=1e-14)

    def test_randers(self, randers):
        np.testing.assert_allclose(legendre(randers, [0, 0], [1, 0]).components, [2.25, 0], atol=1e-12)

    def test_homogeneity(self, randers):
        v = np.array([0.3, -0.8])
        np.testing.assert_allclose(legendre(randers, [0, 0], 2 * v).components,
                                   2 * legendre(randers, [0, 0], v).components, atol=1e-9)

    def test_degenerate(self, randers):
        with pytest.raises(DegenerateVectorError):
            legendre(randers, [0, 0], [0, 0])

    def test_pairs_with_fundamental_tensor(self, randers):
        v = np.array([0.3, -0.8])
        u = np.array([1.1, 0.4])
        xi = legendre(randers, [0, 0], v)
        assert xi(u) == pytest.approx(v @ randers.fundamental_tensor([0, 0], v) @ u, abs=1e-12)


class TestLegendreInverse:
    def test_euclidean(self, flat):
        np.testing.assert_allclose(legendre_inverse(flat, Covector(np.zeros(2), np.array([0.0, 1.0]))),
                                   [0, 1], atol=1e-12)

    def test_randers(self, randers):
        out = legendre_inverse(randers, Covector(np.zeros(2), np.array([2.25, 0.0])))
        np.testing.assert_allclose(out, [1, 0], atol=1e-8)

    @settings(max_examples=80, deadline=None)
    @given(v=vector)
    def test_roundtrip(self, randers, v):
        xi = legendre(randers, [0.5, 0.5], v)
        np.testing.assert_allclose(legendre_inverse(randers, xi), v, atol=1e-8 * max(1, np.linalg.norm(v)))

    @settings(max_examples=40, deadline=None)
    @given(v=vector)
    def test_residual(self, sphere, v):
        xi = legendre(sphere, [0.3, -0.2], v)
        w = legendre_inverse(sphere, xi)
        assert np.linalg.norm(legendre(sphere, [0.3, -0.2], w).components - xi.components) \
            <= 1e-10 * np.linalg.norm(xi.components)


class TestAnnihilator:
    def test_x_axis(self):
        (xi,) = annihilator_basis(X_AXIS, [0.4])
        np.testing.assert_allclose(np.abs(xi.components), [0, 1], atol=1e-14)

    def test_point_full_dual(self):
        basis = annihilator_basis(PointSubmanifold([0.0, 0.0]), [])
        assert len(basis) == 2
        assert abs(np.linalg.det([c.components for c in basis])) == pytest.approx(1.0)

    @pytest.mark.parametrize("theta", [0.0, 0.7, 2.5, 4.0])
    def test_circle(self, theta):
        (xi,) = annihilator_basis(CIRCLE, [theta])
        expected = np.array([np.cos(theta), np.sin(theta)])
        assert min(np.abs(xi.components - expected).max(), np.abs(xi.components + expected).max()) <= 1e-10

    def test_unit_normalized(self):
        sub = GraphSubmanifold(lambda u: u[..., 0] ** 2, 2, [-1], [1])
        (xi,) = annihilator_basis(sub, [0.5])
        assert np.linalg.norm(xi.components) == pytest.approx(1.0)

    def test_immersion_failure(self):
        bad = CustomImmersion(lambda u: np.stack([u[..., 0] ** 3, u[..., 0] ** 3], axis=-1), 2, [-1], [1])
        with pytest.raises(ImmersionError):
            annihilator_basis(bad, [0.0])


class TestUnitNormalCone:
    def test_euclidean_x_axis(self, flat):
        normals = by_side(unit_normal_cone(flat, X_AXIS, [0.2]))
        assert sorted(np.round(v, 12).tolist() for v in normals.values()) == [[0.0, -1.0], [0.0, 1.0]]

    def test_randers_y_axis(self, randers):
        vs = sorted(n.vector.tolist() for n in unit_normal_cone(randers, Y_AXIS, [0.0]))
        np.testing.assert_allclose(vs, [[-2.0, 0.0], [2 / 3, 0.0]], atol=1e-8)

    def test_randers_x_axis(self, randers):
        vs = sorted(n.vector.tolist() for n in unit_normal_cone(randers, X_AXIS, [0.0]))
        s = 2 * np.sqrt(3) / 3
        np.testing.assert_allclose(vs, [[-2 / 3, -s], [-2 / 3, s]], atol=1e-6)

    def test_brute_force_sweep(self, randers):
        theta = np.linspace(0, 2 * np.pi, 200001)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        dirs /= randers._norm(np.zeros(2), dirs)[:, None]
        resid = np.abs(randers.fiber_gradient(np.zeros(2), dirs)[:, 1])
        for n in unit_normal_cone(randers, Y_AXIS, [0.0]):
            near = np.linalg.norm(dirs - n.vector, axis=1) < 1e-2
            assert resid[near].min() <= 1e-4

    def test_unit_and_orthogonal(self, randers):
        for n in sample_unit_normals(randers, CIRCLE, CIRCLE.sample_parameters(17)):
            assert randers.evaluate(n.base, n.vector) == pytest.approx(1.0, abs=1e-10)
            assert orthogonality_residual(randers, CIRCLE, n) <= 1e-8

    def test_cone_property(self, randers):
        for n in unit_normal_cone(randers, X_AXIS, [0.0]):
            for lam in (0.5, 2.0):
                assert orthogonality_residual(randers, X_AXIS, n.scaled(lam)) <= 1e-8

    def test_legendre_in_annihilator_span(self, randers):
        sub = GraphSubmanifold(lambda u: 0.3 * np.sin(u[..., 0]), 2, [-2], [2])
        for n in sample_unit_normals(randers, sub, sub.sample_parameters(9)):
            (xi,) = annihilator_basis(sub, n.u)
            L = legendre(randers, n.base, n.vector).components
            resid = L - (L @ xi.components) * xi.components
            assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(L)

    def test_riemannian_reduction(self, sphere):
        u = [0.9]
        p = CIRCLE.point(np.array(u))
        g = sphere.fundamental_tensor(p, [1.0, 0.0])
        T = CIRCLE.tangents(np.array(u))[:, 0]
        w = np.array([-T[1], T[0]])
        w = w - (w @ g @ T) / (T @ g @ T) * T
        w /= np.sqrt(w @ g @ w)
        normals = by_side(unit_normal_cone(sphere, CIRCLE, u))
        got = sorted([normals["+"].tolist(), normals["-"].tolist()])
        np.testing.assert_allclose(got, sorted([w.tolist(), (-w).tolist()]), atol=1e-8)
        np.testing.assert_allclose(normals["+"], -normals["-"], atol=1e-12)

    def test_non_symmetry_witness(self, randers):
        normals = by_side(unit_normal_cone(randers, Y_AXIS, [0.0]))
        assert np.linalg.norm(normals["+"] + normals["-"]) > 0.1

    def test_sides_are_deterministic(self, randers):
        a = by_side(unit_normal_cone(randers, CIRCLE, [1.0]))
        b = by_side(unit_normal_cone(randers, CIRCLE, [1.0]))
        assert set(a) == {"+", "-"}
        np.testing.assert_array_equal(a["+"], b["+"])

    def test_side_filter(self, randers):
        normals = sample_unit_normals(randers, CIRCLE, CIRCLE.sample_parameters(8), side="-")
        assert len(normals) == 8 and {n.side for n in normals} == {"-"}

    def test_point_submanifold_full_sphere(self, randers):
        normals = unit_normal_cone(randers, PointSubmanifold([0.0, 0.0]), [], resolution=24)
        assert len(normals) == 24
        assert all(n.side is None for n in normals)
        F = randers._norm(np.zeros(2), np.array([n.vector for n in normals]))
        np.testing.assert_allclose(F, 1.0, atol=1e-10)

    def test_codimension_two(self):
        from finsler_lab import Chart, euclidean

        m = euclidean(Chart.box(3, -2, 2))
        line = LineSubmanifold([0, 0, 0], [0, 0, 1], -1, 1)
        normals = unit_normal_cone(m, line, [0.0], resolution=12)
        V = np.array([n.vector for n in normals])
        np.testing.assert_allclose(V[:, 2], 0.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-12)


class TestOrthogonalFrame:
    def test_euclidean(self, flat):
        np.testing.assert_allclose(build_orthogonal_frame(flat, [0, 0], [1, 0], [[0, 1]]), np.eye(2), atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(v=vector)
    def test_gram_schmidt_postcondition(self, randers, v):
        E = build_orthogonal_frame(randers, [0, 0], v, [v, [-v[1], v[0]]])
        g = randers.fundamental_tensor([0, 0], v)
        np.testing.assert_allclose(E[1:] @ g @ E[1:].T, np.eye(1), atol=1e-9)
        np.testing.assert_allclose(E[1:] @ g @ v, 0.0, atol=1e-9)
        np.testing.assert_array_equal(E[0], v)

    def test_randers_complement_direction(self, randers):
        g = randers.fundamental_tensor([0, 0], [1, 0])
        E2 = build_orthogonal_frame(randers, [0, 0], [1, 0], [[0.0, 1.0]])[1]
        expected = np.array([-g[0, 1], g[0, 0]])
        cross = E2[0] * expected[1] - E2[1] * expected[0]
        assert abs(cross) <= 1e-8 * np.linalg.norm(E2) * np.linalg.norm(expected)

    def test_dependent_seed(self, flat):
        with pytest.raises(ConditioningError):
            build_orthogonal_frame(flat, [0, 0], [1, 0], [[2.0, 0.0]])


class TestExpSubmanifold:
    def test_euclidean_x_axis(self, flat):
        normal = by_side(unit_normal_cone(flat, X_AXIS, [0.4]))
        up = next(n for n in unit_normal_cone(flat, X_AXIS, [0.4]) if n.vector[1] > 0)
        assert up.side in normal
        np.testing.assert_allclose(exp_submanifold(flat, X_AXIS, [0.4], up, 0.7), [0.4, 0.7], atol=1e-12)

    @pytest.mark.parametrize("theta", [0.0, 1.3, 3.9])
    def test_sphere_equator_to_pole(self, sphere, theta):
        inward = next(n for n in unit_normal_cone(sphere, CIRCLE, [theta]) if n.vector @ n.base < 0)
        np.testing.assert_allclose(exp_submanifold(sphere, CIRCLE, [theta], inward, np.pi / 2), [0, 0], atol=1e-5)

    def test_randers_y_axis(self, randers):
        fwd = next(n for n in unit_normal_cone(randers, Y_AXIS, [0.0]) if n.vector[0] > 0)
        np.testing.assert_allclose(exp_submanifold(randers, Y_AXIS, [0.0], fwd, 1.5), [1, 0], atol=1e-8)


class TestNormalVariation:
    def test_centre_reproduces_normal(self, randers):
        n = unit_normal_cone(randers, CIRCLE, [0.5])[0]
        P, V = NormalVariation(randers, CIRCLE, n)(np.zeros(1))
        np.testing.assert_allclose(P[0], n.base, atol=1e-14)
        np.testing.assert_allclose(V[0], n.vector, atol=1e-9)

    def test_nearby_normals_stay_orthogonal(self, randers):
        n = unit_normal_cone(randers, CIRCLE, [0.5])[0]
        P, V = NormalVariation(randers, CIRCLE, n)(np.array([[0.01], [-0.02]]))
        for p, v, du in zip(P, V, (0.01, -0.02)):
            T = CIRCLE.tangents(np.array([0.5 + du]))[:, 0]
            assert abs(randers.fiber_gradient(p, v) @ T) <= 1e-8
            assert randers.evaluate(p, v) == pytest.approx(1.0, abs=1e-10)

    def test_point_uses_sphere_directions(self, flat):
        n = unit_normal_cone(flat, PointSubmanifold([0.0, 0.0]), [], resolution=8)[0]
        chart = NormalVariation(flat, PointSubmanifold([0.0, 0.0]), n)
        assert chart.dimension == 1
        _, V = chart(np.array([[1e-3]]))
        assert abs(V[0] @ n.vector) == pytest.approx(1.0, abs=1e-5)


class TestFootPoint:
    def test_orthogonality_at_foot(self, randers):
        rng = np.random.default_rng(7)
        line = LineSubmanifold([0, 0], [1.0, 0.4], -3, 3)
        for q in rng.uniform(-1, 1, (10, 2)):
            if np.linalg.norm(q - q @ line.direction / (line.direction @ line.direction) * line.direction) < 0.05:
                continue
            u, p, direction, resid = closest_foot_point(randers, line, q)
            assert resid <= 1e-3

    def test_rejects_curved_metric(self, sphere):
        with pytest.raises(ValueError):
            closest_foot_point(sphere, CIRCLE, [0.2, 0.1])

    def test_riemannian_constant_tensor_is_allowed(self, plane):
        m = RiemannianMetric(plane, [[2.0, 0.3], [0.3, 1.0]])
        u, p, _, resid = closest_foot_point(m, X_AXIS, [0.5, 1.0])
        assert resid <= 1e-3


def test_randers_variable_drift_normals(plane):
    m = RandersMetric(plane, np.eye(2), lambda p: 0.4 * np.stack([np.sin(p[..., 1]), np.cos(p[..., 0])], axis=-1))
    for n in sample_unit_normals(m, CIRCLE, CIRCLE.sample_parameters(11)):
        assert orthogonality_residual(m, CIRCLE, n) <= 1e-8
