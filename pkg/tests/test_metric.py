import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler_lab import (
    Chart,
    CustomMetric,
    DegenerateVectorError,
    DomainError,
    MinkowskiMetric,
    NonConvexMetricError,
    RandersMetric,
    RiemannianMetric,
    StereographicSphere,
    euclidean,
    reverse,
    reversibility_constant,
)

coord = st.floats(-2.0, 2.0, allow_nan=False)
comp = st.floats(-3.0, 3.0, allow_nan=False)
point = st.tuples(coord, coord).map(np.array)
vector = st.tuples(comp, comp).map(np.array).filter(lambda v: np.linalg.norm(v) > 1e-2)


def _families():
    chart = Chart.box(2, -3.0, 3.0)
    wavy = RandersMetric(
        chart,
        lambda p: np.einsum("...,ij->...ij", 1 + 0.1 * np.sin(p[..., 0]), np.eye(2)),
        lambda p: 0.3 * np.stack([np.cos(p[..., 1]), np.sin(p[..., 0])], axis=-1),
    )
    return {
        "euclidean": euclidean(chart),
        "sphere": RiemannianMetric(chart, StereographicSphere(1.0)),
        "randers": RandersMetric(chart, np.eye(2), [0.5, 0.0]),
        "randers-fd": RandersMetric(chart, np.eye(2), [0.5, 0.0], differentiation="fd"),
        "wavy": wavy,
        "minkowski": MinkowskiMetric(chart, lambda v: np.sqrt(v[..., 0] ** 2 + 4 * v[..., 1] ** 2)),
        "custom": CustomMetric(chart, lambda p, v: np.sqrt(np.sum(v**2, -1)) + 0.2 * v[..., 1]),
    }


FAMILIES = _families()


class TestEvaluate:
    def test_euclidean_unit(self, flat):
        assert flat.evaluate([0, 0], [1, 0]) == pytest.approx(1.0, abs=1e-15)

    def test_randers_asymmetry(self, randers):
        assert randers.evaluate([0, 0], [1, 0]) == pytest.approx(1.5, abs=1e-15)
        assert randers.evaluate([0, 0], [-1, 0]) == pytest.approx(0.5, abs=1e-15)

    def test_zero_vector_is_zero(self, randers):
        assert randers.evaluate([0, 0], [0, 0]) == 0.0

    def test_outside_domain(self, flat):
        with pytest.raises(DomainError):
            flat.evaluate([6, 0], [1, 0])

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_doubling_ratio(self, name):
        m = FAMILIES[name]
        v = np.array([0.3, -0.7])
        assert m.evaluate([0.2, 0.1], 2 * v) / m.evaluate([0.2, 0.1], v) == pytest.approx(2.0, abs=1e-12)

    def test_randers_drift_too_strong(self, plane):
        with pytest.raises(NonConvexMetricError):
            RandersMetric(plane, np.eye(2), [1.0, 0.0])


class TestFundamentalTensor:
    def test_euclidean_identity(self, flat):
        np.testing.assert_allclose(flat.fundamental_tensor([1, 1], [0.3, 2.0]), np.eye(2), atol=1e-14)

    def test_randers_example(self, randers):
        g = randers.fundamental_tensor([0, 0], [1, 0])
        np.testing.assert_allclose(np.array([1.0, 0.0]) @ g, [2.25, 0.0], atol=1e-8)

    def test_degenerate_vector(self, randers):
        with pytest.raises(DegenerateVectorError):
            randers.fundamental_tensor([0, 0], [0, 0])

    def test_non_convex_custom(self, plane):
        # l^{1/2} quasi-norm: homogeneous but with a non-convex unit ball
        bad = CustomMetric(plane, lambda p, v: (np.sqrt(np.abs(v[..., 0])) + np.sqrt(np.abs(v[..., 1]))) ** 2)
        with pytest.raises(NonConvexMetricError):
            bad.fundamental_tensor([0, 0], [1.0, 0.5])

    def test_riemannian_independent_of_v(self, sphere):
        p = [0.3, -0.4]
        rng = np.random.default_rng(1)
        gs = [sphere.fundamental_tensor(p, rng.standard_normal(2)) for _ in range(10)]
        assert max(np.abs(g - gs[0]).max() for g in gs) <= 1e-8

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    @settings(max_examples=40, deadline=None)
    @given(p=point, v=vector)
    def test_euler_identity(self, name, p, v):
        m = FAMILIES[name]
        g = m.fundamental_tensor(p, v)
        F = m.evaluate(p, v)
        rel = 1e-5 if name in ("randers-fd", "minkowski", "custom") else 1e-8
        assert v @ g @ v == pytest.approx(F**2, rel=rel)

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    @settings(max_examples=30, deadline=None)
    @given(p=point, v=vector)
    def test_symmetric_positive_definite(self, name, p, v):
        g = FAMILIES[name].fundamental_tensor(p, v)
        assert np.abs(g - g.T).max() <= 1e-6
        assert np.linalg.eigvalsh(0.5 * (g + g.T)).min() > 0


class TestHomogeneity:
    @pytest.mark.parametrize("name", sorted(FAMILIES))
    @settings(max_examples=60, deadline=None)
    @given(p=point, v=vector, lam=st.floats(1e-3, 10.0))
    def test_positive_homogeneity(self, name, p, v, lam):
        m = FAMILIES[name]
        F = m.evaluate(p, v)
        assert abs(m.evaluate(p, lam * v) - lam * F) <= 1e-9 * lam * F


class TestReverse:
    def test_euclidean_unchanged(self, flat):
        r = reverse(flat)
        assert r.evaluate([0, 0], [0.3, 0.4]) == flat.evaluate([0, 0], [0.3, 0.4])

    def test_randers_flip(self, randers):
        assert reverse(randers).evaluate([0, 0], [1, 0]) == pytest.approx(0.5)

    def test_involution_returns_base(self, randers):
        assert reverse(reverse(randers)) is randers

    @settings(max_examples=50, deadline=None)
    @given(p=point, v=vector)
    def test_definition_exact(self, p, v):
        for m in FAMILIES.values():
            assert reverse(m).evaluate(p, v) == m.evaluate(p, -v)

    def test_reverse_tensor_matches_flipped(self, randers):
        v = np.array([0.4, -1.1])
        np.testing.assert_allclose(reverse(randers).fundamental_tensor([0, 0], v),
                                   randers.fundamental_tensor([0, 0], -v), atol=1e-12)


class TestReversibilityConstant:
    def test_euclidean(self, flat):
        assert reversibility_constant(flat, ([-1, -1], [1, 1]), 64) == pytest.approx(1.0, abs=1e-12)

    def test_randers(self, randers):
        assert reversibility_constant(randers, ([-1, -1], [1, 1]), 720) == pytest.approx(3.0, abs=1e-6)

    def test_single_orthogonal_sample(self, randers):
        assert reversibility_constant(randers, ([-1, -1], [1, 1]), 1) == pytest.approx(1.0, abs=1e-12)

    def test_empty_region(self, flat):
        with pytest.raises(DomainError):
            reversibility_constant(flat, ([1, 1], [1, 2]), 8)
