import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.circles import SphereCircle
from core.errors import GeometryError
from core.moebius import (INFINITY, MobiusMap, Orientation, StereographicChart, compose, cross_ratio,
                          inversion_in_circle, rotation_as_mobius, rotation_matrix, sphere_point)


def _random_map(rng) -> MobiusMap:
    entries = rng.normal(size=4) + 1j * rng.normal(size=4)
    return MobiusMap.from_entries(*entries)


def _random_points(rng, count):
    pts = rng.normal(size=(count, 3))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


class TestCrossRatio:
    def test_fixture_value(self):
        assert cross_ratio(-1, -1 / 3, 1 / 3, 1) == pytest.approx(4.0)

    def test_harmonic_with_infinity(self):
        assert cross_ratio(0, 1, -1, INFINITY) == pytest.approx(-1.0)

    def test_coincident_points_rejected(self):
        with pytest.raises(GeometryError):
            cross_ratio(1, 1, 2, 3)

    def test_two_infinities_rejected(self):
        with pytest.raises(GeometryError):
            cross_ratio(INFINITY, INFINITY, 0, 1)

    def test_invariant_under_preserving_maps(self, rng):
        z = [0.3 + 0.1j, -1.2 + 0.5j, 2.0 - 0.7j, 0.05 - 1.1j]
        for _ in range(10):
            m = _random_map(rng)
            assert cross_ratio(*[m(w) for w in z]) == pytest.approx(cross_ratio(*z), rel=1e-9)

    def test_conjugated_by_reversing_maps(self):
        z = [0.3 + 0.1j, -1.2 + 0.5j, 2.0 - 0.7j, 0.05 - 1.1j]
        m = inversion_in_circle(SphereCircle(np.array([0.0, 0.0, 1.0]), 0.0))
        assert cross_ratio(*[m(w) for w in z]) == pytest.approx(np.conj(cross_ratio(*z)), rel=1e-9)


class TestMobiusMap:
    def test_degenerate_matrix_rejected(self):
        with pytest.raises(GeometryError):
            MobiusMap.from_entries(1, 2, 2, 4)

    def test_normalized_determinant(self, rng):
        m = _random_map(rng)
        det = np.linalg.det(m.matrix)
        assert abs(det) == pytest.approx(1.0)

    def test_inverse(self, rng):
        for _ in range(5):
            m = _random_map(rng)
            assert compose(m, m.inverse()).is_identity()
            assert compose(m.inverse(), m).is_identity()

    def test_compose_is_function_composition(self, rng):
        m1, m2 = _random_map(rng), _random_map(rng)
        z = 0.4 - 0.9j
        assert compose(m1, m2)(z) == pytest.approx(m1(m2(z)))

    def test_infinity_handling(self):
        m = MobiusMap.from_entries(2, 1, 1, 1)
        assert m(INFINITY) == pytest.approx(2.0)
        assert m(-1.0) is INFINITY

    def test_reversing_composition_orientation(self):
        f = inversion_in_circle(SphereCircle(np.array([1.0, 0.0, 0.0]), 0.2))
        assert f.reversing
        assert compose(f, f).orientation is Orientation.PRESERVING
        assert compose(f, f).is_identity()

    def test_reversing_map_never_identity(self):
        f = inversion_in_circle(SphereCircle(np.array([0.0, 0.0, 1.0]), 0.0))
        assert f.distance_to_identity() == float("inf")
        assert not f.is_identity()

    def test_apply_points_matches_chart(self, rng):
        m = _random_map(rng)
        for p in _random_points(rng, 5):
            w = StereographicChart.project(p)
            expected = StereographicChart.unproject(m(w))
            assert_allclose(m.apply_points(p), expected, atol=1e-9)


class TestInversion:
    def test_fixes_circle_pointwise(self):
        circle = SphereCircle.from_center(sphere_point(1.0, 2.0, 0.5), 0.7)
        f = inversion_in_circle(circle)
        pts = circle.sample(16)
        assert_allclose(f.apply_points(pts), pts, atol=1e-10)

    def test_swaps_disk_and_complement(self, rng):
        circle = SphereCircle.from_center(sphere_point(0.2, -0.4, 1.0), 0.9)
        f = inversion_in_circle(circle)
        pts = _random_points(rng, 200)
        pts = pts[np.abs(circle.signed_distance(pts)) > 1e-3]
        assert np.all(circle.contains(f.apply_points(pts)) != circle.contains(pts))

    def test_equator_swaps_poles(self):
        f = inversion_in_circle(SphereCircle(np.array([0.0, 0.0, 1.0]), 0.0))
        assert_allclose(f.apply_points(np.array([0.0, 0.0, 1.0])), [0.0, 0.0, -1.0], atol=1e-12)

    def test_point_circle_rejected(self):
        with pytest.raises(GeometryError):
            inversion_in_circle(SphereCircle(np.array([0.0, 0.0, 1.0]), 1.0 - 1e-14))


class TestChart:
    def test_north_pole_is_infinity(self):
        assert StereographicChart.project(np.array([0.0, 0.0, 1.0])) is INFINITY
        assert_allclose(StereographicChart.unproject(INFINITY), [0.0, 0.0, 1.0])

    def test_south_pole_is_origin(self):
        assert StereographicChart.project(np.array([0.0, 0.0, -1.0])) == pytest.approx(0.0)

    def test_unit_circle_is_equator(self):
        p = StereographicChart.unproject(np.exp(0.3j))
        assert p[2] == pytest.approx(0.0, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(GeometryError):
            sphere_point(0.0, 0.0, 0.0)


class TestRotations:
    def test_rotation_as_mobius(self, rng):
        rotation = rotation_matrix(np.array([1.0, 2.0, -0.5]), 1.1)
        m = rotation_as_mobius(rotation)
        assert not m.reversing
        pts = _random_points(rng, 20)
        assert_allclose(m.apply_points(pts), pts @ rotation.T, atol=1e-9)
