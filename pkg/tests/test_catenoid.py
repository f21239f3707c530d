from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.catenoid import (FermiFrame, GeneratingCurve, SolidCatenoid, SolverParams, ThresholdEstimates,
                           area_deficit, catenoids_for_distance, catenoids_for_pair, coaxial_axis,
                           existence_threshold, geodesic_plane_points, mean_curvature_residual, normalize_pair,
                           plane_separation, solid_contains, solve_generating_curve, standard_pair)
from core.circles import CirclePair, SphereCircle, plane_distance_dL
from core.config import settings
from core.errors import GeometryError
from core.moebius import MobiusMap, sphere_point

E1, E2, E3 = np.eye(3)


@pytest.fixture(scope="module")
def neck_curve():
    return solve_generating_curve(0.5)


@pytest.fixture(scope="module")
def standard_solution(d0_bracket):
    estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
    solutions = catenoids_for_distance(0.6, estimates)
    return solutions[0]


class TestGeneratingCurve:
    def test_rejects_non_positive_neck(self):
        with pytest.raises(GeometryError):
            solve_generating_curve(0.0)

    def test_neck_is_minimum(self, neck_curve):
        r = neck_curve.samples[:, 1]
        assert r.min() == pytest.approx(0.5, abs=1e-9)

    def test_symmetric_profile(self, neck_curve):
        t = neck_curve.samples[:, 0]
        ahead = neck_curve.samples[t > 0.0]
        behind = neck_curve.samples[t < 0.0][::-1]
        n = min(len(ahead), len(behind))
        assert n > 100
        assert_allclose(ahead[:n, 0], -behind[:n, 0], atol=1e-8)
        assert_allclose(ahead[:n, 1], behind[:n, 1], atol=1e-8)

    def test_residual_small(self, neck_curve):
        assert mean_curvature_residual(neck_curve) < 1e-5

    @pytest.mark.parametrize("a", [1e-3, 1e-2, 0.1, 0.5, 1.0, 5.0])
    def test_residual_small_for_all_necks(self, a):
        curve = solve_generating_curve(a)
        assert curve.samples[:, 1].min() == pytest.approx(a, rel=1e-8)
        assert mean_curvature_residual(curve) < 1e-5

    def test_conserved_quantity(self, neck_curve):
        assert neck_curve.conserved == pytest.approx(np.sinh(0.5) * np.cosh(0.5))
        assert neck_curve.t_inf > neck_curve.t_cut > 0.0

    def test_separation_matches_solver(self, neck_curve):
        assert plane_separation(0.5) == pytest.approx(neck_curve.plane_separation, abs=1e-9)

    def test_separation_vanishes_at_extremes(self):
        assert plane_separation(1e-3) < 0.05
        assert plane_separation(5.0) < plane_separation(0.5)


class TestResidualSensitivity:
    def test_perturbed_curve_fails(self, neck_curve):
        samples = neck_curve.samples.copy()
        samples[:, 1] *= 1.01
        assert mean_curvature_residual(replace(neck_curve, samples=samples)) > 1e-2

    def test_constant_radius_is_not_minimal(self):
        t = np.linspace(-1.0, 1.0, 400)
        samples = np.column_stack([t, np.full_like(t, 0.7)])
        curve = GeneratingCurve(0.7, samples, 2.0, 8.7, 1.0, 0.0)
        assert mean_curvature_residual(curve) > 1.0

    def test_too_few_samples(self):
        curve = GeneratingCurve(0.7, np.ones((10, 2)), 2.0, 8.7, 1.0, 0.0)
        with pytest.raises(GeometryError):
            mean_curvature_residual(curve)


class TestExistenceThreshold:
    def test_positive_and_finite(self, d0_bracket):
        assert 0.0 < d0_bracket.value < np.inf
        lo, hi = d0_bracket.interval
        assert lo <= d0_bracket.value == hi

    def test_is_maximum(self, d0_bracket, rng):
        for a in rng.uniform(0.01, 4.0, 20):
            assert plane_separation(a) <= d0_bracket.value + 1e-9

    def test_matches_dense_scan(self, d0_bracket):
        grid = np.linspace(d0_bracket.neck - 0.01, d0_bracket.neck + 0.01, 201)
        scan = max(plane_separation(a) for a in grid)
        assert scan == pytest.approx(d0_bracket.value, abs=1e-6)

    @pytest.mark.slow
    def test_reproducible_with_tighter_solver(self, d0_bracket):
        tight = existence_threshold(1e-6, SolverParams(rtol=1e-12, atol=1e-14))
        assert tight.value == pytest.approx(d0_bracket.value, abs=1e-6)


class TestCatenoidsForDistance:
    def test_zero_distance(self):
        assert catenoids_for_distance(0.0) == []

    def test_negative_distance(self):
        with pytest.raises(GeometryError):
            catenoids_for_distance(-0.1)

    def test_beyond_threshold(self, d0_bracket):
        estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
        assert catenoids_for_distance(d0_bracket.value + 0.01, estimates) == []

    def test_two_branches(self, d0_bracket):
        estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
        solutions = catenoids_for_distance(0.6, estimates)
        assert len(solutions) == 2
        necks = [s.curve.neck_parameter for s in solutions]
        assert necks[0] < d0_bracket.neck < necks[1]
        for s in solutions:
            assert s.dL == pytest.approx(0.6, abs=1e-8)
            assert mean_curvature_residual(s.curve) < 1e-5
            pair = s.boundary
            assert plane_distance_dL(pair.first, pair.second) == pytest.approx(s.dL, abs=1e-6)

    @pytest.mark.parametrize("d", [0.02, 0.1, 0.5])
    def test_short_distances_solve(self, d0_bracket, d):
        estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
        solutions = catenoids_for_distance(d, estimates)
        assert solutions
        for s in solutions:
            assert s.dL == pytest.approx(d, abs=1e-8)
            assert mean_curvature_residual(s.curve) < settings.RESIDUAL_TOL

    def test_thin_neck_branch(self, d0_bracket):
        estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
        thin = min(catenoids_for_distance(0.02, estimates), key=lambda s: s.curve.neck_parameter)
        assert thin.curve.neck_parameter < 0.01
        assert plane_distance_dL(thin.boundary.first, thin.boundary.second) == pytest.approx(0.02, abs=1e-6)

    def test_near_threshold_necks_close(self, d0_bracket):
        estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
        solutions = catenoids_for_distance(d0_bracket.value - 1e-4, estimates)
        assert len(solutions) == 2
        a, b = (s.curve.neck_parameter for s in solutions)
        assert abs(a - b) < 0.2


class TestPairs:
    def test_coaxial_axis_of_horizontal_pair(self):
        p, q = coaxial_axis(CirclePair(SphereCircle(E3, 0.5), SphereCircle(-E3, 0.5)))
        assert_allclose(p, E3, atol=1e-9)
        assert_allclose(q, -E3, atol=1e-9)

    def test_axis_is_equivariant(self):
        pair = CirclePair(SphereCircle(E3, 0.5), SphereCircle(-E3, 0.5))
        m = MobiusMap.from_entries(1.0, 0.4 + 0.2j, -0.3j, 1.1)
        p, q = coaxial_axis(pair.transformed(m))
        assert_allclose(p, m.apply_points(E3), atol=1e-9)
        assert_allclose(q, m.apply_points(-E3), atol=1e-9)

    def test_normalize_pair(self):
        pair = CirclePair(SphereCircle.from_center(sphere_point(1.0, 0.3, 0.2), 0.4),
                          SphereCircle.from_center(sphere_point(-0.2, 1.0, -0.5), 0.6))
        m, t_inf = normalize_pair(pair)
        assert 2.0 * t_inf == pytest.approx(plane_distance_dL(pair.first, pair.second), abs=1e-9)
        image = standard_pair(t_inf).transformed(m)
        for got, want in ((image.first, pair.first), (image.second, pair.second)):
            assert_allclose(got.normal, want.normal, atol=1e-8)
            assert got.offset == pytest.approx(want.offset, abs=1e-8)

    def test_catenoids_for_pair_keep_boundary(self, d0_bracket):
        pair = CirclePair(SphereCircle.from_center(E1, 1.2), SphereCircle.from_center(-E1, 1.2))
        estimates = ThresholdEstimates(d0=d0_bracket, d1=d0_bracket)
        solutions = catenoids_for_pair(pair, estimates)
        assert len(solutions) == 2
        for s in solutions:
            assert s.boundary is pair
            assert_allclose(s.axis[0], E1, atol=1e-9)


class TestSolidCatenoid:
    def test_fermi_coordinates_round_trip(self, standard_solution):
        frame = FermiFrame.for_solution(standard_solution)
        t = np.array([-0.2, 0.0, 0.25])
        r = np.array([0.1, 0.7, 1.5])
        theta = np.array([0.0, 1.0, 4.0])
        got_t, got_r = frame.coordinates(frame.to_ball(t, r, theta))
        assert_allclose(got_t, t, atol=1e-9)
        assert_allclose(got_r, r, atol=1e-9)

    def test_axis_midpoint_inside(self, standard_solution):
        solid = SolidCatenoid(standard_solution)
        assert solid_contains(solid, [0.0, 0.0])
        assert solid_contains(solid, np.zeros(3))

    def test_boundary_disk_center_inside(self, standard_solution):
        solid = SolidCatenoid(standard_solution)
        assert solid_contains(solid, E3)
        assert solid_contains(solid, -E3)

    def test_equator_outside(self, standard_solution):
        solid = SolidCatenoid(standard_solution)
        assert not solid_contains(solid, E1)
        assert not solid_contains(solid, 0.99 * E2)

    def test_surface_samples_on_boundary(self, standard_solution):
        solid = SolidCatenoid(standard_solution)
        points = solid.surface_samples(400)
        t, r = solid.frame.coordinates(points)
        assert_allclose(np.abs(t), solid.profile_t(r), atol=1e-3)


class TestGeodesicPlane:
    def test_equatorial_plane(self):
        points = geodesic_plane_points(SphereCircle(E3, 0.0), rings=6, spokes=12)
        assert_allclose(points[:, 2], 0.0, atol=1e-12)
        assert np.all(np.linalg.norm(points, axis=1) < 1.0)

    def test_approaches_boundary_circle(self):
        circle = SphereCircle.from_center(sphere_point(1.0, 1.0, 0.0), 0.5)
        points = geodesic_plane_points(circle, rings=8, spokes=16, max_radius=10.0)
        outer = points[-16:]
        directions = outer / np.linalg.norm(outer, axis=1, keepdims=True)
        assert_allclose(directions @ circle.normal, circle.offset, atol=1e-3)


@pytest.mark.slow
class TestThresholds:
    def test_ordering(self, thresholds):
        assert 0.0 < thresholds.d1.value <= thresholds.d0.value
        assert thresholds.limit == thresholds.d1.value

    def test_brackets_are_tight(self, thresholds):
        lo, hi = thresholds.d1.interval
        assert lo <= thresholds.d1.value <= hi
        assert hi - lo < 1e-4

    def test_least_area_neck_on_wide_branch(self, thresholds):
        assert thresholds.d1.neck >= thresholds.d0.neck

    def test_round_trip_json(self, thresholds):
        restored = ThresholdEstimates.from_json(thresholds.to_json())
        assert restored.d0.value == thresholds.d0.value
        assert restored.d1.neck_interval == tuple(thresholds.d1.neck_interval)
        assert len(restored.table) == 12

    def test_deficit_changes_sign_across_d1(self, thresholds):
        d1 = thresholds.d1.value
        deficits = []
        for d in (d1 - 0.02, d1 + 0.02):
            wide = max(catenoids_for_distance(d, thresholds), key=lambda s: s.curve.neck_parameter)
            deficits.append(wide.area_deficit)
        assert deficits[0] < 0.0 < deficits[1]

    def test_deficit_vanishes_at_d1_neck(self, thresholds):
        neck = thresholds.d1.neck
        assert area_deficit(neck - 0.05) > 0.0 > area_deficit(neck + 0.05)
        assert abs(area_deficit(neck)) < 1e-4
