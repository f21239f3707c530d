from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial import cKDTree

from core.circles import SphereCircle, circle_intersections
from core.errors import ChainError, GeometryError
from core.kleinian import (CoveringChain, InversionGroup, PairClass, Polyline, Side, build_chain, check_chain,
                           classify_pair_product, covered_mask, cut_corners, equator_chain, equator_chain_for_delta,
                           fixed_points, genus_of_quotient, limit_set, orthogonal_radius, orthogonal_spacing,
                           random_orbit_points, regions, side_of, verify_lens_incidence, verify_neighborhood,
                           verify_relations)
from core.moebius import compose, inversion_in_circle, sphere_point

E1, E2, E3 = np.eye(3)


def _latitude(z: float, count: int) -> np.ndarray:
    theta = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    s = np.sqrt(1.0 - z * z)
    return np.column_stack([s * np.cos(theta), s * np.sin(theta), np.full(count, z)])


def _max_gap(points: np.ndarray, cloud_points: np.ndarray) -> float:
    chords, _ = cKDTree(cloud_points).query(points)
    return float(2.0 * np.arcsin(chords.max() / 2.0))


@pytest.fixture(scope="module")
def chain():
    return equator_chain(12)


@pytest.fixture(scope="module")
def cloud(chain):
    return limit_set(InversionGroup.from_chain(chain), prune_tol=2e-2, max_depth=30, workers=1)


class TestEquatorChain:
    def test_passes_checks(self, chain):
        report = check_chain(chain)
        assert report.ok, report.failures
        assert report.orthogonality_residual < 1e-8
        assert report.uncovered_samples == 0
        assert report.min_gap > 0.0

    @pytest.mark.parametrize("count", [4, 7])
    def test_rejects_bad_count(self, count):
        with pytest.raises(ChainError):
            equator_chain(count)

    def test_chain_needs_six_circles(self, chain):
        with pytest.raises(ChainError):
            CoveringChain(circles=chain.circles[:4], target_curve=chain.target_curve, delta=chain.delta)

    def test_for_delta(self):
        short = equator_chain_for_delta(0.3)
        assert short.radii().max() <= 0.3
        assert check_chain(short).ok

    def test_perturbed_radius_fails(self, chain):
        circles = list(chain.circles)
        circles[0] = SphereCircle.from_center(circles[0].normal, circles[0].angular_radius + 1e-3)
        broken = CoveringChain(circles=tuple(circles), target_curve=chain.target_curve, delta=1.0)
        report = check_chain(broken)
        assert not report.ok
        assert report.orthogonality_residual > 1e-8
        relations = verify_relations(InversionGroup.from_chain(broken))
        assert not relations.ok
        assert all(name.startswith("g") for name in relations.failures)

    def test_gap_between_neighbours(self, chain, cloud):
        circles = list(chain.circles)
        circles[0] = SphereCircle.from_center(circles[0].normal, 0.1)
        broken = CoveringChain(circles=tuple(circles), target_curve=chain.target_curve, delta=chain.delta)
        report = check_chain(broken)
        assert not report.ok
        assert any("do not meet" in failure for failure in report.failures)
        assert {0, 11} <= set(report.failing_circles)
        lens = verify_lens_incidence(cloud, broken)
        assert {0, 11} <= set(lens.missing)
        assert np.isnan(lens.corner_distances[0][0])

    def test_obstacle_collision(self, chain):
        report = check_chain(chain, obstacles=[SphereCircle.from_center(E1, 0.05)])
        assert not report.ok
        assert 0 in report.failing_circles

    def test_json_round_trip(self, chain):
        restored = CoveringChain.from_json(chain.to_json())
        assert len(restored) == len(chain)
        assert_allclose(restored.centers(), chain.centers())
        assert restored.delta == chain.delta


class TestRelations:
    def test_equator_group(self, chain):
        report = verify_relations(InversionGroup.from_chain(chain))
        assert report.ok, report.failures
        assert max(v for k, v in report.residuals.items() if k.startswith("f")) < 1e-10
        assert len(report.residuals) == 2 * len(chain) + 1

    def test_genus(self, chain):
        assert genus_of_quotient(chain) == 5
        assert genus_of_quotient(equator_chain(6)) == 2

    @pytest.mark.parametrize("L", [3, 4, 5, 8])
    def test_relations_and_genus(self, L):
        chain = equator_chain(2 * L)
        report = verify_relations(InversionGroup.from_chain(chain))
        assert report.ok, report.failures
        assert len(report.residuals) == 4 * L + 1
        assert report.margin > 0.0
        assert genus_of_quotient(chain) == L - 1

    def test_word_map(self, chain):
        group = InversionGroup.from_chain(chain)
        assert group.word_map([3, 3]).is_identity()
        assert group.word_map([0, 1, 0, 1]).is_identity()


class TestPairClassification:
    def test_orthogonal(self):
        assert classify_pair_product(SphereCircle(E1, 0.0), SphereCircle(E2, 0.0)) is PairClass.ELLIPTIC_ORDER2

    def test_disjoint(self):
        assert classify_pair_product(SphereCircle(E3, 0.5), SphereCircle(-E3, 0.5)) is PairClass.LOXODROMIC

    def test_tangent(self):
        a = SphereCircle.from_center(E3, np.pi / 4)
        b = SphereCircle.from_center(E1, np.pi / 4)
        assert classify_pair_product(a, b) is PairClass.PARABOLIC

    def test_fixed_points_of_disjoint_pair(self):
        a, b = SphereCircle(E3, 0.5), SphereCircle(-E3, 0.5)
        points = fixed_points(compose(inversion_in_circle(a), inversion_in_circle(b)))
        assert len(points) == 2
        assert sorted(round(float(p[2]), 9) for p in points) == [-1.0, 1.0]


class TestPolyline:
    def test_too_short(self):
        with pytest.raises(GeometryError):
            Polyline(np.array([E1, E2]))

    def test_length_and_distance(self):
        line = Polyline(_latitude(0.0, 8))
        assert line.length == pytest.approx(2.0 * np.pi)
        assert line.distance(np.array([E3]))[0] == pytest.approx(np.pi / 2)
        assert line.distance(np.array([E1]))[0] == pytest.approx(0.0, abs=1e-12)

    def test_cut_corners_of_octant(self):
        out = cut_corners(np.array([E1, E2, E3]), 0.1)
        assert len(out) == 6
        assert_allclose(np.linalg.norm(out, axis=1), 1.0)
        assert_allclose(np.arccos(np.clip(out[:2] @ E1, -1.0, 1.0)), [0.1, 0.1], atol=1e-12)

    def test_cut_corners_keeps_smooth_curve(self):
        pts = _latitude(0.3, 40)
        assert_allclose(cut_corners(pts, 0.1), pts)


class TestSides:
    def test_side_of(self, chain):
        sides = side_of(chain, np.array([sphere_point(0.1, 0.2, 1.0), sphere_point(0.1, 0.2, -1.0), E1]))
        assert sides == [Side.PLUS, Side.MINUS, Side.COVERED]

    def test_covered_mask(self, chain):
        mask = covered_mask(chain, np.array([E1, E3, sphere_point(1.0, 0.0, 0.01)]))
        assert mask.tolist() == [True, False, True]

    def test_regions(self, chain):
        partition = regions(chain, samples=4000)
        assert partition.components == {"plus": 1, "minus": 1}
        assert np.all(partition.of(Side.PLUS)[:, 2] > 0.0)
        assert np.all(partition.of(Side.MINUS)[:, 2] < 0.0)


class TestLimitSet:
    def test_on_equator(self, cloud):
        assert len(cloud.points) > 100
        assert np.abs(cloud.points[:, 2]).max() < 1e-8

    def test_sorted_and_deduplicated(self, cloud):
        order = np.lexsort(cloud.points.T[::-1])
        assert_allclose(cloud.points[order], cloud.points)
        assert cloud.emitted >= len(cloud.points)

    def test_neighborhood_and_lenses(self, chain, cloud):
        assert verify_neighborhood(cloud, chain).ok
        lens = verify_lens_incidence(cloud, chain)
        assert lens.ok, lens.missing
        assert len(lens.corner_distances) == len(chain)

    def test_dense_on_equator(self, cloud):
        theta = np.linspace(0.0, 2.0 * np.pi, 3600, endpoint=False)
        equator = np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)])
        assert _max_gap(equator, cloud.points) <= 2.0 * cloud.prune_tol

    def test_even_generators_keep_cloud(self, chain, cloud):
        group = InversionGroup.from_chain(chain)
        for g in group.generators_g:
            assert _max_gap(g.apply_points(cloud.points), cloud.points) <= 2.0 * cloud.prune_tol

    def test_rejects_bad_tolerance(self, chain):
        with pytest.raises(GeometryError):
            limit_set(InversionGroup.from_chain(chain), prune_tol=0.0)

    def test_empty_cloud_fails_checks(self, chain, cloud):
        empty = replace(cloud, points=np.empty((0, 3)))
        assert not verify_neighborhood(empty, chain).ok
        assert not verify_lens_incidence(empty, chain).ok

    def test_random_orbit_near_equator(self, chain):
        points = random_orbit_points(InversionGroup.from_chain(chain), 200, seed=3)
        assert np.abs(points[:, 2]).max() < 1e-6


class TestBuildChain:
    def test_latitude_curve(self):
        curve = _latitude(0.4, 90)
        built = build_chain(curve, 0.15)
        report = check_chain(built)
        assert report.ok, report.failures
        assert len(built) % 2 == 0
        assert built.radii().max() <= 0.15 + 1e-12
        assert verify_relations(InversionGroup.from_chain(built)).ok

    def test_respects_obstacle(self):
        obstacle = SphereCircle.from_center(E3, 0.6)
        built = build_chain(_latitude(0.0, 90), 0.2, obstacles=[obstacle])
        assert check_chain(built, obstacles=[obstacle]).ok

    def test_rejects_non_positive_delta(self):
        with pytest.raises(ChainError):
            build_chain(_latitude(0.0, 30), 0.0)

    def test_curve_through_obstacle(self):
        with pytest.raises(ChainError) as info:
            build_chain(_latitude(0.0, 60), 0.1, obstacles=[SphereCircle.from_center(E1, 0.2)])
        assert info.value.segment is not None

    def test_small_radii_meet_exactly(self):
        built = build_chain(_latitude(0.99999, 90), 1e-4)
        report = check_chain(built)
        assert report.ok, report.failures
        assert report.orthogonality_residual < 1e-8
        assert built.radii().max() <= 1e-4 + 1e-12
        n = len(built)
        for i in range(n):
            p, q = circle_intersections(built.circles[i], built.circles[(i + 1) % n])
            assert np.linalg.norm(p - q) > 0.0
        assert verify_relations(InversionGroup.from_chain(built)).ok


class TestOrthogonalSpacing:
    @pytest.mark.parametrize("r0,r1", [(1e-4, 1e-4), (1e-4, 3e-4), (0.01, 0.02), (0.3, 0.2), (1.0, 0.5)])
    def test_radius_inverts_spacing(self, r0, r1):
        assert orthogonal_radius(orthogonal_spacing(r0, r1), r0) == pytest.approx(r1, rel=1e-9)

    def test_equator_chain(self, chain):
        g = 2.0 * np.pi / len(chain)
        alpha = chain.circles[0].angular_radius
        assert orthogonal_spacing(alpha, alpha) == pytest.approx(g, abs=1e-14)
        assert orthogonal_radius(g, alpha) == pytest.approx(alpha, abs=1e-12)

    def test_too_close_gives_zero(self):
        assert orthogonal_radius(0.05, 0.1) == 0.0
