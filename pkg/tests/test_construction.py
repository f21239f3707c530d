from dataclasses import replace
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from core.circles import CirclePair, SphereCircle, good_position, plane_distance_dL
from core.construction import (Arrangement, CatenoidStation, ConstructionGeometry, ConstructionSpec, StationKind,
                               VerificationContext, build_geometry, build_jordan_curve, build_parallel_circles,
                               crossing_edges, distinctness_certificates, enumerate_arrangements,
                               place_catenoid_circles, run_pipeline, search_spec, shrink_spec, station_loop,
                               station_side, verify_arrangement)
from core.errors import BuildError, GeometryError
from core.kleinian import Polyline, Side, equator_chain
from core.linking import linking_number
from core.moebius import sphere_point
from core.persistence import dumps, load_default_spec

E3 = np.array([0.0, 0.0, 1.0])


def _spec(**overrides) -> ConstructionSpec:
    params = dict(N=2, epsilon=0.01, bridge_width=3e-4, prime_bridge_width=3e-3)
    params.update(overrides)
    return ConstructionSpec(**params)


@pytest.fixture(scope="module")
def curve():
    return build_jordan_curve(_spec())


@pytest.fixture(scope="module")
def placed(curve):
    return place_catenoid_circles(_spec(), curve, limit=1.0)


def _with_sides(stations):
    side = {StationKind.BRIDGE: Side.PLUS, StationKind.CIRCLE_PAIR: Side.MINUS, StationKind.PRIME_BRIDGE: Side.PLUS}
    return [replace(s, side=side[s.kind]) for s in stations]


def _fake_certificate(valid: bool) -> SimpleNamespace:
    return SimpleNamespace(valid=valid, spec=None, criteria=lambda: {"chain": {"passed": True, "margin": 0.1},
                                                                     "distinctness": {"passed": valid, "margin": 0.0}})


def _recheck(certificate, thresholds, name, geometry=None, cloud=None, arrangement=None):
    geometry = geometry or certificate.geometry
    cloud = certificate.cloud if cloud is None else cloud
    arrangement = arrangement or enumerate_arrangements(geometry.spec.N, geometry.stations)[0]
    context = VerificationContext(geometry, cloud, thresholds)
    return verify_arrangement(arrangement, geometry, cloud, context).checks[name]


class TestConstructionSpec:
    def test_required_fields(self):
        with pytest.raises(ValidationError):
            ConstructionSpec(N=2, epsilon=0.01)

    def test_bounds(self):
        with pytest.raises(ValidationError):
            _spec(N=0)
        with pytest.raises(ValidationError):
            _spec(epsilon=0.0)

    def test_extra_fields_forbidden(self):
        with pytest.raises(ValidationError):
            _spec(colour="red")

    def test_defaults(self):
        spec = _spec()
        assert spec.delta == 0.01
        assert spec.prune_tol == 5e-4
        assert spec.max_depth == 30


class TestParallelCircles:
    def test_heights(self):
        pairs = build_parallel_circles(2, 0.01)
        assert len(pairs) == 2
        assert pairs[0].first.offset == pytest.approx(1.0 / 3.0 + 0.01)
        assert pairs[0].second.offset == pytest.approx(-(1.0 / 3.0 - 0.01))
        assert pairs[1].first.offset == pytest.approx(-1.0 / 3.0 + 0.01)

    def test_good_position(self):
        pairs = build_parallel_circles(4, 0.01)
        assert good_position([c for p in pairs for c in (p.first, p.second)])

    def test_thin_pairs_are_close(self):
        for pair in build_parallel_circles(3, 0.01):
            assert plane_distance_dL(pair.first, pair.second) < 0.05

    def test_collision(self):
        with pytest.raises(GeometryError) as info:
            build_parallel_circles(3, 0.3)
        assert info.value.details["pairs"] == [1, 2]

    @pytest.mark.parametrize("N,epsilon", [(0, 0.01), (2, 0.0), (2, -0.1)])
    def test_rejects_bad_input(self, N, epsilon):
        with pytest.raises(GeometryError):
            build_parallel_circles(N, epsilon)


class TestCrossingEdges:
    def _square(self, order):
        corners = {"a": (0.0, 0.0), "b": (0.1, 0.0), "c": (0.1, 0.1), "d": (0.0, 0.1)}
        return np.array([sphere_point(x, y, 1.0) for x, y in (corners[k] for k in order)])

    def test_simple_square(self):
        assert crossing_edges(self._square("abcd")) == []

    def test_bowtie(self):
        assert crossing_edges(self._square("acbd")) == [(0, 2)]


class TestJordanCurve:
    def test_simple_and_on_sphere(self, curve):
        assert_allclose(np.linalg.norm(curve.points, axis=1), 1.0)
        assert crossing_edges(curve.points) == []

    def test_bridge_count(self, curve):
        assert curve.bridge_count == 3
        assert curve.layout.N == 2

    def test_layout_matches_parallel_pairs(self, curve):
        pairs = build_parallel_circles(2, 0.01)
        for i, pair in enumerate(pairs):
            assert np.cos(curve.layout.tops[i]) == pytest.approx(pair.first.offset)
            assert np.cos(curve.layout.bottoms[i]) == pytest.approx(-pair.second.offset)

    def test_wide_channel_near_pole_rejected(self):
        parallel = [CirclePair(SphereCircle(E3, 0.995), SphereCircle(-E3, -0.985))]
        with pytest.raises(GeometryError):
            build_jordan_curve(_spec(N=1, bridge_width=0.45), parallel)


class TestStations:
    def test_counts_and_labels(self, placed):
        stations, clearance = placed
        assert len(stations) == 5
        assert [s.label for s in stations] == ["B1", "B2", "C1", "C2", "B'1"]
        assert clearance == pytest.approx(4e-4)

    def test_below_limit_and_in_good_position(self, placed):
        stations, _ = placed
        assert max(s.dL for s in stations) <= 1.0 - 0.02
        assert good_position([c for s in stations for c in s.circles])

    def test_clear_of_curve(self, curve, placed):
        stations, clearance = placed
        line = Polyline(curve.points)
        for s in stations:
            for c in s.circles:
                assert line.distance(c.normal[None, :])[0] - c.angular_radius > 0.5 * clearance

    def test_unreachable_limit(self, curve):
        with pytest.raises(GeometryError) as info:
            place_catenoid_circles(_spec(), curve, limit=0.05)
        assert info.value.details["station"].startswith("B")

    def test_json_round_trip(self, placed):
        station = placed[0][0]
        restored = CatenoidStation.from_json(station.to_json())
        assert restored.label == station.label
        assert_allclose(restored.route, station.route)
        assert restored.side is None

    def test_loop_stays_in_ball(self, placed):
        loop = station_loop(placed[0][2])
        assert np.linalg.norm(loop, axis=1).max() <= 1.0 + 1e-9
        assert len(loop) > 100


class TestCounts:
    @pytest.mark.parametrize("N", [1, 2, 3, 4, 5])
    def test_shipped_defaults(self, N):
        spec = load_default_spec(N)
        curve = build_jordan_curve(spec)
        stations, _ = place_catenoid_circles(spec, curve, limit=1.0)
        assert curve.bridge_count == 2 * N - 1
        assert len(stations) == 3 * N - 1
        assert len([c for s in stations for c in s.circles]) == 6 * N - 2
        for s in stations:
            assert s.dL == pytest.approx(plane_distance_dL(s.pair.first, s.pair.second))
        arrangements = enumerate_arrangements(N, stations)
        assert len(arrangements) == 2 ** N
        assert all(len(a.stations) == 2 * N - 1 for a in arrangements)
        assert len({a.stations for a in arrangements}) == 2 ** N

    def test_three_pairs(self):
        spec = load_default_spec(3)
        stations, _ = place_catenoid_circles(spec, build_jordan_curve(spec), limit=1.0)
        circles = [c for s in stations for c in s.circles]
        assert (len(circles), len(stations)) == (16, 8)
        assert good_position(circles).ok
        assert [len(a.stations) for a in enumerate_arrangements(3, stations)] == [5] * 8


class TestStationSide:
    def test_both_circles_north(self):
        chain = equator_chain(12)
        pair = CirclePair(SphereCircle.from_center(sphere_point(0.2, 0.0, 1.0), 0.1),
                          SphereCircle.from_center(sphere_point(-0.2, 0.0, 1.0), 0.1))
        station = CatenoidStation(StationKind.BRIDGE, 0, pair, np.array([pair.first.normal]), 0.5)
        assert station_side(station, chain) is Side.PLUS

    def test_reflected_foot_is_undecided(self):
        chain = equator_chain(12)
        pair = CirclePair(SphereCircle.from_center(sphere_point(0.2, 0.0, 1.0), 0.1),
                          SphereCircle.from_center(sphere_point(0.2, 0.0, -1.0), 0.1))
        station = CatenoidStation(StationKind.CIRCLE_PAIR, 0, pair, np.array([pair.first.normal]), 0.5)
        assert station_side(station, chain) is None

    def test_circle_on_covering_is_undecided(self):
        chain = equator_chain(12)
        pair = CirclePair(SphereCircle.from_center(sphere_point(1.0, 0.0, 0.2), 0.1),
                          SphereCircle.from_center(sphere_point(-0.2, 0.0, 1.0), 0.1))
        station = CatenoidStation(StationKind.BRIDGE, 0, pair, np.array([pair.first.normal]), 0.5)
        assert station_side(station, chain) is None


class TestArrangements:
    def test_all_choices(self, placed):
        stations, _ = placed
        arrangements = enumerate_arrangements(2, stations)
        assert [a.choices for a in arrangements] == ["BB", "BC", "CB", "CC"]
        assert [a.stations for a in arrangements] == [(0, 1, 4), (0, 3, 4), (2, 1, 4), (2, 3, 4)]

    def test_count_is_power_of_two(self, placed):
        stations, _ = placed
        assert len(enumerate_arrangements(2, stations)) == 4
        assert all(len(a.stations) == 3 for a in enumerate_arrangements(2, stations))


class TestDistinctness:
    def test_complete_with_linked_witnesses(self, placed):
        stations = _with_sides(placed[0])
        arrangements = enumerate_arrangements(2, stations)
        calls = []

        def linking(a, b):
            calls.append((a, b))
            return 1

        matrix = distinctness_certificates(arrangements, stations, linking)
        assert matrix.complete
        assert matrix.witnessed_pairs == 6
        assert matrix.entries[0][1] == (2, 1)
        assert matrix.entries[0][3] == (1, 1)
        assert matrix.entries[3][0] == matrix.entries[0][3]
        assert sorted(set(calls)) == [(0, 2), (1, 3)]

    def test_band_stations_link(self, placed):
        stations = placed[0]
        for i in range(2):
            b = next(s for s in stations if s.kind is StationKind.BRIDGE and s.index == i)
            c = next(s for s in stations if s.kind is StationKind.CIRCLE_PAIR and s.index == i)
            assert abs(linking_number(station_loop(b), station_loop(c))) == 1

    def test_complete_with_computed_linking(self, placed):
        stations = _with_sides(placed[0])
        matrix = distinctness_certificates(enumerate_arrangements(2, stations), stations)
        assert matrix.complete
        assert all(abs(entry[1]) == 1 for row in matrix.entries for entry in row if entry is not None)

    def test_unlinked_bands_give_no_witness(self, placed):
        stations = _with_sides(placed[0])
        matrix = distinctness_certificates(enumerate_arrangements(2, stations), stations, lambda a, b: 0)
        assert not matrix.complete
        assert matrix.witnessed_pairs == 0

    def test_same_side_never_links(self, placed):
        stations = [replace(s, side=Side.PLUS) for s in placed[0]]

        def linking(a, b):
            raise AssertionError("linking computed for stations on one side")

        matrix = distinctness_certificates(enumerate_arrangements(2, stations), stations, linking)
        assert matrix.witnessed_pairs == 0

    def test_json_shape(self, placed):
        stations = _with_sides(placed[0])
        matrix = distinctness_certificates(enumerate_arrangements(2, stations), stations, lambda a, b: -1)
        data = matrix.to_json()
        assert data["arrangements"] == ["BB", "BC", "CB", "CC"]
        assert data["entries"][0][0] is None
        assert data["entries"][1][2] == {"index": 1, "linking": -1}


class TestBuildFailures:
    def test_oversized_epsilon_names_stage(self):
        with pytest.raises(BuildError) as info:
            build_geometry(_spec(N=3, epsilon=0.3))
        assert info.value.stage == "parallel_circles"

    def test_progress_reports_stages(self):
        stages = []
        with pytest.raises(BuildError):
            build_geometry(_spec(N=3, epsilon=0.3), progress=stages.append)
        assert stages == ["parallel_circles"]

    def test_arithmetic_error_names_stage(self):
        with patch("core.construction.build_jordan_curve", side_effect=ZeroDivisionError("division by zero")):
            with pytest.raises(BuildError) as info:
                build_geometry(_spec())
        assert info.value.stage == "jordan_curve"


class TestSearch:
    def test_shrink_halves_widths(self):
        spec = _spec()
        small = shrink_spec(spec)
        assert (small.epsilon, small.bridge_width, small.delta) == (0.005, 1.5e-4, 0.005)
        assert small.catenoid_offset == spec.catenoid_offset / 2.0
        assert (small.N, small.prune_tol, small.max_depth) == (spec.N, spec.prune_tol, spec.max_depth)

    def test_returns_first_valid(self):
        outcomes = [BuildError("chain", "did not converge"), _fake_certificate(False), _fake_certificate(True)]
        with patch("core.construction.run_pipeline", side_effect=outcomes) as mock_run:
            certificate = search_spec(_spec(), thresholds=object(), attempts=4)
        assert certificate.valid
        assert [c.args[0].epsilon for c in mock_run.call_args_list] == [0.01, 0.005, 0.0025]

    def test_gives_up(self):
        with patch("core.construction.run_pipeline", side_effect=BuildError("stations", "dL too large")) as mock_run:
            with pytest.raises(BuildError) as info:
                search_spec(_spec(), thresholds=object(), attempts=3)
        assert info.value.stage == "search"
        assert mock_run.call_count == 3


@pytest.mark.slow
class TestPipeline:
    @pytest.fixture(scope="class")
    def certificate(self, thresholds):
        return run_pipeline(load_default_spec(1), thresholds=thresholds, workers=1)

    def test_valid(self, certificate):
        failed = {name: c for name, c in certificate.criteria().items() if not c["passed"]}
        assert certificate.valid, failed

    def test_reproducible(self, certificate, thresholds):
        again = run_pipeline(certificate.spec, thresholds=thresholds, workers=2)
        assert dumps(again.to_json()) == dumps(certificate.to_json())

    def test_group_checks(self, certificate):
        assert certificate.chain_report.ok, certificate.chain_report.failures
        assert certificate.relations.ok
        assert certificate.genus == certificate.geometry.chain.half_length - 1

    def test_arrangements(self, certificate):
        assert [a.choices for a in certificate.arrangements] == ["B", "C"]
        for record in certificate.arrangements:
            assert set(record.checks) == {"dL_threshold", "least_area", "same_side", "good_position",
                                          "null_homotopy", "catenoid_plane_disjointness",
                                          "limit_set_containment"}

    def test_certificate_json(self, certificate):
        data = certificate.to_json()
        assert data["version"] == 1
        assert data["valid"] == certificate.valid
        assert set(data["criteria"]) >= {"chain", "relations", "distinctness", "null_homotopy"}
        assert data["chain"]["circles"] == len(certificate.geometry.chain)

    def test_geometry_round_trip(self, certificate):
        restored = ConstructionGeometry.from_json(certificate.geometry.to_json())
        assert len(restored.stations) == len(certificate.geometry.stations)
        assert len(restored.chain) == len(certificate.geometry.chain)

    def test_corrupted_arrangement_fails(self, certificate, thresholds):
        geometry = certificate.geometry
        b1 = geometry.stations.index(geometry.station(StationKind.BRIDGE, 0))
        c1 = geometry.stations.index(geometry.station(StationKind.CIRCLE_PAIR, 0))
        context = VerificationContext(geometry, certificate.cloud, thresholds)
        corrupted = Arrangement(index=99, choices="B", stations=(b1, c1))
        report = verify_arrangement(corrupted, geometry, certificate.cloud, context)
        assert not report.valid
        assert not report.checks["null_homotopy"].passed

    def test_low_threshold_fails_dl(self, certificate, thresholds):
        low = replace(thresholds, d0=replace(thresholds.d0, value=1e-3), d1=replace(thresholds.d1, value=1e-3))
        assert _recheck(certificate, thresholds, "dL_threshold").passed
        assert not _recheck(certificate, low, "dL_threshold").passed

    def test_missing_catenoid_fails_least_area(self, certificate, thresholds):
        geometry = certificate.geometry
        arrangement = enumerate_arrangements(1, geometry.stations)[0]
        stations = list(geometry.stations)
        k = arrangement.stations[0]
        stations[k] = replace(stations[k], solution=None)
        broken = replace(geometry, stations=tuple(stations))
        assert not _recheck(certificate, thresholds, "least_area", geometry=broken).passed

    def test_split_pair_fails_same_side(self, certificate, thresholds):
        geometry = certificate.geometry
        b1, c1 = geometry.station(StationKind.BRIDGE, 0), geometry.station(StationKind.CIRCLE_PAIR, 0)
        stations = list(geometry.stations)
        k = stations.index(b1)
        stations[k] = replace(b1, pair=CirclePair(b1.pair.first, c1.pair.first), side=None)
        broken = replace(geometry, stations=tuple(stations))
        arrangement = Arrangement(index=97, choices="B", stations=(k,))
        assert not _recheck(certificate, thresholds, "same_side", geometry=broken, arrangement=arrangement).passed

    def test_repeated_station_fails_good_position(self, certificate, thresholds):
        geometry = certificate.geometry
        b1 = geometry.stations.index(geometry.station(StationKind.BRIDGE, 0))
        arrangement = Arrangement(index=98, choices="B", stations=(b1, b1))
        assert not _recheck(certificate, thresholds, "good_position", arrangement=arrangement).passed

    def test_wide_chain_fails_plane_disjointness(self, certificate, thresholds):
        broken = replace(certificate.geometry, chain=equator_chain(12))
        assert not _recheck(certificate, thresholds, "catenoid_plane_disjointness", geometry=broken).passed

    def test_cloud_in_station_disk_fails_containment(self, certificate, thresholds):
        geometry = certificate.geometry
        arrangement = enumerate_arrangements(1, geometry.stations)[0]
        inside = geometry.stations[arrangement.stations[0]].pair.first.normal
        cloud = replace(certificate.cloud, points=np.vstack([certificate.cloud.points, inside]))
        assert not _recheck(certificate, thresholds, "limit_set_containment", cloud=cloud).passed


@pytest.mark.slow
class TestShippedDefaults:
    @pytest.mark.parametrize("N", [2, 3, 4, 5])
    def test_valid(self, N, thresholds):
        certificate = run_pipeline(load_default_spec(N), thresholds=thresholds)
        failed = {name: c for name, c in certificate.criteria().items() if not c["passed"]}
        assert certificate.valid, failed
        assert len(certificate.arrangements) == 2 ** N
        assert certificate.distinctness.witnessed_pairs == 2 ** N * (2 ** N - 1) // 2
