"""Jordan curves whose reflection groups carry 2^N catenoid barrier arrangements.

The curve is the boundary of N thin horizontal bands. Each band i is cut
by a narrow channel B_i and consecutive bands are joined by a narrow
strip B'_j. Around every channel, band and strip sits a pair of circles
bounding a least-area catenoid (a station). Choosing the channel or the
band station for every i gives one arrangement of 2N - 1 barriers.
"""

import itertools
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial import cKDTree

from core.catenoid import (CatenoidSolution, SolidCatenoid, ThresholdEstimates, catenoids_for_pair,
                           coaxial_axis, geodesic_plane_points, mean_curvature_residual)
from core.circles import CirclePair, SphereCircle, _raw_rho, good_position, plane_distance_dL
from core.config import settings
from core.errors import BuildError, GeometryError, SolverError
from core.kleinian import (NORTH, ChainReport, CoveringChain, InversionGroup, LensReport, LimitSetCloud,
                           NeighborhoodReport, Polyline, RelationReport, Side, _angle, _angle_to_chord,
                           build_chain, check_chain, cut_corners, genus_of_quotient, limit_set, side_of,
                           verify_lens_incidence, verify_neighborhood, verify_relations)
from core.linking import catenoid_loop, great_arc, linking_number
from core.pipeline import load_thresholds

logger = logging.getLogger(__name__)

GEOMETRY_VERSION = 1
CERTIFICATE_VERSION = 1

E3 = np.array([0.0, 0.0, 1.0])
CURVE_SPACING = 5e-3
LATITUDE_ROUTE_SPACING = 1e-2
MERIDIAN_ROUTE_SPACING = 2e-3
MAX_FOOT_RADIUS = 0.6
CLEARANCE_START = 4.0
CLEARANCE_SHRINK = 0.7
WITNESS_DEPTH = 0.01
STATION_SAMPLES = 24
SEARCH_ATTEMPTS = 6
SEARCH_SHRINK = 0.5
SEARCH_FIELDS = ("epsilon", "bridge_width", "prime_bridge_width", "catenoid_offset", "delta")

CHECKS = (
    "dL_threshold",
    "least_area",
    "same_side",
    "good_position",
    "null_homotopy",
    "catenoid_plane_disjointness",
    "limit_set_containment",
)

CAVEATS = [
    "least-area catenoids are selected by comparing their area with the two boundary disks",
    "checks are stated for the reflection group and its even subgroup, which share the limit set "
    "of the torsion-free subgroup",
    "the witness disk is sampled on its strips, channels and caps; the ramps joining them are not sampled",
]


class ConstructionSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(..., ge=1, le=8, description="Number of parallel circle pairs")
    epsilon: float = Field(..., gt=0.0, lt=0.5, description="Half-gap of each parallel pair, in z")
    bridge_width: float = Field(..., gt=0.0, lt=0.5, description="Angular width of the channels B_i")
    prime_bridge_width: float = Field(3e-3, gt=0.0, lt=0.5, description="Angular width of the strips B'_j")
    catenoid_offset: float = Field(1e-4, gt=0.0, lt=0.1,
                                   description="Smallest clearance between station circles and the curve")
    delta: float = Field(0.01, gt=0.0, lt=0.5, description="Covering tolerance")
    prune_tol: float = Field(5e-4, gt=0.0, lt=0.5, description="Limit set resolution")
    max_depth: int = Field(30, ge=1, le=200, description="Limit set word length cap")
    dl_margin: float = Field(0.02, ge=0.0, lt=1.0, description="Required gap below the dL threshold")


class StationKind(str, Enum):
    BRIDGE = "bridge"
    CIRCLE_PAIR = "circle_pair"
    PRIME_BRIDGE = "prime_bridge"


_PREFIX = {StationKind.BRIDGE: "B", StationKind.CIRCLE_PAIR: "C", StationKind.PRIME_BRIDGE: "B'"}


def _sphere(theta, psi) -> np.ndarray:
    theta, psi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(psi, dtype=float))
    s = np.sin(theta)
    return np.stack([s * np.cos(psi), s * np.sin(psi), np.cos(theta)], axis=-1)


def _latitude(theta: float, psi_a: float, psi_b: float, spacing: float) -> np.ndarray:
    count = max(2, int(np.ceil(abs(psi_b - psi_a) * np.sin(theta) / spacing)) + 1)
    return _sphere(theta, np.linspace(psi_a, psi_b, count))


def _meridian(psi: float, theta_a: float, theta_b: float, spacing: float) -> np.ndarray:
    count = max(2, int(np.ceil(abs(theta_b - theta_a) / spacing)) + 1)
    return _sphere(np.linspace(theta_a, theta_b, count), psi)


@dataclass(frozen=True)
class CurveLayout:
    """Colatitudes of the band edges and longitudes of the bridges."""

    tops: Tuple[float, ...]
    bottoms: Tuple[float, ...]
    channel_halfwidths: Tuple[float, ...]
    strip_halfwidths: Tuple[float, ...]

    @property
    def N(self) -> int:
        return len(self.tops)

    @staticmethod
    def channel(i: int) -> float:
        return np.pi * (i % 2)

    def middle(self, i: int) -> float:
        return 0.5 * (self.tops[i] + self.bottoms[i])

    def gap_middle(self, j: int) -> float:
        return 0.5 * (self.bottoms[j] + self.tops[j + 1])

    def band_span(self, i: int) -> Tuple[float, float]:
        """Longitudes of band i outside its channel, increasing."""
        psi, b = self.channel(i), self.channel_halfwidths[i]
        return psi + b, psi + 2.0 * np.pi - b

    def channel_span(self, i: int) -> Tuple[float, float]:
        psi, b = self.channel(i), self.channel_halfwidths[i]
        return psi - b, psi + b

    def strip_span(self, j: int, band: int) -> Tuple[float, float]:
        """Longitudes of strip j in the unwrapped frame of band j or band j + 1."""
        center = self.channel(j) + 0.5 * np.pi if band == j else self.channel(j + 1) + 1.5 * np.pi
        b = self.strip_halfwidths[j]
        return center - b, center + b

    def to_json(self) -> Dict:
        return {
            "tops": list(self.tops),
            "bottoms": list(self.bottoms),
            "channel_halfwidths": list(self.channel_halfwidths),
            "strip_halfwidths": list(self.strip_halfwidths),
        }

    @classmethod
    def from_json(cls, data: Dict) -> "CurveLayout":
        return cls(
            tops=tuple(float(x) for x in data["tops"]),
            bottoms=tuple(float(x) for x in data["bottoms"]),
            channel_halfwidths=tuple(float(x) for x in data["channel_halfwidths"]),
            strip_halfwidths=tuple(float(x) for x in data["strip_halfwidths"]),
        )


@dataclass(frozen=True, eq=False)
class JordanPolyline:
    points: np.ndarray
    layout: CurveLayout

    @property
    def bridge_count(self) -> int:
        return 2 * self.layout.N - 1

    def to_json(self) -> Dict:
        return {
            "points": [[float(x) for x in p] for p in self.points],
            "layout": self.layout.to_json(),
        }

    @classmethod
    def from_json(cls, data: Dict) -> "JordanPolyline":
        return cls(points=np.array(data["points"], dtype=float).reshape(-1, 3),
                   layout=CurveLayout.from_json(data["layout"]))


@dataclass(frozen=True, eq=False)
class CatenoidStation:
    kind: StationKind
    index: int
    pair: CirclePair
    route: np.ndarray
    dL: float
    side: Optional[Side] = None
    solution: Optional[CatenoidSolution] = None
    residual: Optional[float] = None

    @property
    def label(self) -> str:
        return f"{_PREFIX[self.kind]}{self.index + 1}"

    @property
    def circles(self) -> Tuple[SphereCircle, SphereCircle]:
        return self.pair.first, self.pair.second

    def summary(self) -> Dict:
        solution = self.solution
        return {
            "label": self.label,
            "kind": self.kind.value,
            "index": self.index,
            "side": self.side.value if self.side is not None else None,
            "dL": self.dL,
            "neck": solution.curve.neck_parameter if solution is not None else None,
            "area_deficit": solution.area_deficit if solution is not None else None,
            "residual": self.residual,
            "circles": self.pair.to_json(),
        }

    def to_json(self) -> Dict:
        return {
            "kind": self.kind.value,
            "index": self.index,
            "pair": self.pair.to_json(),
            "route": [[float(x) for x in p] for p in self.route],
            "dL": self.dL,
            "side": self.side.value if self.side is not None else None,
        }

    @classmethod
    def from_json(cls, data: Dict) -> "CatenoidStation":
        side = data.get("side")
        return cls(
            kind=StationKind(data["kind"]),
            index=int(data["index"]),
            pair=CirclePair.from_json(data["pair"]),
            route=np.array(data["route"], dtype=float).reshape(-1, 3),
            dL=float(data["dL"]),
            side=Side(side) if side is not None else None,
        )


@dataclass(frozen=True)
class Arrangement:
    index: int
    choices: str
    stations: Tuple[int, ...]

    def to_json(self) -> Dict:
        return {"index": self.index, "choices": self.choices, "stations": list(self.stations)}


@dataclass(frozen=True, eq=False)
class ConstructionGeometry:
    spec: ConstructionSpec
    parallel: Tuple[CirclePair, ...]
    curve: JordanPolyline
    stations: Tuple[CatenoidStation, ...]
    chain: CoveringChain
    clearance: float

    @property
    def circles(self) -> List[SphereCircle]:
        return [c for s in self.stations for c in s.circles]

    def station(self, kind: StationKind, index: int) -> CatenoidStation:
        for s in self.stations:
            if s.kind is kind and s.index == index:
                return s
        raise KeyError(f"{_PREFIX[kind]}{index + 1}")

    def to_json(self) -> Dict:
        return {
            "version": GEOMETRY_VERSION,
            "spec": self.spec.model_dump(),
            "parallel": [p.to_json() for p in self.parallel],
            "curve": self.curve.to_json(),
            "stations": [s.to_json() for s in self.stations],
            "chain": self.chain.to_json(),
            "clearance": self.clearance,
        }

    @classmethod
    def from_json(cls, data: Dict) -> "ConstructionGeometry":
        return cls(
            spec=ConstructionSpec.model_validate(data["spec"]),
            parallel=tuple(CirclePair.from_json(p) for p in data["parallel"]),
            curve=JordanPolyline.from_json(data["curve"]),
            stations=tuple(CatenoidStation.from_json(s) for s in data["stations"]),
            chain=CoveringChain.from_json(data["chain"]),
            clearance=float(data["clearance"]),
        )


def build_parallel_circles(N: int, epsilon: float) -> List[CirclePair]:
    """Pairs C_i^+ (disk above) and C_i^- (disk below) at z = 1 - 2i/(N+1) +- epsilon."""
    if N < 1:
        raise GeometryError("N must be at least 1", {"N": N})
    if epsilon <= 0.0:
        raise GeometryError("epsilon must be positive", {"epsilon": epsilon})
    heights = [1.0 - 2.0 * i / (N + 1) for i in range(1, N + 1)]
    for i in range(N - 1):
        if heights[i] - epsilon <= heights[i + 1] + epsilon:
            raise GeometryError(f"circle pairs {i + 1} and {i + 2} collide",
                                {"pairs": [i + 1, i + 2], "epsilon": epsilon, "limit": 1.0 / (N + 1)})
    for i, z in enumerate(heights):
        if z + epsilon >= 1.0 or z - epsilon <= -1.0:
            raise GeometryError(f"circle pair {i + 1} leaves the sphere", {"epsilon": epsilon})
    return [CirclePair(SphereCircle(E3, z + epsilon), SphereCircle(-E3, -(z - epsilon))) for z in heights]


def _layout(parallel: Sequence[CirclePair], bridge_width: float, prime_bridge_width: float) -> CurveLayout:
    tops = tuple(float(np.arccos(p.first.offset)) for p in parallel)
    bottoms = tuple(float(np.arccos(-p.second.offset)) for p in parallel)
    N = len(parallel)
    channels = tuple(0.5 * bridge_width / np.sin(0.5 * (tops[i] + bottoms[i])) for i in range(N))
    strips = tuple(0.5 * prime_bridge_width / np.sin(0.5 * (bottoms[j] + tops[j + 1])) for j in range(N - 1))
    layout = CurveLayout(tops=tops, bottoms=bottoms, channel_halfwidths=channels, strip_halfwidths=strips)

    for i in range(N):
        if channels[i] >= 0.25 * np.pi:
            raise GeometryError(f"channel {i + 1} is too wide", {"bridge_width": bridge_width})
        above = strips[i - 1] if i > 0 else 0.0
        below = strips[i] if i < N - 1 else 0.0
        if channels[i] + max(above, below) >= 0.5 * np.pi or above + below >= np.pi:
            raise GeometryError(f"bridges on band {i + 1} overlap",
                                {"bridge_width": bridge_width, "prime_bridge_width": prime_bridge_width})
    return layout


def _band_boundary(layout: CurveLayout, i: int, entry: Optional[Tuple[float, float]] = None) -> List[np.ndarray]:
    """Boundary pieces of band i and everything hanging below it.

    Without entry the pieces close up; with the strip span entry they run
    from the strip's right wall foot around to its left wall foot.
    """
    top, bottom = layout.tops[i], layout.bottoms[i]
    start, end = layout.band_span(i)
    pieces = [_latitude(top, start if entry is None else entry[1], end, CURVE_SPACING),
              _meridian(end, top, bottom, CURVE_SPACING)]
    if i + 1 < layout.N:
        left, right = layout.strip_span(i, i)
        below = layout.tops[i + 1]
        pieces.append(_latitude(bottom, end, right, CURVE_SPACING))
        pieces.append(_meridian(right, bottom, below, CURVE_SPACING))
        pieces.extend(_band_boundary(layout, i + 1, layout.strip_span(i, i + 1)))
        pieces.append(_meridian(left, below, bottom, CURVE_SPACING))
        pieces.append(_latitude(bottom, left, start, CURVE_SPACING))
    else:
        pieces.append(_latitude(bottom, end, start, CURVE_SPACING))
    pieces.append(_meridian(start, bottom, top, CURVE_SPACING))
    if entry is not None:
        pieces.append(_latitude(top, start, entry[0], CURVE_SPACING))
    return pieces


def _on_arc(a: np.ndarray, b: np.ndarray, x: np.ndarray, length: np.ndarray) -> np.ndarray:
    return np.abs(_angle(a, x) + _angle(x, b) - length) < 1e-12


def crossing_edges(points: np.ndarray) -> List[Tuple[int, int]]:
    """Pairs of non-adjacent great-circle edges of a closed polyline that meet."""
    n = len(points)
    a = points
    b = np.roll(points, -1, axis=0)
    lengths = _angle(a, b)
    mid = a + b
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    pairs = cKDTree(mid).query_pairs(_angle_to_chord(float(lengths.max())) + 1e-12, output_type="ndarray")
    if len(pairs) == 0:
        return []
    i, j = pairs[:, 0], pairs[:, 1]
    keep = ((j - i) % n != 1) & ((i - j) % n != 1)
    i, j = i[keep], j[keep]

    line = np.cross(np.cross(a[i], b[i]), np.cross(a[j], b[j]))
    norms = np.linalg.norm(line, axis=1)
    generic = norms > 1e-15
    x = line / np.where(generic, norms, 1.0)[:, None]
    hits = np.zeros(len(i), dtype=bool)
    for sign in (1.0, -1.0):
        y = sign * x
        hits |= generic & _on_arc(a[i], b[i], y, lengths[i]) & _on_arc(a[j], b[j], y, lengths[j])
    # edges on a common great circle meet when an endpoint of one lies on the other
    for k in np.flatnonzero(~generic):
        p, q = i[k], j[k]
        ends = np.array([a[q], b[q]])
        others = np.array([a[p], b[p]])
        if (_on_arc(a[p][None], b[p][None], ends, lengths[p]).any()
                or _on_arc(a[q][None], b[q][None], others, lengths[q]).any()):
            hits[k] = True
    return [(int(p), int(q)) for p, q in zip(i[hits], j[hits])]


def build_jordan_curve(spec: ConstructionSpec, parallel: Optional[Sequence[CirclePair]] = None) -> JordanPolyline:
    """Boundary of the bands with their channels cut out and strips added."""
    if parallel is None:
        parallel = build_parallel_circles(spec.N, spec.epsilon)
    layout = _layout(parallel, spec.bridge_width, spec.prime_bridge_width)
    pieces = _band_boundary(layout, 0)
    points = np.concatenate([p[:-1] for p in pieces])
    points = cut_corners(points, 0.25 * min(spec.bridge_width, spec.prime_bridge_width))

    crossings = crossing_edges(points)
    if crossings:
        raise GeometryError("Jordan curve is not simple", {"edges": crossings[:5]})
    logger.info(f"Jordan curve with {2 * spec.N - 1} bridges and {len(points)} vertices")
    return JordanPolyline(points=points, layout=layout)


def _flanking_pair(theta: float, psi: float, halfwidth: float, radius: float,
                   clearance: float) -> Tuple[CirclePair, np.ndarray]:
    """Two circles on latitude theta on both sides of a bridge, and the long route between them."""
    ratio = np.sin(radius + clearance) / np.sin(theta)
    if ratio >= 1.0:
        raise GeometryError("station circle does not fit on its latitude", {"theta": theta, "radius": radius})
    offset = halfwidth + float(np.arcsin(ratio))
    pair = CirclePair(SphereCircle.from_center(_sphere(theta, psi + offset), radius),
                      SphereCircle.from_center(_sphere(theta, psi - offset), radius))
    route = _latitude(theta, psi + offset, psi + 2.0 * np.pi - offset, LATITUDE_ROUTE_SPACING)
    route[0], route[-1] = pair.first.normal, pair.second.normal
    return pair, route


def _stations_at(layout: CurveLayout, clearance: float) -> List[CatenoidStation]:
    N = layout.N
    stations = []
    for i in range(N):
        radius = 0.5 * (layout.bottoms[i] - layout.tops[i]) - clearance
        if radius <= 0.0:
            raise GeometryError(f"band {i + 1} is too thin for clearance {clearance:.3g}")
        pair, route = _flanking_pair(layout.middle(i), layout.channel(i), layout.channel_halfwidths[i],
                                     radius, clearance)
        stations.append(CatenoidStation(StationKind.BRIDGE, i, pair, route, plane_distance_dL(pair.first, pair.second)))

    for i in range(N):
        top, bottom, psi = layout.tops[i], layout.bottoms[i], layout.channel(i)
        if i == 0:
            r_up = min(MAX_FOOT_RADIUS, 0.9 * (top - clearance))
        else:
            r_up = min(MAX_FOOT_RADIUS, 0.45 * (top - layout.bottoms[i - 1]) - clearance)
        if i == N - 1:
            r_lo = min(MAX_FOOT_RADIUS, 0.9 * (np.pi - bottom - clearance))
        else:
            r_lo = min(MAX_FOOT_RADIUS, 0.45 * (layout.tops[i + 1] - bottom) - clearance)
        upper = _sphere(top - clearance - r_up, psi)
        lower = _sphere(bottom + clearance + r_lo, psi)
        pair = CirclePair(SphereCircle.from_center(upper, r_up), SphereCircle.from_center(lower, r_lo))
        route = great_arc(upper, lower, MERIDIAN_ROUTE_SPACING)
        stations.append(CatenoidStation(StationKind.CIRCLE_PAIR, i, pair, route, plane_distance_dL(pair.first, pair.second)))

    for j in range(N - 1):
        gap = layout.tops[j + 1] - layout.bottoms[j]
        center = 0.5 * sum(layout.strip_span(j, j))
        pair, route = _flanking_pair(layout.gap_middle(j), center, layout.strip_halfwidths[j], 0.4 * gap, clearance)
        stations.append(CatenoidStation(StationKind.PRIME_BRIDGE, j, pair, route, plane_distance_dL(pair.first, pair.second)))
    return stations


def place_catenoid_circles(spec: ConstructionSpec, curve: JordanPolyline,
                           limit: Optional[float] = None) -> Tuple[List[CatenoidStation], float]:
    """The 3N - 1 stations and the clearance they were placed with.

    Starts at four times catenoid_offset and shrinks the clearance until
    every pair is below the dL threshold minus dl_margin.
    """
    if limit is None:
        limit = load_thresholds().limit
    target = limit - spec.dl_margin
    clearance = CLEARANCE_START * spec.catenoid_offset
    while True:
        stations = _stations_at(curve.layout, clearance)
        worst = max(stations, key=lambda s: s.dL)
        if worst.dL <= target:
            break
        if clearance <= spec.catenoid_offset * (1.0 + 1e-12):
            raise GeometryError(
                f"station {worst.label} has dL={worst.dL:.4f} above {target:.4f}; "
                f"use a smaller epsilon or bridge_width",
                {"station": worst.label, "dL": worst.dL, "limit": limit})
        clearance = max(spec.catenoid_offset, clearance * CLEARANCE_SHRINK)
        logger.warning(f"Station {worst.label} dL={worst.dL:.4f} above {target:.4f}; clearance now {clearance:.3g}")

    circles = [c for s in stations for c in s.circles]
    report = good_position(circles)
    if not report:
        raise GeometryError("station circles are not in good position", {"violations": report.violations[:5]})

    polyline = Polyline(curve.points)
    centers = np.array([c.normal for c in circles])
    radii = np.array([c.angular_radius for c in circles])
    gaps = polyline.distance(centers) - radii
    k = int(np.argmin(gaps))
    if gaps[k] <= 0.0:
        raise GeometryError(f"station {stations[k // 2].label} meets the curve", {"gap": float(gaps[k])})
    logger.info(f"Placed {len(stations)} stations (clearance {clearance:.3g}, max dL {worst.dL:.4f})")
    return stations, clearance


def station_side(station: CatenoidStation, chain: CoveringChain) -> Optional[Side]:
    """Common side of both circles of a station, or None when they disagree or touch the covering."""
    points = np.concatenate([np.array([c.normal for c in station.circles])]
                            + [c.sample(STATION_SAMPLES) for c in station.circles])
    sides = set(side_of(chain, points))
    if len(sides) != 1:
        return None
    side = sides.pop()
    return None if side is Side.COVERED else side


def solve_station(station: CatenoidStation, thresholds: ThresholdEstimates) -> CatenoidStation:
    """Attach the least-area catenoid bounded by the station pair, if any."""
    solutions = [s for s in catenoids_for_pair(station.pair, thresholds)
                 if s.area_deficit is not None and s.area_deficit < 0.0]
    if not solutions:
        logger.warning(f"Station {station.label} (dL={station.dL:.4f}) has no least-area catenoid")
        return station
    best = min(solutions, key=lambda s: s.area_deficit)
    return replace(station, solution=best, residual=mean_curvature_residual(best.curve))


def station_loop(station: CatenoidStation) -> np.ndarray:
    """The axis chord of the station closed up by its route on the sphere."""
    if station.solution is not None:
        p, q = station.solution.axis
    else:
        p, q = coaxial_axis(station.pair)
    c1, c2 = station.pair.first.normal, station.pair.second.normal
    back = np.concatenate([
        great_arc(q, c2, MERIDIAN_ROUTE_SPACING)[:-1],
        station.route[::-1][:-1],
        great_arc(c1, p, MERIDIAN_ROUTE_SPACING),
    ])
    return catenoid_loop((p, q), back)


def build_geometry(spec: ConstructionSpec, thresholds: Optional[ThresholdEstimates] = None,
                   progress: Optional[Callable[[str], None]] = None) -> ConstructionGeometry:
    report = progress or (lambda stage: None)
    report("parallel_circles")
    with _stage("parallel_circles"):
        parallel = build_parallel_circles(spec.N, spec.epsilon)
    report("jordan_curve")
    with _stage("jordan_curve"):
        curve = build_jordan_curve(spec, parallel)
    report("stations")
    with _stage("stations"):
        limit = (thresholds or load_thresholds()).limit
        stations, clearance = place_catenoid_circles(spec, curve, limit)
    report("chain")
    with _stage("chain"):
        chain = build_chain(curve.points, spec.delta, plus_reference=NORTH,
                            obstacles=[c for s in stations for c in s.circles])
        stations = [replace(s, side=station_side(s, chain)) for s in stations]
    return ConstructionGeometry(spec=spec, parallel=tuple(parallel), curve=curve, stations=tuple(stations),
                                chain=chain, clearance=clearance)


def enumerate_arrangements(N: int, stations: Sequence[CatenoidStation]) -> List[Arrangement]:
    """All 2^N choices of channel (B) or band (C) station per band, strips always included."""
    lookup = {(s.kind, s.index): k for k, s in enumerate(stations)}
    primes = tuple(lookup[(StationKind.PRIME_BRIDGE, j)] for j in range(N - 1))
    out = []
    for index, choice in enumerate(itertools.product("BC", repeat=N)):
        picked = tuple(lookup[(StationKind.BRIDGE if c == "B" else StationKind.CIRCLE_PAIR, i)]
                       for i, c in enumerate(choice))
        out.append(Arrangement(index=index, choices="".join(choice), stations=picked + primes))
    return out


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    margin: Optional[float] = None
    detail: str = ""

    def to_json(self) -> Dict:
        return {"passed": self.passed, "margin": _finite(self.margin), "detail": self.detail}


@dataclass
class ArrangementReport:
    index: int
    choices: str
    stations: List[str]
    checks: Dict[str, CheckResult]

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_json(self) -> Dict:
        return {
            "index": self.index,
            "choices": self.choices,
            "stations": self.stations,
            "valid": self.valid,
            "checks": {name: check.to_json() for name, check in self.checks.items()},
        }


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def witness_disk_samples(geometry: ConstructionGeometry, arrangement: Arrangement,
                         count: Optional[int] = None) -> np.ndarray:
    """Ball points on a singular disk spanning the curve for this arrangement.

    Band-chosen bands contribute a layer just under the band; channel-chosen
    bands contribute a ribbon under the channel and the two geodesic caps
    over C_i^+ and C_i^-. Strips always contribute their layer.
    """
    count = count or settings.WITNESS_SAMPLES
    layout = geometry.curve.layout
    scale = 1.0 - WITNESS_DEPTH * geometry.clearance
    rows = 6
    spokes = max(count // 24, 8)

    def layer(theta_a: float, theta_b: float, psi_a: float, psi_b: float) -> np.ndarray:
        theta, psi = np.meshgrid(np.linspace(theta_a, theta_b, rows),
                                 np.linspace(psi_a, psi_b, max(count // rows, 2)), indexing="ij")
        return scale * _sphere(theta, psi).reshape(-1, 3)

    pieces = []
    for i, choice in enumerate(arrangement.choices):
        top, bottom = layout.tops[i], layout.bottoms[i]
        if choice == "B":
            pieces.append(layer(top, bottom, *layout.channel_span(i)))
            pieces.append(geodesic_plane_points(geometry.parallel[i].first, spokes=spokes))
            pieces.append(geodesic_plane_points(geometry.parallel[i].second, spokes=spokes))
        else:
            pieces.append(layer(top, bottom, *layout.band_span(i)))
    for j in range(layout.N - 1):
        pieces.append(layer(layout.bottoms[j], layout.tops[j + 1], *layout.strip_span(j, j)))
    return np.concatenate(pieces)


def separation_check(solid: SolidCatenoid, chain: CoveringChain, samples: int) -> Tuple[int, float]:
    """Catenoid surface samples inside covering hemispheres, and the largest hemisphere excess.

    A ball point X lies beyond the hemisphere over the disk n.x > h when
    2 X.n - (1 + |X|^2) h > 0.
    """
    points = solid.surface_samples(samples)
    norms2 = np.sum(points * points, axis=1)
    directions = points / np.sqrt(norms2)[:, None]
    centers, radii = chain.centers(), chain.radii()
    offsets = np.cos(radii)
    worst, hits = -np.inf, 0
    tree = cKDTree(centers)
    for k, near in enumerate(tree.query_ball_point(directions, _angle_to_chord(float(radii.max())))):
        if not near:
            continue
        near = np.asarray(near)
        value = 2.0 * centers[near] @ points[k] - (1.0 + norms2[k]) * offsets[near]
        worst = max(worst, float(value.max()))
        hits += int(np.any(value > 0.0))
    return hits, worst


class VerificationContext:
    """Data shared by the arrangements of one geometry: sides, solids and linking numbers."""

    def __init__(self, geometry: ConstructionGeometry, cloud: LimitSetCloud, thresholds: ThresholdEstimates,
                 separation_samples: Optional[int] = None):
        self.geometry = geometry
        self.cloud = cloud
        self.thresholds = thresholds
        self.separation_samples = separation_samples or settings.SEPARATION_SAMPLES
        self.neighborhood: NeighborhoodReport = verify_neighborhood(cloud, geometry.chain)
        self._sides: Dict[int, Optional[Side]] = {}
        self._solids: Dict[int, SolidCatenoid] = {}
        self._loops: Dict[int, np.ndarray] = {}
        self._links: Dict[Tuple[int, int], Optional[int]] = {}
        self._separation: Dict[int, Tuple[int, float]] = {}
        self._cloud_gap: Dict[int, float] = {}

    def side(self, k: int) -> Optional[Side]:
        if k not in self._sides:
            self._sides[k] = station_side(self.geometry.stations[k], self.geometry.chain)
        return self._sides[k]

    def solid(self, k: int) -> Optional[SolidCatenoid]:
        station = self.geometry.stations[k]
        if station.solution is None:
            return None
        if k not in self._solids:
            self._solids[k] = SolidCatenoid(station.solution)
        return self._solids[k]

    def link(self, a: int, b: int) -> Optional[int]:
        key = (min(a, b), max(a, b))
        if key not in self._links:
            for k in key:
                if k not in self._loops:
                    self._loops[k] = station_loop(self.geometry.stations[k])
            try:
                self._links[key] = linking_number(self._loops[key[0]], self._loops[key[1]])
            except GeometryError as e:
                logger.warning(f"Linking of stations {key} failed: {e}")
                self._links[key] = None
        return self._links[key]

    def separation(self, k: int) -> Tuple[int, float]:
        if k not in self._separation:
            solid = self.solid(k)
            self._separation[k] = (-1, np.inf) if solid is None else separation_check(
                solid, self.geometry.chain, self.separation_samples)
        return self._separation[k]

    def cloud_gap(self, k: int) -> float:
        """Smallest angular distance from the cloud to the station disks."""
        if k not in self._cloud_gap:
            points = self.cloud.points
            if len(points) == 0:
                self._cloud_gap[k] = -np.inf
            else:
                self._cloud_gap[k] = float(min(c.signed_distance(points).min()
                                               for c in self.geometry.stations[k].circles))
        return self._cloud_gap[k]


def verify_arrangement(arrangement: Arrangement, geometry: ConstructionGeometry, cloud: LimitSetCloud,
                       context: Optional[VerificationContext] = None) -> ArrangementReport:
    """Barrier hypotheses for one arrangement; failures are recorded, never raised."""
    if context is None:
        context = VerificationContext(geometry, cloud, load_thresholds())
    stations = [geometry.stations[k] for k in arrangement.stations]
    checks: Dict[str, CheckResult] = {}

    limit = context.thresholds.limit
    worst = max(s.dL for s in stations)
    checks["dL_threshold"] = CheckResult(worst <= limit, limit - worst, f"max dL {worst:.6f}, limit {limit:.6f}")

    missing = [s.label for s in stations if s.solution is None or s.solution.area_deficit is None]
    rough = [s.label for s in stations if s.residual is None or s.residual >= settings.RESIDUAL_TOL]
    deficits = [s.solution.area_deficit for s in stations if s.solution is not None
                and s.solution.area_deficit is not None]
    margin = -max(deficits) if deficits else None
    checks["least_area"] = CheckResult(
        not missing and not rough and margin is not None and margin > 0.0, margin,
        f"no least-area catenoid: {missing}" if missing else (f"residual too large: {rough}" if rough else ""))

    sides = [context.side(k) for k in arrangement.stations]
    undecided = [s.label for s, side in zip(stations, sides) if side is None]
    circles = [c for s in stations for c in s.circles]
    chain_centers, chain_radii = geometry.chain.centers(), geometry.chain.radii()
    clearance = min(float(np.min(_angle(chain_centers, c.normal[None, :]) - chain_radii - c.angular_radius))
                    for c in circles)
    checks["same_side"] = CheckResult(not undecided and clearance > 0.0, clearance,
                                      f"circles on both sides: {undecided}" if undecided else "")

    report = good_position(circles)
    rho = min(_raw_rho(a, b) for a, b in itertools.combinations(circles, 2))
    checks["good_position"] = CheckResult(
        report.ok, rho, "; ".join(f"{a}-{b} {why}" for a, b, why in report.violations[:5]))

    linked, failed = [], []
    for (a, side_a), (b, side_b) in itertools.combinations(zip(arrangement.stations, sides), 2):
        if side_a is None or side_b is None or side_a == side_b:
            continue
        lk = context.link(a, b)
        if lk is None:
            failed.append(f"{geometry.stations[a].label}/{geometry.stations[b].label}")
        elif lk != 0:
            linked.append(f"{geometry.stations[a].label}/{geometry.stations[b].label}")
    samples = witness_disk_samples(geometry, arrangement)
    pierced = []
    for k in arrangement.stations:
        solid = context.solid(k)
        if solid is not None and np.any(solid.contains_ball(samples)):
            pierced.append(geometry.stations[k].label)
    detail = []
    if linked:
        detail.append(f"linked across the curve: {linked}")
    if failed:
        detail.append(f"linking undecided: {failed}")
    if pierced:
        detail.append(f"witness disk meets {pierced}")
    checks["null_homotopy"] = CheckResult(not (linked or failed or pierced or undecided), None, "; ".join(detail))

    hits, excess = zip(*(context.separation(k) for k in arrangement.stations))
    bad = [s.label for s, h in zip(stations, hits) if h != 0]
    checks["catenoid_plane_disjointness"] = CheckResult(
        not bad, -max(excess), f"surface samples inside covering hemispheres: {bad}" if bad else "")

    neighborhood = context.neighborhood
    gap = min(context.cloud_gap(k) for k in arrangement.stations)
    checks["limit_set_containment"] = CheckResult(
        neighborhood.ok and gap > 0.0, min(neighborhood.delta - neighborhood.max_distance, gap),
        f"max distance to curve {neighborhood.max_distance:.3e}, cloud gap to station disks {gap:.3e}")

    result = ArrangementReport(index=arrangement.index, choices=arrangement.choices,
                               stations=[s.label for s in stations], checks=checks)
    logger.info(f"Arrangement {arrangement.choices}: {'VALID' if result.valid else 'INVALID'}")
    return result


@dataclass
class DistinctnessMatrix:
    labels: List[str]
    entries: List[List[Optional[Tuple[int, int]]]]

    @property
    def complete(self) -> bool:
        n = len(self.labels)
        return all(self.entries[a][b] is not None for a in range(n) for b in range(n) if a != b)

    @property
    def witnessed_pairs(self) -> int:
        n = len(self.labels)
        return sum(self.entries[a][b] is not None for a in range(n) for b in range(a + 1, n))

    def to_json(self) -> Dict:
        return {
            "arrangements": self.labels,
            "entries": [[None if e is None else {"index": e[0], "linking": e[1]} for e in row]
                        for row in self.entries],
        }


def distinctness_certificates(arrangements: Sequence[Arrangement], stations: Sequence[CatenoidStation],
                              linking: Optional[Callable[[int, int], Optional[int]]] = None) -> DistinctnessMatrix:
    """For each pair of arrangements, the first differing band whose B and C stations link across the curve."""
    if linking is None:
        loops: Dict[int, np.ndarray] = {}

        def linking(a: int, b: int) -> Optional[int]:
            for k in (a, b):
                if k not in loops:
                    loops[k] = station_loop(stations[k])
            try:
                return linking_number(loops[a], loops[b])
            except GeometryError:
                return None

    lookup = {(s.kind, s.index): k for k, s in enumerate(stations)}
    witness: Dict[int, Optional[int]] = {}

    def band_witness(i: int) -> Optional[int]:
        if i not in witness:
            a, b = lookup[(StationKind.BRIDGE, i)], lookup[(StationKind.CIRCLE_PAIR, i)]
            side_a, side_b = stations[a].side, stations[b].side
            lk = linking(a, b) if side_a is not None and side_b is not None and side_a != side_b else None
            witness[i] = lk if lk else None
        return witness[i]

    n = len(arrangements)
    entries: List[List[Optional[Tuple[int, int]]]] = [[None] * n for _ in range(n)]
    for a, b in itertools.combinations(range(n), 2):
        for i, (x, y) in enumerate(zip(arrangements[a].choices, arrangements[b].choices)):
            if x != y and band_witness(i) is not None:
                entries[a][b] = entries[b][a] = (i + 1, band_witness(i))
                break
    return DistinctnessMatrix(labels=[arr.choices for arr in arrangements], entries=entries)


@dataclass
class ConstructionCertificate:
    spec: ConstructionSpec
    thresholds: ThresholdEstimates
    chain_report: ChainReport
    relations: RelationReport
    genus: int
    lens: LensReport
    neighborhood: NeighborhoodReport
    stations: List[CatenoidStation]
    arrangements: List[ArrangementReport]
    distinctness: DistinctnessMatrix
    cloud: LimitSetCloud
    geometry: Optional[ConstructionGeometry] = None
    caveats: List[str] = field(default_factory=lambda: list(CAVEATS))

    def criteria(self) -> Dict[str, Dict]:
        out = {
            "chain": {"passed": self.chain_report.ok, "margin": _finite(self.chain_report.min_gap)},
            "relations": {"passed": self.relations.ok,
                          "margin": _finite(self.relations.margin)},
            "limit_set_neighborhood": {"passed": self.neighborhood.ok,
                                       "margin": _finite(self.neighborhood.delta - self.neighborhood.max_distance)},
            "lens_incidence": {"passed": self.lens.ok, "margin": None},
        }
        for name in CHECKS:
            results = [a.checks[name] for a in self.arrangements]
            margins = [r.margin for r in results if r.margin is not None]
            out[name] = {"passed": all(r.passed for r in results),
                         "margin": _finite(min(margins)) if margins else None}
        out["distinctness"] = {"passed": self.distinctness.complete,
                               "margin": float(self.distinctness.witnessed_pairs)}
        return out

    @property
    def valid(self) -> bool:
        return all(c["passed"] for c in self.criteria().values())

    def to_json(self) -> Dict:
        cloud = self.cloud
        return {
            "version": CERTIFICATE_VERSION,
            "valid": self.valid,
            "spec": self.spec.model_dump(),
            "thresholds": self.thresholds.to_json(),
            "chain": {
                "circles": len(self.geometry.chain) if self.geometry is not None else None,
                "genus": self.genus,
                "ok": self.chain_report.ok,
                "orthogonality_residual": self.chain_report.orthogonality_residual,
                "min_gap": _finite(self.chain_report.min_gap),
                "max_radius": self.chain_report.max_radius,
                "failures": self.chain_report.failures,
            },
            "relations": {"ok": self.relations.ok, "max_residual": max(self.relations.residuals.values()),
                          "failures": self.relations.failures},
            "limit_set": {
                "points": len(cloud.points),
                "max_word_count": cloud.max_word_count,
                "even_words": cloud.even_words,
                "open_branches": cloud.open_branches,
                "max_distance": _finite(self.neighborhood.max_distance),
                "missing_lenses": self.lens.missing,
            },
            "stations": [s.summary() for s in self.stations],
            "arrangements": [a.to_json() for a in self.arrangements],
            "distinctness": self.distinctness.to_json(),
            "criteria": self.criteria(),
            "caveats": self.caveats,
        }


@contextmanager
def _stage(name: str):
    try:
        yield
    except (ValueError, ArithmeticError, SolverError) as e:
        logger.error(f"Stage {name} failed: {e}")
        raise BuildError(name, str(e)) from e


def run_pipeline(spec: ConstructionSpec, geometry: Optional[ConstructionGeometry] = None,
                 thresholds: Optional[ThresholdEstimates] = None, workers: Optional[int] = None,
                 progress: Optional[Callable[[str], None]] = None) -> ConstructionCertificate:
    """Build (or reuse) the geometry, compute the limit set and verify every arrangement."""
    report = progress or (lambda stage: None)
    if thresholds is None:
        report("thresholds")
        with _stage("thresholds"):
            thresholds = load_thresholds()
    if geometry is None:
        geometry = build_geometry(spec, thresholds, report)

    report("catenoids")
    with _stage("catenoids"):
        stations = [solve_station(s, thresholds) for s in geometry.stations]
    with _stage("stations"):
        stations = [s if s.side is not None else replace(s, side=station_side(s, geometry.chain))
                    for s in stations]
    geometry = replace(geometry, stations=tuple(stations))

    report("group")
    with _stage("group"):
        obstacles = geometry.circles
        chain_report = check_chain(geometry.chain, obstacles=obstacles)
        group = InversionGroup.from_chain(geometry.chain)
        relations = verify_relations(group)
        genus = genus_of_quotient(geometry.chain)
    logger.info(f"Group of {len(geometry.chain)} reflections, quotient genus {genus}")

    report("limit_set")
    with _stage("limit_set"):
        cloud = limit_set(group, spec.prune_tol, spec.max_depth, workers)

    report("verify")
    context = VerificationContext(geometry, cloud, thresholds)
    arrangements = enumerate_arrangements(spec.N, stations)
    records = [verify_arrangement(arr, geometry, cloud, context) for arr in arrangements]
    matrix = distinctness_certificates(arrangements, stations, context.link)

    certificate = ConstructionCertificate(
        spec=spec,
        thresholds=thresholds,
        chain_report=chain_report,
        relations=relations,
        genus=genus,
        lens=verify_lens_incidence(cloud, geometry.chain),
        neighborhood=context.neighborhood,
        stations=stations,
        arrangements=records,
        distinctness=matrix,
        cloud=cloud,
        geometry=geometry,
    )
    logger.info(f"Certificate for N={spec.N}: {'VALID' if certificate.valid else 'INVALID'}")
    return certificate


def shrink_spec(spec: ConstructionSpec, factor: float = SEARCH_SHRINK) -> ConstructionSpec:
    """Every geometric width scaled by factor; the limit set settings stay."""
    return spec.model_copy(update={name: getattr(spec, name) * factor for name in SEARCH_FIELDS})


def search_spec(seed: ConstructionSpec, thresholds: Optional[ThresholdEstimates] = None,
                attempts: int = SEARCH_ATTEMPTS, workers: Optional[int] = None,
                progress: Optional[Callable[[str], None]] = None) -> ConstructionCertificate:
    """First VALID certificate along seed, shrink_spec(seed), shrink_spec(shrink_spec(seed)), ..."""
    if thresholds is None:
        with _stage("thresholds"):
            thresholds = load_thresholds()
    spec = seed
    for attempt in range(1, attempts + 1):
        try:
            certificate = run_pipeline(spec, thresholds=thresholds, workers=workers, progress=progress)
        except BuildError as e:
            logger.warning(f"Search N={spec.N} attempt {attempt}: stage {e.stage} failed")
        else:
            if certificate.valid:
                logger.info(f"Search N={spec.N}: VALID after {attempt} attempts (epsilon={spec.epsilon:.3g}, "
                            f"bridge_width={spec.bridge_width:.3g})")
                return certificate
            failed = [name for name, c in certificate.criteria().items() if not c["passed"]]
            logger.warning(f"Search N={spec.N} attempt {attempt}: INVALID ({', '.join(failed)})")
        spec = shrink_spec(spec)
    raise BuildError("search", f"no VALID spec for N={seed.N} within {attempts} attempts")
