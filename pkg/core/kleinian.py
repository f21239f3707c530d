"""Reflection groups generated by a closed chain of circles.

A chain of 2L circles, consecutive ones orthogonal and the others
disjoint, generates a right-angled reflection group. Its limit set is a
Jordan curve inside the union of the disks; the index-two subgroup of
even words is quasi-Fuchsian.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from core.circles import SphereCircle, _raw_rho, circle_intersections, crossing_cosine
from core.config import settings
from core.errors import ChainError, GeometryError
from core.moebius import (MobiusMap, StereographicChart, compose, from_homogeneous, inversion_from_form,
                         inversion_in_circle, rotation_between)

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8
NORTH = np.array([0.0, 0.0, 1.0])
MAX_CHAIN_CIRCLES = 200000
ROUNDING_GROWTH = 16.0


class Side(str, Enum):
    PLUS = "plus"
    MINUS = "minus"
    COVERED = "covered"


class PairClass(str, Enum):
    LOXODROMIC = "loxodromic"
    PARABOLIC = "parabolic"
    ELLIPTIC_ORDER2 = "elliptic_order2"
    OTHER = "other"


def _angle(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(p, q), axis=-1)
    return np.arctan2(cross, np.sum(p * q, axis=-1))


def _chord_to_angle(chord: np.ndarray) -> np.ndarray:
    return 2.0 * np.arcsin(np.clip(np.asarray(chord) / 2.0, 0.0, 1.0))


def _angle_to_chord(angle: float) -> float:
    return 2.0 * np.sin(min(angle, np.pi) / 2.0)


def orthogonal_spacing(r0: float, r1: float) -> float:
    """Center angle g of orthogonal circles, cos g = cos r0 cos r1, in half-angle form."""
    return float(2.0 * np.arcsin(np.sqrt(np.sin(r0 / 2.0) ** 2 + np.cos(r0) * np.sin(r1 / 2.0) ** 2)))


def orthogonal_radius(g: float, r0: float) -> float:
    """Radius of the circle g away from a circle of radius r0 that meets it orthogonally."""
    rest = (np.sin(g / 2.0) ** 2 - np.sin(r0 / 2.0) ** 2) / np.cos(r0)
    return float(2.0 * np.arcsin(np.sqrt(np.clip(rest, 0.0, 1.0))))


class Polyline:
    """Closed polyline on the unit sphere with great-circle edges."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
            raise GeometryError("polyline needs at least three points on the sphere")
        pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        self.points = pts
        nxt = np.roll(pts, -1, axis=0)
        self.edge_lengths = _angle(pts, nxt)
        if np.any(self.edge_lengths < 1e-14):
            raise GeometryError("polyline has repeated vertices")
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.edge_lengths)])
        self.length = float(self.cumulative[-1])
        self._index = None

    def at(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.length)
        idx = np.clip(np.searchsorted(self.cumulative, s, side="right") - 1, 0, len(self.points) - 1)
        p = self.points[idx]
        q = self.points[(idx + 1) % len(self.points)]
        theta = self.edge_lengths[idx]
        u = s - self.cumulative[idx]
        sin_theta = np.sin(theta)
        w0 = np.sin(theta - u) / sin_theta
        w1 = np.sin(u) / sin_theta
        out = w0[..., None] * p + w1[..., None] * q
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def sample(self, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
        count = max(int(np.ceil(self.length / spacing)), len(self.points))
        s = np.linspace(0.0, self.length, count, endpoint=False)
        return s, self.at(s)

    def _edge_index(self) -> Tuple[cKDTree, np.ndarray]:
        if self._index is None:
            h = self.length / 4000.0
            per_edge = np.maximum(2, np.ceil(self.edge_lengths / h).astype(int))
            edges = np.repeat(np.arange(len(self.points)), per_edge)
            offsets = np.concatenate([np.linspace(0.0, 1.0, m, endpoint=False) for m in per_edge])
            s = self.cumulative[edges] + offsets * self.edge_lengths[edges]
            self._index = (cKDTree(self.at(s)), edges)
        return self._index

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Angular distance from each point to the curve."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tree, edges = self._edge_index()
        n = len(self.points)
        _, nearest = tree.query(pts, k=min(16, len(edges)))
        nearest = np.atleast_2d(nearest)
        out = np.empty(len(pts))
        for k, row in enumerate(nearest):
            candidates = np.unique(np.concatenate([(edges[row] + d) % n for d in (-1, 0, 1)]))
            out[k] = self._arc_distance(pts[k], candidates).min()
        return out

    def _arc_distance(self, x: np.ndarray, edges: np.ndarray) -> np.ndarray:
        p = self.points[edges]
        q = self.points[(edges + 1) % len(self.points)]
        normal = np.cross(p, q)
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        height = normal @ x
        foot = x[None, :] - height[:, None] * normal
        norms = np.linalg.norm(foot, axis=1)
        foot = foot / np.where(norms > 1e-300, norms, 1.0)[:, None]
        within = np.abs(_angle(p, foot) + _angle(foot, q) - self.edge_lengths[edges]) < 1e-12
        to_line = np.arcsin(np.clip(np.abs(height), 0.0, 1.0))
        to_ends = np.minimum(_angle(p, x[None, :]), _angle(q, x[None, :]))
        return np.where(within & (norms > 1e-300), to_line, to_ends)

    def winding_sides(self, points: np.ndarray, pole: np.ndarray) -> np.ndarray:
        """True for points on the side not containing pole."""
        rotation = rotation_between(pole, NORTH)
        poly = self.points @ rotation.T
        pts = np.atleast_2d(points) @ rotation.T
        # the pole goes to infinity
        a = poly[:, :2] / (1.0 - poly[:, 2:3])
        b = np.roll(a, -1, axis=0)
        qw = pts[:, :2] / np.maximum(1.0 - pts[:, 2:3], 1e-300)
        inside = np.zeros(len(qw), dtype=bool)
        for start in range(0, len(qw), 1024):
            q = qw[start:start + 1024, None, :]
            ya, yb = a[None, :, 1], b[None, :, 1]
            straddle = (ya > q[..., 1]) != (yb > q[..., 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = a[None, :, 0] + (q[..., 1] - ya) * (b[None, :, 0] - a[None, :, 0]) / (yb - ya)
            hits = straddle & (q[..., 0] < x_cross)
            inside[start:start + 1024] = np.count_nonzero(hits, axis=1) % 2 == 1
        return inside


@dataclass(frozen=True, eq=False)
class CoveringChain:
    circles: Tuple[SphereCircle, ...]
    target_curve: np.ndarray
    delta: float
    plus_reference: np.ndarray = field(default_factory=lambda: NORTH.copy())

    def __post_init__(self):
        if len(self.circles) < 6 or len(self.circles) % 2:
            raise ChainError("a chain needs an even number of at least six circles")
        object.__setattr__(self, "circles", tuple(self.circles))

    def __len__(self) -> int:
        return len(self.circles)

    @property
    def half_length(self) -> int:
        return len(self.circles) // 2

    @property
    def polyline(self) -> Polyline:
        cached = self.__dict__.get("_polyline")
        if cached is None:
            cached = Polyline(self.target_curve)
            object.__setattr__(self, "_polyline", cached)
        return cached

    @property
    def intersections(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        n = len(self.circles)
        return [circle_intersections(self.circles[i], self.circles[(i + 1) % n]) for i in range(n)]

    def centers(self) -> np.ndarray:
        return np.array([c.normal for c in self.circles])

    def radii(self) -> np.ndarray:
        return np.array([c.angular_radius for c in self.circles])

    def to_json(self) -> Dict:
        return {
            "circles": [c.to_json() for c in self.circles],
            "target_curve": [[float(x) for x in p] for p in self.target_curve],
            "delta": self.delta,
            "plus_reference": [float(x) for x in self.plus_reference],
        }

    @classmethod
    def from_json(cls, data: Dict) -> "CoveringChain":
        return cls(
            circles=tuple(SphereCircle.from_json(c) for c in data["circles"]),
            target_curve=np.array(data["target_curve"], dtype=float),
            delta=float(data["delta"]),
            plus_reference=np.array(data.get("plus_reference", NORTH), dtype=float),
        )

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_polyline", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)


@dataclass
class ChainReport:
    ok: bool
    orthogonality_residual: float
    min_gap: float
    max_radius: float
    uncovered_samples: int
    failures: List[str] = field(default_factory=list)
    failing_circles: List[int] = field(default_factory=list)


def covered_mask(chain: CoveringChain, points: np.ndarray) -> np.ndarray:
    """Points inside at least one disk of the chain."""
    pts = np.atleast_2d(points)
    centers, radii = chain.centers(), chain.radii()
    tree = cKDTree(centers)
    cosines = np.cos(radii)
    mask = np.zeros(len(pts), dtype=bool)
    for k, near in enumerate(tree.query_ball_point(pts, _angle_to_chord(float(radii.max())))):
        if near:
            mask[k] = bool(np.any(centers[near] @ pts[k] > cosines[near]))
    return mask


def check_chain(chain: CoveringChain, samples: int = 10000,
                obstacles: Sequence[SphereCircle] = ()) -> ChainReport:
    n = len(chain)
    centers, radii = chain.centers(), chain.radii()
    failures, failing = [], []

    for k, obstacle in enumerate(obstacles):
        gaps = _angle(centers, obstacle.normal[None, :]) - radii - obstacle.angular_radius
        hit = np.flatnonzero(gaps <= 0.0)
        if len(hit):
            failures.append(f"{len(hit)} circles meet obstacle {k}")
            failing.extend(int(i) for i in hit)

    nxt = np.roll(np.arange(n), -1)
    cosines = np.abs(crossing_cosine(_angle(centers, centers[nxt]), radii, radii[nxt]))
    residual = float(cosines.max())
    apart = np.flatnonzero(cosines >= 1.0)
    if len(apart):
        failures.append(f"{len(apart)} consecutive pairs do not meet, first at circle {int(apart[0])}")
        failing.extend(int(i) for i in apart)
    elif residual > ORTHOGONALITY_TOL:
        failures.append(f"consecutive circles not orthogonal (residual {residual:.2e})")

    tree = cKDTree(centers)
    min_gap = np.inf
    for i, j in sorted(tree.query_pairs(_angle_to_chord(2.0 * float(radii.max()) + 1e-9))):
        if (j - i) % n in (1, n - 1):
            continue
        gap = _raw_rho(chain.circles[i], chain.circles[j])
        min_gap = min(min_gap, gap)
        if gap <= 0.0:
            failures.append(f"circles {i} and {j} are not disjoint")
            failing.append(i)

    if radii.max() > chain.delta + 1e-12:
        failures.append(f"radius {radii.max():.4g} exceeds delta {chain.delta:.4g}")

    polyline = chain.polyline
    _, pts = polyline.sample(polyline.length / samples)
    uncovered = int(np.count_nonzero(~covered_mask(chain, pts)))
    if uncovered:
        failures.append(f"{uncovered} curve samples outside the disks")

    if polyline.distance(centers).max() > 1e-9:
        failures.append("a circle center is off the curve")

    return ChainReport(
        ok=not failures,
        orthogonality_residual=residual,
        min_gap=float(min_gap),
        max_radius=float(radii.max()),
        uncovered_samples=uncovered,
        failures=failures,
        failing_circles=failing,
    )


def equator_chain(count: int, delta: Optional[float] = None) -> CoveringChain:
    """Equal circles centered at equally spaced equator points.

    Equal caps of radius alpha with centers g apart meet orthogonally
    when cos(g) = cos(alpha)^2.
    """
    if count < 6 or count % 2:
        raise ChainError("chain length must be even and at least six")
    g = 2.0 * np.pi / count
    alpha = float(np.arccos(np.sqrt(np.cos(g))))
    theta = g * np.arange(count)
    centers = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(count)])
    circles = tuple(SphereCircle.from_center(c, alpha) for c in centers)
    return CoveringChain(circles=circles, target_curve=centers, delta=alpha if delta is None else float(delta))


def equator_chain_for_delta(delta: float) -> CoveringChain:
    """Shortest equator chain with radii at most delta."""
    if delta <= 0.0:
        raise ChainError("delta must be positive")
    count = 6
    while np.arccos(np.sqrt(np.cos(2.0 * np.pi / count))) > delta:
        count += 2
        if count > 10 ** 6:
            raise ChainError("delta below chain resolution")
    return equator_chain(count, delta)


def cut_corners(points: np.ndarray, max_cut: float) -> np.ndarray:
    """Chamfer vertices where the curve turns by more than 80 degrees."""
    n = len(points)
    out = []
    for i in range(n):
        prev, here, nxt = points[i - 1], points[i], points[(i + 1) % n]
        t_in = here * np.dot(here, prev) - prev
        t_out = nxt - here * np.dot(here, nxt)
        cos_turn = np.dot(t_in, t_out) / (np.linalg.norm(t_in) * np.linalg.norm(t_out))
        if cos_turn >= np.cos(np.radians(80.0)):
            out.append(here)
            continue
        cut = min(max_cut, _angle(prev, here) / 3.0, _angle(here, nxt) / 3.0)
        for other in (prev, nxt):
            theta = float(_angle(here, other))
            p = np.sin(theta - cut) * here + np.sin(cut) * other
            out.append(p / np.linalg.norm(p))
    return np.array(out)


def _edge_feet(polyline: Polyline, x: np.ndarray, edges: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance from x to each edge and the arclength position of the nearest point."""
    p = polyline.points[edges]
    q = polyline.points[(edges + 1) % len(polyline.points)]
    lengths = polyline.edge_lengths[edges]
    normal = np.cross(p, q)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    height = normal @ x
    foot = x[None, :] - height[:, None] * normal
    norms = np.linalg.norm(foot, axis=1)
    foot = foot / np.where(norms > 1e-300, norms, 1.0)[:, None]
    along = _angle(p, foot)
    within = (np.abs(along + _angle(foot, q) - lengths) < 1e-12) & (norms > 1e-300)
    to_p, to_q = _angle(p, x[None, :]), _angle(q, x[None, :])
    dist = np.where(within, np.arcsin(np.clip(np.abs(height), 0.0, 1.0)), np.minimum(to_p, to_q))
    offset = np.where(within, along, np.where(to_p <= to_q, 0.0, lengths))
    return dist, polyline.cumulative[edges] + offset


def _radius_profile(polyline: Polyline, delta: float,
                    obstacles: Sequence[SphereCircle] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """Local radius bound r(s) <= delta.

    Radii stay below a third of the distance to parts of the curve that
    are far away along it, and below half the distance to any obstacle.
    """
    h = min(delta / 8.0, polyline.length / 400.0)
    per_edge = np.maximum(1, np.ceil(polyline.edge_lengths / h).astype(int))
    edges = np.repeat(np.arange(len(polyline.points)), per_edge)
    offsets = np.concatenate([np.arange(m) / m for m in per_edge])
    s = polyline.cumulative[edges] + offsets * polyline.edge_lengths[edges]
    pts = polyline.at(s)
    radius = np.full(len(s), float(delta))

    for obstacle in obstacles:
        radius = np.minimum(radius, 0.5 * np.maximum(obstacle.signed_distance(pts), 0.0))

    reach = _angle_to_chord(3.0 * delta + h)
    for k, near in enumerate(cKDTree(pts).query_ball_point(pts, reach)):
        candidates = np.unique(edges[np.asarray(near, dtype=int)])
        dist, foot = _edge_feet(polyline, pts[k], candidates)
        arc = np.abs(foot - s[k])
        arc = np.minimum(arc, polyline.length - arc)
        distant = arc > 2.0 * dist + 1e-12
        if np.any(distant):
            radius[k] = min(radius[k], float(dist[distant].min()) / 3.0)

    # radii vary slowly along the curve
    gaps = np.diff(np.concatenate([s, [s[0] + polyline.length]]))
    for _ in range(2):
        for k in range(len(radius)):
            radius[k] = min(radius[k], radius[k - 1] + 0.25 * gaps[k - 1])
        for k in range(len(radius) - 1, -1, -1):
            nxt = (k + 1) % len(radius)
            radius[k] = min(radius[k], radius[nxt] + 0.25 * gaps[k])
    return s, radius


class _ChainMarcher:
    def __init__(self, polyline: Polyline, s_grid: np.ndarray, radius: np.ndarray):
        self.polyline = polyline
        self.s_grid = np.concatenate([s_grid, [polyline.length]])
        self.radius = np.concatenate([radius, radius[:1]])

    def r_at(self, s: float, scale: float) -> float:
        return scale * float(np.interp(np.mod(s, self.polyline.length), self.s_grid, self.radius))

    def step(self, s0: float, scale: float) -> float:
        """Next center position whose circle meets the one at s0 orthogonally."""
        p0 = self.polyline.at(s0)
        r0 = self.r_at(s0, scale)

        def mismatch(s1: float) -> float:
            target = orthogonal_spacing(r0, self.r_at(s1, scale))
            return float(_angle(p0, self.polyline.at(s1))) - target

        hi = s0 + 1.5 * r0
        while mismatch(hi) < 0.0:
            hi += r0
            if hi - s0 > 20.0 * r0:
                raise ChainError("orthogonal successor not found", segment=self.segment(s0))
        return brentq(mismatch, s0 + 1e-3 * r0, hi, xtol=1e-15, rtol=1e-15)

    def march(self, count: int, scale: float) -> np.ndarray:
        positions = [0.0]
        for _ in range(count):
            positions.append(self.step(positions[-1], scale))
        return np.array(positions)

    def segment(self, s: float) -> int:
        return _segment_at(self.polyline, s)


def _segment_at(polyline: Polyline, s: float) -> int:
    s = np.mod(s, polyline.length)
    return int(np.searchsorted(polyline.cumulative, s, side="right") - 1)


def _closing_scale(marcher: _ChainMarcher, count: int) -> float:
    length = marcher.polyline.length

    def overshoot(scale: float) -> float:
        return marcher.march(count, scale)[-1] - length

    guess = min(1.0, length / (overshoot(1.0) + length))
    lo, hi = 0.97 * guess, min(1.0, 1.03 * guess)
    while overshoot(lo) > 0.0:
        lo *= 0.9
        if lo < 1e-3:
            raise ChainError("could not close the chain", segment=0)
    while overshoot(hi) < 0.0:
        hi = min(1.0, hi * 1.05)
    return brentq(overshoot, lo, hi, xtol=1e-15, rtol=1e-15)


def _closing_circle(polyline: Polyline, positions: np.ndarray, radii: Sequence[float]) -> Tuple[float, float]:
    """Position and radius of the last circle, orthogonal to both of its neighbours."""
    previous, first = polyline.at(positions[-2]), polyline.at(positions[0])

    def imbalance(s: float) -> float:
        p = polyline.at(s)
        return (orthogonal_radius(float(_angle(previous, p)), radii[-2])
                - orthogonal_radius(float(_angle(p, first)), radii[0]))

    width = 0.25 * radii[-1]
    lo, hi = positions[-1] - width, positions[-1] + width
    for _ in range(8):
        if imbalance(lo) < 0.0 < imbalance(hi):
            break
        lo, hi = max(lo - width, positions[-2] + 1e-3 * width), hi + width
    else:
        raise ChainError("could not close the chain", segment=_segment_at(polyline, positions[-1]))
    s = brentq(imbalance, lo, hi, xtol=1e-15, rtol=1e-15)
    return float(s), orthogonal_radius(float(_angle(previous, polyline.at(s))), radii[-2])


def build_chain(curve: np.ndarray, delta: float, plus_reference: Optional[np.ndarray] = None,
                obstacles: Sequence[SphereCircle] = (), max_retries: int = 6) -> CoveringChain:
    """Cover a closed polyline by an even chain of orthogonally meeting disks.

    Radii follow the local clearance of the curve and of the obstacle
    disks, capped at delta, and are scaled so that the chain closes up
    exactly. Circles that collide with non-neighbours or obstacles get
    smaller radii around them on the next attempt.
    """
    if delta <= 0.0:
        raise ChainError("delta must be positive")
    polyline = Polyline(cut_corners(Polyline(curve).points, delta))
    if polyline.edge_lengths.min() < 1e-9:
        raise ChainError("polyline resolution below numerical precision",
                         segment=int(np.argmin(polyline.edge_lengths)))
    s_grid, radius = _radius_profile(polyline, delta, obstacles)
    k = int(np.argmin(radius))
    if radius[k] < 1e-9:
        raise ChainError("curve touches an obstacle or itself", segment=_segment_at(polyline, s_grid[k]))
    gaps = np.diff(np.concatenate([s_grid, [polyline.length]]))
    estimate = float(np.sum(gaps / (np.sqrt(2.0) * radius)))
    if estimate > MAX_CHAIN_CIRCLES:
        raise ChainError(f"delta too small for the polyline resolution (about {estimate:.0f} circles)",
                         segment=_segment_at(polyline, s_grid[k]))

    samples = int(min(200000, max(10000, 2.0 * polyline.length / radius.min())))
    reference = NORTH.copy() if plus_reference is None else np.asarray(plus_reference, dtype=float)
    for attempt in range(max_retries):
        marcher = _ChainMarcher(polyline, s_grid, radius)
        count, s = 0, 0.0
        while s < polyline.length:
            s = marcher.step(s, 1.0)
            count += 1
        count = max(6, count + count % 2)
        scale = _closing_scale(marcher, count)
        positions = marcher.march(count, scale)[:-1]
        radii = [marcher.r_at(p, scale) for p in positions]
        positions[-1], radii[-1] = _closing_circle(polyline, positions, radii)
        circles = tuple(SphereCircle.from_center(polyline.at(p), r) for p, r in zip(positions, radii))
        chain = CoveringChain(circles=circles, target_curve=polyline.points, delta=float(delta),
                              plus_reference=reference)
        report = check_chain(chain, samples=samples, obstacles=obstacles)
        if report.ok:
            logger.info(f"Built chain of {len(circles)} circles (delta={delta}, scale={scale:.4f})")
            return chain

        logger.warning(f"Chain attempt {attempt + 1} failed: {report.failures[0]}; retrying with shrunk radii")
        if not report.failing_circles:
            radius = radius * 0.8
        for i in report.failing_circles:
            radius[np.abs(s_grid - positions[i]) < 4.0 * marcher.r_at(positions[i], 1.0)] *= 0.7
    segment = marcher.segment(positions[report.failing_circles[0]]) if report.failing_circles else 0
    raise ChainError(f"chain construction did not converge: {report.failures[0]}", segment=segment)


@dataclass(frozen=True, eq=False)
class InversionGroup:
    chain: CoveringChain
    generators_f: Tuple[MobiusMap, ...]
    generators_g: Tuple[MobiusMap, ...]

    @classmethod
    def from_chain(cls, chain: CoveringChain) -> "InversionGroup":
        f = tuple(inversion_in_circle(c) for c in chain.circles)
        n = len(f)
        g = tuple(compose(f[i], f[(i + 1) % n]) for i in range(n))
        return cls(chain=chain, generators_f=f, generators_g=g)

    def word_map(self, letters: Sequence[int]) -> MobiusMap:
        out = MobiusMap.identity()
        for i in letters:
            out = compose(out, self.generators_f[i])
        return out


@dataclass
class RelationReport:
    ok: bool
    residuals: Dict[str, float]
    failures: List[str] = field(default_factory=list)
    tol: float = 1e-9
    tolerances: Dict[str, float] = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return min(self.tolerances.get(name, self.tol) - value for name, value in self.residuals.items())


def _local_inversions(circles: Sequence[SphereCircle]) -> List[MobiusMap]:
    """Inversions in nearby circles, in a chart centered on them and scaled to their size.

    The forms are assembled from centers and radii, so circles much
    smaller than the sphere keep full relative precision.
    """
    normals = np.array([c.normal for c in circles])
    radii = np.array([c.angular_radius for c in circles])
    rotation = rotation_between(normals.sum(axis=0) / np.linalg.norm(normals.sum(axis=0)), -NORTH)
    scale = float(np.sin(radii.mean()))
    out = []
    for n, r in zip(normals @ rotation.T, radii):
        lift = (n[0] ** 2 + n[1] ** 2) / (1.0 - n[2])
        form = np.array([[lift - 1.0 - np.cos(r), complex(n[0], n[1]) / scale],
                         [complex(n[0], -n[1]) / scale, (2.0 * np.sin(r / 2.0) ** 2 - lift) / scale**2]])
        out.append(inversion_from_form(form))
    return out


def verify_relations(group: InversionGroup, tol: float = 1e-9) -> RelationReport:
    """Check f_i^2 = 1, g_i^2 = 1 and g_1...g_2L = 1.

    The squares are evaluated in a chart local to each pair of circles. The
    product is evaluated in the global chart, starting at the largest
    circle, and its tolerance grows with the rounding bound of the product.
    """
    circles = group.chain.circles
    n = len(circles)
    residuals: Dict[str, float] = {}
    tolerances: Dict[str, float] = {}
    for i in range(n):
        f, f_next = _local_inversions([circles[i], circles[(i + 1) % n]])
        residuals[f"f{i + 1}^2"] = compose(f, f).distance_to_identity()
        tolerances[f"f{i + 1}^2"] = min(tol, 1e-10)
        g = compose(f, f_next)
        residuals[f"g{i + 1}^2"] = compose(g, g).distance_to_identity()
        tolerances[f"g{i + 1}^2"] = tol

    start = int(np.argmax(group.chain.radii()))
    product, bound = MobiusMap.identity(), 0.0
    for step in range(n):
        k = (start + step) % n
        bound += float(np.linalg.norm(product.matrix) * np.linalg.norm(group.generators_f[k].matrix)
                       * np.linalg.norm(group.generators_f[(k + 1) % n].matrix))
        product = compose(product, group.generators_g[k])
    residuals["g1...g2L"] = product.distance_to_identity()
    tolerances["g1...g2L"] = max(tol, ROUNDING_GROWTH * np.finfo(float).eps * bound)

    failures = [name for name, value in residuals.items() if value >= tolerances[name]]
    return RelationReport(ok=not failures, residuals=residuals, failures=failures, tol=tol, tolerances=tolerances)


def fixed_points(g: MobiusMap) -> List[np.ndarray]:
    """Fixed points of a preserving map, as sphere points."""
    a, b, c, d = g.sl2().ravel()
    scale = max(abs(a), abs(b), abs(c), abs(d))
    if abs(c) <= 1e-14 * scale:
        points = [NORTH.copy()]
        if abs(a - d) > 1e-14 * scale:
            points.append(StereographicChart.unproject(complex(b / (d - a))))
        return points
    disc = np.sqrt(complex((a + d) ** 2 - 4.0))
    if abs(disc) < 1e-7:
        return [StereographicChart.unproject(complex((a - d) / (2.0 * c)))]
    return [StereographicChart.unproject(complex((a - d + sign * disc) / (2.0 * c))) for sign in (1.0, -1.0)]


def classify_pair_product(c1: SphereCircle, c2: SphereCircle, tol: float = 1e-9) -> PairClass:
    """Type of the composition of the two inversions, read off its trace."""
    g = compose(inversion_in_circle(c1), inversion_in_circle(c2))
    tr2 = g.trace() ** 2
    if abs(tr2.imag) > tol:
        return PairClass.OTHER
    t = tr2.real
    if t > 4.0 + tol:
        return PairClass.LOXODROMIC
    if abs(t - 4.0) <= tol:
        return PairClass.PARABOLIC
    if -tol <= t < 4.0 and compose(g, g).is_identity(1e-8):
        return PairClass.ELLIPTIC_ORDER2
    return PairClass.OTHER


@dataclass(frozen=True, eq=False)
class LimitSetCloud:
    points: np.ndarray
    depth: int
    prune_tol: float
    max_word_count: int
    emitted: int = 0
    even_words: int = 0
    open_branches: int = 0

    @property
    def truncated(self) -> bool:
        return self.open_branches > 0

    def to_json(self) -> Dict:
        return {
            "points": [[float(x) for x in p] for p in self.points],
            "depth": self.depth,
            "prune_tol": self.prune_tol,
            "max_word_count": self.max_word_count,
            "emitted": self.emitted,
            "even_words": self.even_words,
            "open_branches": self.open_branches,
        }

    @classmethod
    def from_json(cls, data: Dict) -> "LimitSetCloud":
        return cls(
            points=np.array(data["points"], dtype=float).reshape(-1, 3),
            depth=int(data["depth"]),
            prune_tol=float(data["prune_tol"]),
            max_word_count=int(data["max_word_count"]),
            emitted=int(data.get("emitted", 0)),
            even_words=int(data.get("even_words", 0)),
            open_branches=int(data.get("open_branches", 0)),
        )


class _SummaryTree:
    """Bounding caps over contiguous index ranges of the chain."""

    def __init__(self, circles: Sequence[SphereCircle]):
        self.circles = list(circles)
        self.leaf_forms = [c.hermitian() for c in self.circles]
        self.nodes: List[Tuple[int, int, Optional[np.ndarray], int, int]] = []
        self.root = self._build(0, len(self.circles))

    def _build(self, lo: int, hi: int) -> int:
        index = len(self.nodes)
        self.nodes.append((lo, hi, None, -1, -1))
        if hi - lo == 1:
            self.nodes[index] = (lo, hi, self.leaf_forms[lo], -1, -1)
            return index
        mid = (lo + hi) // 2
        left = self._build(lo, mid)
        right = self._build(mid, hi)
        normals = np.array([c.normal for c in self.circles[lo:hi]])
        radii = np.array([c.angular_radius for c in self.circles[lo:hi]])
        center = normals.sum(axis=0)
        form = None
        if np.linalg.norm(center) > 1e-9:
            center = center / np.linalg.norm(center)
            reach = float(np.max(_angle(center[None, :], normals) + radii))
            if reach < np.pi - 1e-3:
                form = SphereCircle.from_center(center, reach).hermitian()
        self.nodes[index] = (lo, hi, form, left, right)
        return index


def _image_cap(inv: np.ndarray, reversing: bool, form: np.ndarray) -> Tuple[np.ndarray, float]:
    h = np.conj(form) if reversing else form
    image = inv.conj().T @ h @ inv
    big_a, big_c, beta = image[0, 0].real, image[1, 1].real, image[0, 1]
    normal = np.array([beta.real, beta.imag, (big_a - big_c) / 2.0])
    norm = np.linalg.norm(normal)
    return normal / norm, -(big_a + big_c) / (2.0 * norm)


class _Explorer:
    """Depth-first walk over normal-form words of a right-angled reflection group.

    A word w x is in normal form when x is not in the tail of w (the letters
    that commute to the end of w) and no larger tail letter commutes with x.
    All limit points of words extending w x lie in w(disk x); a small
    region is recorded by the image under w of a limit point inside disk x,
    the attracting fixed point of f_x f_{x+2}.
    """

    def __init__(self, chain: CoveringChain, prune_tol: float, max_depth: int):
        self.n = len(chain)
        self.prune_tol = prune_tol
        self.max_depth = max_depth
        self.f = [inversion_in_circle(c) for c in chain.circles]
        self.tree = _SummaryTree(chain.circles)
        self.anchors = [self._anchor(chain, x) for x in range(self.n)]
        self.points: List[np.ndarray] = []
        self.words = 0
        self.even = 0
        self.open = 0

    def _anchor(self, chain: CoveringChain, x: int) -> np.ndarray:
        g = compose(self.f[x], self.f[(x + 2) % self.n])
        _, vectors = np.linalg.eig(g.matrix)
        inside = chain.circles[x].contains(from_homogeneous(vectors))
        if not inside.any():
            raise GeometryError("no fixed point inside its disk", {"letter": x})
        return vectors[:, int(np.argmax(inside))]

    def _commute(self, i: int, j: int) -> bool:
        return (i - j) % self.n in (1, self.n - 1)

    def _allowed(self, x: int, tail: FrozenSet[int]) -> bool:
        if x in tail:
            return False
        return not any(y > x and self._commute(x, y) for y in tail)

    def _first_allowed(self, lo: int, hi: int, tail: FrozenSet[int]) -> Optional[int]:
        # a tail forbids at most four letters
        for x in range(lo, hi):
            if self._allowed(x, tail):
                return x
        return None

    def _emit(self, matrix: np.ndarray, reversing: bool, x: int, length: int) -> None:
        anchor = np.conj(self.anchors[x]) if reversing else self.anchors[x]
        self.points.append(from_homogeneous((matrix @ anchor)[:, None])[0])
        if length % 2 == 0:
            self.even += 1

    def run(self, first_letters: Sequence[int]) -> None:
        identity = np.eye(2, dtype=complex)
        for x in first_letters:
            stack: list = []
            self._visit(identity, identity, False, frozenset(), 0, x, stack)
            while stack:
                matrix, reversing, tail, length = stack.pop()
                inv = np.linalg.inv(matrix)
                nodes = [self.tree.root]
                while nodes:
                    lo, hi, form, left, right = self.tree.nodes[nodes.pop()]
                    first = self._first_allowed(lo, hi, tail)
                    if first is None:
                        continue
                    if left < 0:
                        self._visit(matrix, inv, reversing, tail, length, lo, stack)
                        continue
                    if form is not None:
                        _, offset = _image_cap(inv, reversing, form)
                        if 2.0 * np.arccos(np.clip(offset, -1.0, 1.0)) < self.prune_tol:
                            self.words += 1
                            self._emit(matrix, reversing, first, length + 1)
                            continue
                    nodes.extend([right, left])

    def _visit(self, matrix, inv, reversing, tail, length, x, stack) -> None:
        if not self._allowed(x, tail):
            return
        self.words += 1
        _, offset = _image_cap(inv, reversing, self.tree.leaf_forms[x])
        if 2.0 * np.arccos(np.clip(offset, -1.0, 1.0)) < self.prune_tol:
            self._emit(matrix, reversing, x, length + 1)
            return
        if length + 1 >= self.max_depth:
            self.open += 1
            self._emit(matrix, reversing, x, length + 1)
            return
        f = self.f[x]
        child = matrix @ (np.conj(f.matrix) if reversing else f.matrix)
        child = child / np.sqrt(abs(np.linalg.det(child)))
        child_tail = frozenset({x} | {y for y in tail if self._commute(x, y)})
        stack.append((child, reversing != f.reversing, child_tail, length + 1))


def _explore(job) -> Tuple[List[np.ndarray], int, int, int]:
    chain, prune_tol, max_depth, letters = job
    explorer = _Explorer(chain, prune_tol, max_depth)
    explorer.run(letters)
    return explorer.points, explorer.words, explorer.even, explorer.open


def _dedupe(points: np.ndarray, resolution: float) -> np.ndarray:
    if len(points) == 0:
        return points.reshape(0, 3)
    points = points[np.lexsort(points.T[::-1])]
    keys = np.floor(points / resolution).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    kept = points[np.sort(first)]
    return kept[np.lexsort(kept.T[::-1])]


def limit_set(group: InversionGroup, prune_tol: float, max_depth: int = 40,
              workers: Optional[int] = None) -> LimitSetCloud:
    """Points of the limit set at resolution prune_tol, sorted lexicographically."""
    if prune_tol <= 0.0:
        raise GeometryError("prune_tol must be positive", {"prune_tol": prune_tol})
    chain = group.chain
    workers = max(1, workers or settings.LIMITSET_WORKERS)
    letters = list(range(len(chain)))
    jobs = [(chain, prune_tol, max_depth, letters[k::workers]) for k in range(min(workers, len(letters)))]

    if len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(_explore, jobs))
    else:
        results = [_explore(jobs[0])]

    raw = [p for points, _, _, _ in results for p in points]
    words = sum(r[1] for r in results)
    even = sum(r[2] for r in results)
    open_branches = sum(r[3] for r in results)
    points = _dedupe(np.array(raw, dtype=float).reshape(-1, 3), prune_tol / 2.0)
    if open_branches:
        logger.warning(f"Limit set reached max_depth={max_depth} with {open_branches} open branches")
    logger.info(f"Limit set: {len(points)} points from {words} words (prune_tol={prune_tol})")
    return LimitSetCloud(points=points, depth=max_depth, prune_tol=prune_tol, max_word_count=words,
                         emitted=len(raw), even_words=even, open_branches=open_branches)


def random_orbit_points(group: InversionGroup, count: int, seed: int = 0, burn_in: int = 50) -> np.ndarray:
    """Random-orbit sample of the limit set, for pictures only."""
    rng = np.random.default_rng(seed)
    n = len(group.generators_f)
    point = group.chain.circles[0].normal.copy()
    last = -1
    out = np.empty((count, 3))
    for k in range(count + burn_in):
        x = int(rng.integers(n - 1 if last >= 0 else n))
        if 0 <= last <= x:
            x += 1
        point = group.generators_f[x].apply_points(point)
        last = x
        if k >= burn_in:
            out[k - burn_in] = point
    return out


@dataclass
class NeighborhoodReport:
    ok: bool
    max_distance: float
    delta: float


def verify_neighborhood(cloud: LimitSetCloud, chain: CoveringChain) -> NeighborhoodReport:
    if len(cloud.points) == 0:
        return NeighborhoodReport(ok=False, max_distance=float("inf"), delta=chain.delta)
    worst = float(chain.polyline.distance(cloud.points).max())
    return NeighborhoodReport(ok=worst <= chain.delta, max_distance=worst, delta=chain.delta)


@dataclass
class LensReport:
    ok: bool
    missing: List[int]
    corner_distances: List[Tuple[float, float]]


def verify_lens_incidence(cloud: LimitSetCloud, chain: CoveringChain) -> LensReport:
    """Every lens between consecutive disks holds a cloud point, up to prune_tol."""
    n = len(chain)
    if len(cloud.points) == 0:
        return LensReport(ok=False, missing=list(range(n)), corner_distances=[])
    tree = cKDTree(cloud.points)
    missing, corners = [], []
    for i in range(n):
        c1, c2 = chain.circles[i], chain.circles[(i + 1) % n]
        try:
            z, z_prime = circle_intersections(c1, c2)
        except GeometryError:
            missing.append(i)
            corners.append((float("nan"), float("nan")))
            continue
        corners.append((float(_chord_to_angle(tree.query(z)[0])), float(_chord_to_angle(tree.query(z_prime)[0]))))
        middle = (z + z_prime) / np.linalg.norm(z + z_prime)
        reach = _angle_to_chord(min(c1.angular_radius, c2.angular_radius) + cloud.prune_tol)
        near = tree.query_ball_point(middle, reach)
        pts = cloud.points[near] if near else np.empty((0, 3))
        inside = (c1.signed_distance(pts) <= cloud.prune_tol) & (c2.signed_distance(pts) <= cloud.prune_tol)
        if not np.any(inside):
            missing.append(i)
    return LensReport(ok=not missing, missing=missing, corner_distances=corners)


def fibonacci_sphere(count: int) -> np.ndarray:
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    phi = np.pi * (1.0 + 5.0 ** 0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def _projection_pole(chain: CoveringChain) -> np.ndarray:
    grid = fibonacci_sphere(2000)
    return grid[int(np.argmax(chain.polyline.distance(grid)))]


def _plus_mask(chain: CoveringChain, pts: np.ndarray) -> np.ndarray:
    polyline = chain.polyline
    pole = _projection_pole(chain)
    far_side = polyline.winding_sides(pts, pole)
    reference = polyline.winding_sides(chain.plus_reference[None, :], pole)[0]
    return far_side == reference


def side_of(chain: CoveringChain, points: np.ndarray) -> List[Side]:
    """Plus for the region holding the chain's reference point, Minus for the other."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    covered = covered_mask(chain, pts)
    plus = _plus_mask(chain, pts)
    return [Side.COVERED if c else (Side.PLUS if p else Side.MINUS) for c, p in zip(covered, plus)]


@dataclass
class RegionPartition:
    points: np.ndarray
    labels: np.ndarray
    components: Dict[str, int]

    def of(self, side: Side) -> np.ndarray:
        return self.points[self.labels == side.value]


def regions(chain: CoveringChain, samples: int = 20000) -> RegionPartition:
    """Split the uncovered points of a sphere grid into the two regions E and E'.

    Grid points are labelled by side of the curve, then flood-filled along
    nearest-neighbour edges with an uncovered midpoint; each side has to
    form one large component.
    """
    grid = fibonacci_sphere(samples)
    covered = covered_mask(chain, grid)
    plus = _plus_mask(chain, grid)
    labels = np.where(covered, Side.COVERED.value, np.where(plus, Side.PLUS.value, Side.MINUS.value))

    free = np.flatnonzero(~covered)
    if len(free) < 2:
        raise GeometryError("the disks cover the sphere")
    _, neighbors = cKDTree(grid[free]).query(grid[free], k=min(7, len(free)))
    a = np.repeat(np.arange(len(free)), neighbors.shape[1] - 1)
    b = neighbors[:, 1:].ravel()
    keep = plus[free[a]] == plus[free[b]]
    a, b = a[keep], b[keep]
    mid = grid[free[a]] + grid[free[b]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    keep = ~covered_mask(chain, mid)
    a, b = a[keep], b[keep]
    graph = coo_matrix((np.ones(len(a)), (a, b)), shape=(len(free), len(free)))
    _, component = connected_components(graph, directed=False)

    counts: Dict[str, int] = {}
    for side in (Side.PLUS, Side.MINUS):
        members = component[plus[free] == (side is Side.PLUS)]
        if len(members) == 0:
            raise GeometryError(f"no {side.value} region found", {"samples": samples})
        sizes = np.bincount(members)
        counts[side.value] = int(np.count_nonzero(sizes > max(3, samples // 1000)))
    if counts[Side.PLUS.value] != 1 or counts[Side.MINUS.value] != 1:
        raise GeometryError("complement of the disks does not split into two regions", counts)
    return RegionPartition(points=grid, labels=labels, components=counts)


def genus_of_quotient(chain: CoveringChain) -> int:
    """Genus L - 1 of the closed surface double covering the quotient orbifold.

    The orbifold is a sphere with 2L cone points of angle pi, so its Euler
    characteristic is 2 - L and the double cover has 2(2 - L) = 2 - 2g.
    """
    orbifold_chi = 2.0 - 0.5 * len(chain)
    genus = int(round(1.0 - orbifold_chi))
    if genus != chain.half_length - 1:
        raise GeometryError("Euler characteristic mismatch", {"L": chain.half_length, "genus": genus})
    return genus
