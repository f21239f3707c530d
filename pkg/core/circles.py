"""Round circles on the unit sphere and the distances between them."""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from core.errors import GeometryError
from core.moebius import INFINITY, ChartPoint, MobiusMap, SpherePoint, cross_ratio, rotation_between

TANGENCY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SphereCircle:
    """The circle {x : n.x = h}; its disk is {x : n.x > h}.

    Circles built from a center and a radius keep that radius; h = cos(r)
    alone fixes small radii only to about sqrt(machine epsilon).
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm < 1e-300:
            raise GeometryError("circle normal is the zero vector")
        h = float(self.offset) / norm
        n = n / norm
        if not -1.0 < h < 1.0:
            raise GeometryError("circle offset outside (-1, 1)", {"offset": h})
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", h)

    @classmethod
    def from_center(cls, center: SpherePoint, angular_radius: float) -> "SphereCircle":
        circle = cls(np.asarray(center, dtype=float), float(np.cos(angular_radius)))
        object.__setattr__(circle, "_radius", float(angular_radius))
        return circle

    @classmethod
    def from_chart(cls, center: complex, radius: float, inside: bool = True) -> "SphereCircle":
        """Circle |w - center| = radius of the stereographic chart."""
        c = complex(center)
        h = np.array([[1.0, -c], [-np.conj(c), abs(c) ** 2 - radius**2]], dtype=complex)
        return cls.from_hermitian(-h if inside else h)

    @classmethod
    def from_hermitian(cls, h: np.ndarray) -> "SphereCircle":
        big_a, big_c, beta = float(h[0, 0].real), float(h[1, 1].real), complex(h[0, 1])
        n = np.array([beta.real, beta.imag, (big_a - big_c) / 2.0])
        return cls(n, -(big_a + big_c) / 2.0)

    @property
    def center(self) -> SpherePoint:
        return self.normal

    @property
    def angular_radius(self) -> float:
        radius = self.__dict__.get("_radius")
        if radius is None:
            return float(np.arccos(np.clip(self.offset, -1.0, 1.0)))
        return radius

    def hermitian(self) -> np.ndarray:
        """Hermitian form whose positive set in the chart is the disk."""
        n, h = self.normal, self.offset
        beta = complex(n[0], n[1])
        return np.array([[n[2] - h, beta], [np.conj(beta), -(n[2] + h)]], dtype=complex)

    def complement(self) -> "SphereCircle":
        return SphereCircle.from_center(-self.normal, np.pi - self.angular_radius)

    def transformed(self, m: MobiusMap) -> "SphereCircle":
        """Image circle, with the image of the disk as its disk."""
        h = self.hermitian()
        if m.reversing:
            h = np.conj(h)
        inv = np.linalg.inv(m.matrix)
        return SphereCircle.from_hermitian(inv.conj().T @ h @ inv)

    def contains(self, points: SpherePoint) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal > self.offset

    def signed_distance(self, points: SpherePoint) -> np.ndarray:
        """Angular distance to the circle, negative inside the disk."""
        cosines = np.clip(np.asarray(points, dtype=float) @ self.normal, -1.0, 1.0)
        return np.arccos(cosines) - self.angular_radius

    def sample(self, count: int) -> SpherePoint:
        u, v = orthonormal_complement(self.normal)
        theta = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        s = np.sqrt(1.0 - self.offset**2)
        return (self.offset * self.normal[None, :]
                + s * (np.cos(theta)[:, None] * u[None, :] + np.sin(theta)[:, None] * v[None, :]))

    def chart_center_radius(self) -> Tuple[complex, float]:
        h = self.hermitian()
        big_a, beta, big_c = h[0, 0].real, h[0, 1], h[1, 1].real
        if abs(big_a) < 1e-14:
            raise GeometryError("circle passes through the projection pole")
        return complex(-beta / big_a), float(np.sqrt(abs(beta) ** 2 - big_a * big_c) / abs(big_a))

    def to_json(self) -> Dict:
        return {"normal": [float(x) for x in self.normal], "offset": float(self.offset),
                "radius": self.angular_radius}

    @classmethod
    def from_json(cls, data: Dict) -> "SphereCircle":
        if "radius" in data:
            return cls.from_center(np.array(data["normal"], dtype=float), float(data["radius"]))
        return cls(np.array(data["normal"], dtype=float), float(data["offset"]))

    def __repr__(self) -> str:
        n = ", ".join(f"{x:.6g}" for x in self.normal)
        return f"SphereCircle(normal=[{n}], offset={self.offset:.6g})"


@dataclass(frozen=True)
class CirclePair:
    first: SphereCircle
    second: SphereCircle

    def transformed(self, m: MobiusMap) -> "CirclePair":
        return CirclePair(self.first.transformed(m), self.second.transformed(m))

    def to_json(self) -> List[Dict]:
        return [self.first.to_json(), self.second.to_json()]

    @classmethod
    def from_json(cls, data: Sequence[Dict]) -> "CirclePair":
        return cls(SphereCircle.from_json(data[0]), SphereCircle.from_json(data[1]))


def orthonormal_complement(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = np.asarray(n, dtype=float)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def center_angle(c1: SphereCircle, c2: SphereCircle) -> float:
    cross = np.linalg.norm(np.cross(c1.normal, c2.normal))
    return float(np.arctan2(cross, np.dot(c1.normal, c2.normal)))


def _raw_rho(c1: SphereCircle, c2: SphereCircle) -> float:
    return center_angle(c1, c2) - c1.angular_radius - c2.angular_radius


def spherical_distance_rho(c1: SphereCircle, c2: SphereCircle) -> float:
    rho = _raw_rho(c1, c2)
    if rho < -TANGENCY_TOL:
        raise GeometryError("disks overlap or are nested", {"rho": rho})
    return max(rho, 0.0) if rho > TANGENCY_TOL else 0.0


def _meridian_endpoints(circle: SphereCircle) -> Tuple[ChartPoint, ChartPoint]:
    # circle whose normal lies in the xz-plane: its trace on that great circle
    theta_c = float(np.arctan2(circle.normal[0], circle.normal[2]))
    alpha = circle.angular_radius
    out = []
    for theta in (theta_c - alpha, theta_c + alpha):
        s, c = np.sin(theta / 2.0), np.cos(theta / 2.0)
        out.append(INFINITY if abs(s) < 1e-15 else complex(c / s))
    return out[0], out[1]


def plane_distance_dL(c1: SphereCircle, c2: SphereCircle) -> float:
    """Hyperbolic distance between the planes asymptotic to two disjoint circles.

    Both centers are rotated onto the meridian of the xz-plane; each circle
    then meets the real axis of the chart in two points, and with
    [u1, v2, v1, u2] >= 1, tanh^2(d/2) = 1 / [u1, v2, v1, u2].
    """
    if spherical_distance_rho(c1, c2) == 0.0:
        return 0.0
    axis = np.cross(c1.normal, c2.normal)
    if np.linalg.norm(axis) < 1e-8:
        # near-antipodal centers: any plane through c1 also contains c2
        helper = np.eye(3)[int(np.argmin(np.abs(c1.normal)))]
        axis = np.cross(c1.normal, helper)
    rotation = rotation_between(axis / np.linalg.norm(axis), np.array([0.0, 1.0, 0.0]))
    r1 = SphereCircle(rotation @ c1.normal, c1.offset)
    r2 = SphereCircle(rotation @ c2.normal, c2.offset)
    u1, u2 = _meridian_endpoints(r1)
    v1, v2 = _meridian_endpoints(r2)
    value = cross_ratio(u1, v2, v1, u2).real
    if value <= 0.0:
        raise GeometryError("circle traces interleave", {"cross_ratio": value})
    value = max(value, 1.0 / value)
    return float(2.0 * np.arctanh(1.0 / np.sqrt(value)))


def crossing_cosine(g, r1, r2):
    """(cos g - cos r1 cos r2) / (sin r1 sin r2) for center angle g and radii r1, r2.

    Magnitude below one means the circles cross, at the angle whose cosine
    this is; zero means orthogonal.
    """
    g, r1, r2 = np.asarray(g, dtype=float), np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
    return 1.0 - 2.0 * np.sin(0.5 * (g + r1 - r2)) * np.sin(0.5 * (g - r1 + r2)) / (np.sin(r1) * np.sin(r2))


def intersection_angle(c1: SphereCircle, c2: SphereCircle) -> float:
    cosine = float(crossing_cosine(center_angle(c1, c2), c1.angular_radius, c2.angular_radius))
    if abs(cosine) >= 1.0 - 1e-12:
        raise GeometryError("circles do not cross transversally", {"cosine": float(cosine)})
    return float(np.arccos(cosine))


@dataclass
class GoodPositionReport:
    ok: bool
    violations: List[Tuple[int, int, str]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def good_position(curves: Sequence[SphereCircle]) -> GoodPositionReport:
    """Pairwise disjoint circles whose disks contain no other circle of the family.

    For disks with angular radii a_i, a_j and center angle g, circle j avoids
    the closed disk i exactly when |g - a_j| > a_i.
    """
    if len(curves) < 2:
        raise GeometryError("good position needs at least two circles")
    normals = np.array([c.normal for c in curves])
    radii = np.array([c.angular_radius for c in curves])
    gram = np.clip(normals @ normals.T, -1.0, 1.0)
    angles = np.arccos(gram)
    violations = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            g = angles[i, j]
            if g - radii[i] - radii[j] > TANGENCY_TOL:
                continue
            ai, aj = radii[i], radii[j]
            if abs(ai - aj) + TANGENCY_TOL < g < min(ai + aj, 2.0 * np.pi - ai - aj) - TANGENCY_TOL:
                reason = "intersecting"
            elif g + ai < aj - TANGENCY_TOL:
                reason = f"disk {j} contains circle {i}"
            elif g + aj < ai - TANGENCY_TOL:
                reason = f"disk {i} contains circle {j}"
            elif g > 2.0 * np.pi - ai - aj + TANGENCY_TOL:
                reason = "disks cover the sphere"
            else:
                reason = "tangent"
            violations.append((i, j, reason))
    return GoodPositionReport(ok=not violations, violations=violations)


def disk_contains(circle: SphereCircle, p: SpherePoint) -> bool:
    return bool(np.dot(circle.normal, p) > circle.offset)


def disks_contain(circles: Sequence[SphereCircle], points: SpherePoint) -> np.ndarray:
    """Boolean matrix (points x circles)."""
    normals = np.array([c.normal for c in circles])
    offsets = np.array([c.offset for c in circles])
    return np.atleast_2d(points) @ normals.T > offsets[None, :]


def circle_intersections(c1: SphereCircle, c2: SphereCircle) -> Tuple[np.ndarray, np.ndarray]:
    """The two points where transversal circles cross.

    Each point closes the triangle with sides r1, r2 and the center angle
    g; its angle at the first center comes from the half-angle formula.
    """
    n1, n2 = c1.normal, c2.normal
    axis = np.cross(n1, n2)
    sin_g = float(np.linalg.norm(axis))
    if sin_g < 1e-300:
        raise GeometryError("circles share an axis")
    g = float(np.arctan2(sin_g, np.dot(n1, n2)))
    r1, r2 = c1.angular_radius, c2.angular_radius
    half = 0.5 * (g + r1 + r2)
    legs = np.array([half - r1, half - g, half - r2, np.pi - half])
    if legs.min() < -1e-12:
        raise GeometryError("circles do not meet", {"deficit": float(legs.min())})
    legs = np.maximum(legs, 0.0)
    beta = 2.0 * np.arctan2(np.sqrt(np.sin(legs[0]) * np.sin(legs[1])), np.sqrt(np.sin(half) * np.sin(legs[2])))
    side = axis / sin_g
    along = np.cross(side, n1)
    base = np.cos(r1) * n1 + np.sin(r1) * np.cos(beta) * along
    step = np.sin(r1) * np.sin(beta) * side
    return base + step, base - step
