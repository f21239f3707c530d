"""Möbius and anti-Möbius maps of the Riemann sphere.

Maps are stored as 2x2 complex matrices normalized to unit determinant
modulus, plus an orientation flag. A reversing map acts by
z -> (a*conj(z) + b) / (c*conj(z) + d).

Points of the sphere are unit 3-vectors; the chart is stereographic
projection from the north pole e3, w = (x + iy) / (1 - z). The point at
infinity of the chart is the INFINITY sentinel.
"""

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Union

import numpy as np
from numpy.typing import NDArray

from core.errors import GeometryError

if TYPE_CHECKING:
    from core.circles import SphereCircle


class _PointAtInfinity:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITY"

    def __reduce__(self):
        return (_PointAtInfinity, ())


INFINITY = _PointAtInfinity()

ChartPoint = Union[complex, _PointAtInfinity]

# unit 3-vector; arrays of them have shape (n, 3)
SpherePoint = NDArray[np.float64]

_ZERO_TOL = 1e-300


class Orientation(str, Enum):
    PRESERVING = "preserving"
    REVERSING = "reversing"


def _normalize(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=complex).reshape(2, 2)
    det = matrix[0, 0] * matrix[1, 1] - matrix[0, 1] * matrix[1, 0]
    if abs(det) < _ZERO_TOL:
        raise GeometryError("degenerate Möbius matrix", {"det": abs(det)})
    return matrix / np.sqrt(abs(det))


@dataclass(frozen=True, eq=False)
class MobiusMap:
    matrix: np.ndarray
    orientation: Orientation = Orientation.PRESERVING

    def __post_init__(self):
        normalized = _normalize(self.matrix)
        normalized.setflags(write=False)
        object.__setattr__(self, "matrix", normalized)
        object.__setattr__(self, "orientation", Orientation(self.orientation))

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(np.eye(2, dtype=complex))

    @classmethod
    def from_entries(cls, a, b, c, d, orientation=Orientation.PRESERVING) -> "MobiusMap":
        return cls(np.array([[a, b], [c, d]], dtype=complex), orientation)

    @property
    def reversing(self) -> bool:
        return self.orientation is Orientation.REVERSING

    def __call__(self, z: ChartPoint) -> ChartPoint:
        return apply(self, z)

    def inverse(self) -> "MobiusMap":
        a, b, c, d = self.matrix.ravel()
        inv = np.array([[d, -b], [-c, a]])
        if self.reversing:
            inv = np.conj(inv)
        return MobiusMap(inv, self.orientation)

    def sl2(self) -> np.ndarray:
        """Matrix scaled to determinant exactly one (up to rounding)."""
        m = self.matrix
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        return m / np.sqrt(det)

    def trace(self) -> complex:
        return complex(np.trace(self.sl2()))

    def distance_to_identity(self) -> float:
        if self.reversing:
            return float("inf")
        m = self.sl2()
        eye = np.eye(2)
        return float(min(np.abs(m - eye).max(), np.abs(m + eye).max()))

    def is_identity(self, tol: float = 1e-10) -> bool:
        return self.distance_to_identity() < tol

    def apply_homogeneous(self, uv: np.ndarray) -> np.ndarray:
        """Act on homogeneous coordinates, shape (2, n)."""
        uv = np.asarray(uv, dtype=complex)
        if self.reversing:
            uv = np.conj(uv)
        out = self.matrix @ uv
        scale = np.maximum(np.abs(out[0]), np.abs(out[1]))
        return out / np.where(scale > 0, scale, 1.0)

    def apply_points(self, points: SpherePoint) -> SpherePoint:
        """Act on sphere points, shape (n, 3) or (3,)."""
        pts = np.atleast_2d(points)
        result = from_homogeneous(self.apply_homogeneous(to_homogeneous(pts)))
        return result if np.ndim(points) == 2 else result[0]

    def __repr__(self) -> str:
        s = np.array_str(self.matrix, precision=6).replace("\n", " ")
        return f"MobiusMap({s}, {self.orientation.value})"


def compose(m1: MobiusMap, m2: MobiusMap) -> MobiusMap:
    """m1 after m2."""
    right = np.conj(m2.matrix) if m1.reversing else m2.matrix
    orientation = Orientation.REVERSING if (m1.reversing != m2.reversing) else Orientation.PRESERVING
    return MobiusMap(m1.matrix @ right, orientation)


def apply(m: MobiusMap, z: ChartPoint) -> ChartPoint:
    a, b, c, d = m.matrix.ravel()
    if z is INFINITY:
        if abs(c) <= 1e-15 * abs(a):
            return INFINITY
        return complex(a / c)
    w = complex(np.conj(z)) if m.reversing else complex(z)
    num = a * w + b
    den = c * w + d
    if abs(den) <= 1e-15 * max(abs(num), 1e-300):
        return INFINITY
    return complex(num / den)


def inversion_in_circle(circle: "SphereCircle") -> MobiusMap:
    """Reflection fixing the circle pointwise and swapping its two sides."""
    if 1.0 - abs(circle.offset) < 1e-12:
        raise GeometryError("circle degenerates to a point", {"offset": circle.offset})
    return inversion_from_form(circle.hermitian())


def inversion_from_form(h: np.ndarray) -> MobiusMap:
    """Reflection in the chart circle where the Hermitian form h vanishes."""
    big_a, beta, big_c = h[0, 0].real, h[0, 1], h[1, 1].real
    matrix = np.array([[-beta, -big_c], [big_a, np.conj(beta)]], dtype=complex)
    return MobiusMap(matrix, Orientation.REVERSING)


def _homogeneous_pair(z: ChartPoint) -> tuple:
    if z is INFINITY:
        return 1.0 + 0j, 0.0 + 0j
    return complex(z), 1.0 + 0j


def cross_ratio(z1: ChartPoint, z2: ChartPoint, z3: ChartPoint, z4: ChartPoint) -> complex:
    """[z1, z2, z3, z4] = (z1 - z3)(z2 - z4) / ((z1 - z2)(z3 - z4)).

    With this ordering the geodesics (u1, u2) and (v1, v2) of the upper
    half-plane satisfy tanh^2(d/2) = 1 / [u1, v2, v1, u2]; the quadruple
    (0, 1, -1, INFINITY) is harmonic with value -1.
    """
    points = [z1, z2, z3, z4]
    if sum(1 for z in points if z is INFINITY) > 1:
        raise GeometryError("cross ratio takes at most one point at infinity")
    hom = [_homogeneous_pair(z) for z in points]

    def bracket(i: int, j: int) -> complex:
        return hom[i][0] * hom[j][1] - hom[j][0] * hom[i][1]

    d12, d34 = bracket(0, 1), bracket(2, 3)
    d13, d24 = bracket(0, 2), bracket(1, 3)
    for (i, j), value in (((1, 2), d12), ((3, 4), d34), ((1, 3), d13), ((2, 4), d24),
                          ((1, 4), bracket(0, 3)), ((2, 3), bracket(1, 2))):
        if abs(value) < 1e-14:
            raise GeometryError("coincident points in cross ratio", {"pair": (i, j)})
    return complex(d13 * d24 / (d12 * d34))


def to_homogeneous(points: SpherePoint) -> np.ndarray:
    """Sphere points (n, 3) to chart homogeneous coordinates (2, n)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    south = z <= 0.0
    u = np.where(south, x + 1j * y, 1.0 + z)
    v = np.where(south, 1.0 - z, x - 1j * y)
    return np.vstack([u, v]).astype(complex)


def from_homogeneous(uv: np.ndarray) -> SpherePoint:
    u, v = np.asarray(uv[0], dtype=complex), np.asarray(uv[1], dtype=complex)
    nu, nv = np.abs(u) ** 2, np.abs(v) ** 2
    total = nu + nv
    xy = 2.0 * u * np.conj(v) / total
    pts = np.column_stack([xy.real, xy.imag, (nu - nv) / total])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


class StereographicChart:
    """Projection from the north pole e3 onto the equatorial plane."""

    @staticmethod
    def project(p: SpherePoint) -> ChartPoint:
        u, v = to_homogeneous(np.asarray(p, dtype=float)[None, :])[:, 0]
        if v == 0:
            return INFINITY
        return complex(u / v)

    @staticmethod
    def unproject(w: ChartPoint) -> SpherePoint:
        if w is INFINITY:
            return np.array([0.0, 0.0, 1.0])
        u, v = _homogeneous_pair(w)
        return from_homogeneous(np.array([[u], [v]]))[0]


def sphere_point(x: float, y: float, z: float) -> SpherePoint:
    p = np.array([x, y, z], dtype=float)
    norm = np.linalg.norm(p)
    if norm < 1e-300:
        raise GeometryError("zero vector is not a sphere point")
    return p / norm


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_between(source: SpherePoint, target: SpherePoint) -> np.ndarray:
    """A rotation taking unit vector source to unit vector target."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    axis = np.cross(source, target)
    s = np.linalg.norm(axis)
    c = float(np.dot(source, target))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        helper = np.eye(3)[int(np.argmin(np.abs(source)))]
        return rotation_matrix(np.cross(source, helper), np.pi)
    return rotation_matrix(axis / s, float(np.arctan2(s, c)))


def three_point_map(source: np.ndarray, target: np.ndarray) -> MobiusMap:
    """Preserving map taking three homogeneous points (columns of source) to target."""

    def frame(points: np.ndarray) -> np.ndarray:
        p1, p2, p3 = points[:, 0], points[:, 1], points[:, 2]
        basis = np.column_stack([p2, p1])
        coeffs = np.linalg.solve(basis, p3)
        return np.column_stack([coeffs[0] * p2, coeffs[1] * p1])

    src, dst = frame(np.asarray(source, dtype=complex)), frame(np.asarray(target, dtype=complex))
    return MobiusMap(dst @ np.linalg.inv(src))


_FRAME_POINTS = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]])


def rotation_as_mobius(rotation: np.ndarray) -> MobiusMap:
    """The Preserving map acting on the sphere as the given SO(3) rotation."""
    r = np.asarray(rotation, dtype=float)
    return three_point_map(to_homogeneous(_FRAME_POINTS), to_homogeneous(_FRAME_POINTS @ r.T))
