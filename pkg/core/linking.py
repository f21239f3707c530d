"""Linking numbers of closed polygonal loops in the ball.

The Gauss integral of two polygons is a sum over segment pairs of the
signed solid angle each pair subtends, so it is exact for polygons and
the rounding to an integer only guards against loops that nearly touch.
"""

import logging
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from core.errors import GeometryError

logger = logging.getLogger(__name__)

INTEGER_TOL = 0.1


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norm > 1e-300, v / np.where(norm > 1e-300, norm, 1.0), 0.0)


def _as_loop(points: np.ndarray, name: str) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise GeometryError(f"{name} must be at least three points in R^3")
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


def loop_distance(loop1: np.ndarray, loop2: np.ndarray) -> float:
    """Smallest vertex-to-vertex distance; the loops are densely sampled."""
    a, b = _as_loop(loop1, "loop1"), _as_loop(loop2, "loop2")
    return float(cKDTree(b).query(a)[0].min())


def linking_integral(loop1: np.ndarray, loop2: np.ndarray, chunk: int = 256) -> float:
    """Gauss linking integral of two closed polygons."""
    a0 = _as_loop(loop1, "loop1")
    b0 = _as_loop(loop2, "loop2")
    a1 = np.roll(a0, -1, axis=0)
    c0 = b0
    c1 = np.roll(b0, -1, axis=0)

    total = 0.0
    for start in range(0, len(a0), chunk):
        p0 = a0[start:start + chunk, None, :]
        p1 = a1[start:start + chunk, None, :]
        r13 = c0[None, :, :] - p0
        r14 = c1[None, :, :] - p0
        r23 = c0[None, :, :] - p1
        r24 = c1[None, :, :] - p1

        n1 = _unit(np.cross(r13, r14))
        n2 = _unit(np.cross(r14, r24))
        n3 = _unit(np.cross(r24, r23))
        n4 = _unit(np.cross(r23, r13))

        def asin_dot(u, v):
            return np.arcsin(np.clip(np.sum(u * v, axis=-1), -1.0, 1.0))

        omega = asin_dot(n1, n2) + asin_dot(n2, n3) + asin_dot(n3, n4) + asin_dot(n4, n1)
        r34 = (c1 - c0)[None, :, :]
        r12 = p1 - p0
        sign = np.sign(np.sum(np.cross(r34, r12) * r13, axis=-1))
        total += float(np.sum(omega * sign))
    return total / (4.0 * np.pi)


def linking_number(loop1: np.ndarray, loop2: np.ndarray, min_distance: float = 1e-9) -> int:
    """Integer linking number of two disjoint closed polygons."""
    gap = loop_distance(loop1, loop2)
    if gap < min_distance:
        raise GeometryError("loops are too close to link reliably", {"distance": gap})
    raw = linking_integral(loop1, loop2)
    rounded = int(round(raw))
    if abs(raw - rounded) > INTEGER_TOL:
        raise GeometryError("linking integral is not near an integer", {"integral": raw, "distance": gap})
    logger.debug(f"Linking integral {raw:.6f} (loop gap {gap:.3e})")
    return rounded


def geodesic_chord(p: np.ndarray, q: np.ndarray, count: int = 200) -> np.ndarray:
    """Points of the ball-model geodesic between ideal points p and q."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    cos_g = float(np.dot(p, q))
    tau = np.linspace(0.0, 1.0, count)
    if 1.0 + cos_g < 1e-9:
        return (1.0 - tau)[:, None] * p + tau[:, None] * q
    center = (p + q) / (1.0 + cos_g)
    radius = np.linalg.norm(p - center)
    u = (p - center) / radius
    w = q - center
    v = _unit(w - np.dot(w, u) * u)
    sweep = float(np.arctan2(np.dot(w, v), np.dot(w, u)))
    angles = sweep * tau
    return center + radius * (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * v)


def great_arc(p: np.ndarray, q: np.ndarray, spacing: float = 2e-3) -> np.ndarray:
    """Minor great-circle arc from p to q, endpoints included."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    theta = float(np.arctan2(np.linalg.norm(np.cross(p, q)), np.dot(p, q)))
    if theta < 1e-15:
        return p[None, :].copy()
    if np.pi - theta < 1e-9:
        raise GeometryError("antipodal points have no unique arc")
    count = max(int(np.ceil(theta / spacing)), 1) + 1
    u = np.linspace(0.0, theta, count)
    pts = (np.sin(theta - u)[:, None] * p + np.sin(u)[:, None] * q) / np.sin(theta)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sphere_path(waypoints: Sequence[np.ndarray], spacing: float = 2e-3) -> np.ndarray:
    """Piecewise great-circle path through the waypoints."""
    pieces = [great_arc(a, b, spacing)[:-1] for a, b in zip(waypoints[:-1], waypoints[1:])]
    pieces.append(np.asarray(waypoints[-1], dtype=float)[None, :])
    return np.concatenate(pieces)


def catenoid_loop(axis: Sequence[np.ndarray], route: np.ndarray, chord_samples: int = 400) -> np.ndarray:
    """Closed loop: the axis from p to q inside the ball, then route on the sphere back to p.

    route runs from q to p.
    """
    p, q = np.asarray(axis[0], dtype=float), np.asarray(axis[1], dtype=float)
    route = np.asarray(route, dtype=float)
    if np.linalg.norm(route[0] - q) > 1e-9 or np.linalg.norm(route[-1] - p) > 1e-9:
        raise GeometryError("route must run from the axis endpoint q back to p")
    chord = geodesic_chord(p, q, chord_samples)
    return np.concatenate([chord[:-1], route[:-1]])
