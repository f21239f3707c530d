"""Spherical minimal catenoids in hyperbolic space.

The generating curve lives in the half-plane through the rotation axis,
with Fermi coordinates (t, r): t is arclength along the axis and r the
distance from it, metric dr^2 + cosh^2(r) dt^2. Written in arclength s
with phi the angle between the curve and the t-direction, a surface of
revolution is minimal iff

    t' = cos(phi) / cosh(r),   r' = sin(phi),   phi' = 2 coth(2r) cos(phi),

and sinh(r) cosh(r) cos(phi) is constant along the curve.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from core.circles import CirclePair, SphereCircle, orthonormal_complement, plane_distance_dL, spherical_distance_rho
from core.config import settings
from core.errors import GeometryError, SolverError
from core.moebius import MobiusMap, SpherePoint, compose, from_homogeneous, inversion_in_circle, to_homogeneous

logger = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
AREA_RADII = (6.0, 8.0, 10.0)


@dataclass(frozen=True)
class SolverParams:
    rtol: float = 1e-11
    atol: float = 1e-13
    cutoff_margin: float = 8.0
    max_spacing: float = 0.02
    du: float = 0.02

    @classmethod
    def from_settings(cls) -> "SolverParams":
        return cls(
            rtol=settings.ODE_RTOL,
            atol=settings.ODE_ATOL,
            cutoff_margin=settings.CATENOID_CUTOFF_MARGIN,
        )

    def to_json(self) -> Dict:
        return {
            "rtol": self.rtol,
            "atol": self.atol,
            "cutoff_margin": self.cutoff_margin,
            "max_spacing": self.max_spacing,
            "du": self.du,
        }


@dataclass(frozen=True, eq=False)
class GeneratingCurve:
    neck_parameter: float
    samples: np.ndarray
    plane_separation: float
    cutoff_radius: float
    t_cut: float
    conserved: float

    @property
    def t_inf(self) -> float:
        return self.plane_separation / 2.0

    def half_profile(self) -> Tuple[np.ndarray, np.ndarray]:
        """(r, t) on the t >= 0 branch, r increasing."""
        t, r = self.samples[:, 0], self.samples[:, 1]
        keep = t >= 0.0
        return r[keep], t[keep]

    def to_json(self) -> Dict:
        return {
            "a": self.neck_parameter,
            "dL": self.plane_separation,
            "samples": [[float(t), float(r)] for t, r in self.samples],
            "cutoff_radius": self.cutoff_radius,
            "t_cut": self.t_cut,
            "conserved": self.conserved,
        }

    @classmethod
    def from_json(cls, data: Dict) -> "GeneratingCurve":
        return cls(
            neck_parameter=float(data["a"]),
            samples=np.array(data["samples"], dtype=float),
            plane_separation=float(data["dL"]),
            cutoff_radius=float(data["cutoff_radius"]),
            t_cut=float(data["t_cut"]),
            conserved=float(data["conserved"]),
        )


@dataclass(frozen=True)
class CatenoidSolution:
    axis: Tuple[SpherePoint, SpherePoint]
    boundary: CirclePair
    curve: GeneratingCurve
    dL: float
    area_deficit: Optional[float] = None

    def to_json(self) -> Dict:
        return {
            "axis": [[float(x) for x in p] for p in self.axis],
            "boundary": self.boundary.to_json(),
            "curve": self.curve.to_json(),
            "dL": self.dL,
            "area_deficit": self.area_deficit,
        }

    @classmethod
    def from_json(cls, data: Dict) -> "CatenoidSolution":
        return cls(
            axis=(np.array(data["axis"][0], dtype=float), np.array(data["axis"][1], dtype=float)),
            boundary=CirclePair.from_json(data["boundary"]),
            curve=GeneratingCurve.from_json(data["curve"]),
            dL=float(data["dL"]),
            area_deficit=data.get("area_deficit"),
        )


@dataclass(frozen=True)
class ThresholdBracket:
    value: float
    interval: Tuple[float, float]
    neck: float
    neck_interval: Tuple[float, float]

    def to_json(self) -> Dict:
        return {
            "value": self.value,
            "interval": list(self.interval),
            "neck": self.neck,
            "neck_interval": list(self.neck_interval),
        }

    @classmethod
    def from_json(cls, data: Dict) -> "ThresholdBracket":
        return cls(float(data["value"]), tuple(data["interval"]), float(data["neck"]), tuple(data["neck_interval"]))


@dataclass(frozen=True)
class ThresholdEstimates:
    d0: ThresholdBracket
    d1: ThresholdBracket
    solver: Dict = field(default_factory=dict)
    table: List[Tuple[float, float, float]] = field(default_factory=list)

    @property
    def limit(self) -> float:
        return min(self.d0.value, self.d1.value)

    def to_json(self) -> Dict:
        return {
            "d0": self.d0.to_json(),
            "d1": self.d1.to_json(),
            "least_area_criterion": "area-comparison",
            "solver": self.solver,
            "table": [list(row) for row in self.table],
        }

    @classmethod
    def from_json(cls, data: Dict) -> "ThresholdEstimates":
        return cls(
            d0=ThresholdBracket.from_json(data["d0"]),
            d1=ThresholdBracket.from_json(data["d1"]),
            solver=dict(data.get("solver", {})),
            table=[tuple(row) for row in data.get("table", [])],
        )


def _rhs(s, y):
    cphi = np.cos(y[2])
    return [cphi / np.cosh(y[1]), np.sin(y[2]), 2.0 * cphi / np.tanh(2.0 * y[1])]


def _rhs_area(s, y):
    cphi, sphi = np.cos(y[2]), np.sin(y[2])
    # sinh(r) * (1 - sin(phi)) without cancellation near phi = pi/2
    deficit = np.sinh(y[1]) * cphi * cphi / (1.0 + sphi)
    return [cphi / np.cosh(y[1]), sphi, 2.0 * cphi / np.tanh(2.0 * y[1]), deficit]


def _tail(r: float, k: float) -> float:
    """Remaining axis length past radius r: k * (-ln tanh(r/2) - 1/cosh r)."""
    e = np.exp(-r)
    return float(k * (np.log1p(e) - np.log1p(-e) - 2.0 * e / (1.0 + e * e)))


def _cutoff_event(radius: float):
    def event(s, y):
        return y[1] - radius

    event.terminal = True
    event.direction = 1
    return event


def _integrate(a: float, direction: int, params: SolverParams, s_eval: Optional[np.ndarray] = None):
    radius = a + params.cutoff_margin
    span = direction * (2.0 * radius + 10.0)
    atol = params.atol * min(1.0, a)
    sol = solve_ivp(
        _rhs, (0.0, span), [0.0, a, 0.0], method="RK45", t_eval=s_eval,
        events=_cutoff_event(radius), rtol=params.rtol, atol=atol,
    )
    if sol.status == -1:
        raise SolverError(f"integration failed: {sol.message}", {"a": a, "direction": direction, "nfev": sol.nfev})
    if len(sol.t_events[0]) == 0:
        raise SolverError("cutoff radius not reached", {"a": a, "direction": direction, "cutoff": radius})
    return sol, radius


def plane_separation(a: float, params: Optional[SolverParams] = None) -> float:
    """d(a): distance between the planes asymptotic to the catenoid with neck a."""
    if a <= 0.0:
        raise GeometryError("neck parameter must be positive", {"a": a})
    params = params or SolverParams.from_settings()
    sol, radius = _integrate(a, 1, params)
    k = np.sinh(a) * np.cosh(a)
    t_inf = sol.y_events[0][0][0] + _tail(radius, k)
    return float(2.0 * t_inf)


def solve_generating_curve(a: float, params: Optional[SolverParams] = None) -> GeneratingCurve:
    if a <= 0.0:
        raise GeometryError("neck parameter must be positive", {"a": a})
    params = params or SolverParams.from_settings()
    radius = a + params.cutoff_margin
    h0 = min(params.max_spacing, a)
    u = np.arange(0.0, np.arcsinh((2.0 * radius + 10.0) / h0), params.du)
    s_eval = h0 * np.sinh(u)

    forward, _ = _integrate(a, 1, params, s_eval)
    backward, _ = _integrate(a, -1, params, -s_eval)

    t = np.concatenate([backward.y[0][:0:-1], forward.y[0]])
    r = np.concatenate([backward.y[1][:0:-1], forward.y[1]])
    k = float(np.sinh(a) * np.cosh(a))
    t_cut = float(forward.y_events[0][0][0])
    t_inf = t_cut + _tail(radius, k)
    asymmetry = abs(t_cut + float(backward.y_events[0][0][0]))
    if asymmetry > 1e-8:
        logger.warning(f"Generating curve for a={a} is asymmetric by {asymmetry:.2e}")
    return GeneratingCurve(
        neck_parameter=float(a),
        samples=np.column_stack([t, r]),
        plane_separation=float(2.0 * t_inf),
        cutoff_radius=float(radius),
        t_cut=t_cut,
        conserved=k,
    )


def _five_point(f: np.ndarray) -> np.ndarray:
    out = np.full_like(f, np.nan)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / 12.0
    return out


def mean_curvature_residual(curve: GeneratingCurve) -> float:
    """Max |H| over interior samples of the surface of revolution, in neck units.

    The meridian curvature comes from fourth-order differences of the
    samples in their own parameter, so the check never reuses the ODE.
    H adds the rotational term -2 coth(2r) cos(phi) to it. The result is
    scaled by tanh(2a), the inverse of the curvature scale coth(2a) at the
    neck a: thin necks have principal curvatures near 1/a, and the
    differences resolve them to a fixed relative accuracy.
    """
    samples = np.asarray(curve.samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 100:
        raise GeometryError("mean curvature residual needs at least 100 samples")
    t, r = samples[:, 0], samples[:, 1]
    if np.any(r <= 0.0):
        raise GeometryError("sample on the rotation axis")
    vt = np.cosh(r) * _five_point(t)
    vr = _five_point(r)
    speed = np.hypot(vt, vr)
    inner = slice(4, -4)
    if np.any(speed[2:-2] < 1e-300):
        raise GeometryError("degenerate mesh: repeated samples")
    phi = np.full_like(t, np.nan)
    phi[2:-2] = np.unwrap(np.arctan2(vr[2:-2], vt[2:-2]))
    dphi = _five_point(phi)
    residual = dphi[inner] / speed[inner] - 2.0 * np.cos(phi[inner]) / np.tanh(2.0 * r[inner])
    return float(np.max(np.abs(residual)) * np.tanh(2.0 * r.min()))


def _sample_separation(grid: np.ndarray, params: SolverParams) -> np.ndarray:
    return np.array([plane_separation(a, params) for a in grid])


def _golden_maximum(func, lo: float, hi: float, tol: float) -> Tuple[float, float, float, float]:
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = func(x1), func(x2)
    while hi - lo > tol:
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = func(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = func(x1)
    best, value = (x1, f1) if f1 >= f2 else (x2, f2)
    return best, value, lo, hi


def existence_threshold(tol: float, params: Optional[SolverParams] = None) -> ThresholdBracket:
    """d0 = max over a of d(a), refined by golden-section search."""
    if tol <= 0.0:
        raise GeometryError("tolerance must be positive", {"tol": tol})
    params = params or SolverParams.from_settings()
    grid = np.geomspace(1e-3, 6.0, 61)
    values = _sample_separation(grid, params)
    slopes = np.sign(np.diff(values))
    peaks = [i for i in range(1, len(grid) - 1) if slopes[i - 1] > 0 and slopes[i] <= 0]
    if not peaks:
        raise SolverError("could not bracket a maximum of d(a)", {"grid": grid.tolist(), "values": values.tolist()})
    if len(peaks) > 1:
        logger.warning(f"d(a) shows {len(peaks)} local maxima on the grid, refining all")

    best = None
    for i in peaks:
        a_star, d0, lo, hi = _golden_maximum(lambda a: plane_separation(a, params), grid[i - 1], grid[i + 1], tol)
        if best is None or d0 > best[1]:
            best = (a_star, d0, lo, hi)
    a_star, d0, lo, hi = best
    edge = min(plane_separation(lo, params), plane_separation(hi, params))
    logger.info(f"Existence threshold d0={d0:.10f} at neck a={a_star:.8f}")
    return ThresholdBracket(value=float(d0), interval=(float(min(edge, d0)), float(d0)),
                            neck=float(a_star), neck_interval=(float(lo), float(hi)))


def area_deficit_samples(a: float, params: Optional[SolverParams] = None,
                         radii: Sequence[float] = AREA_RADII) -> List[float]:
    """Truncated area of the catenoid minus that of the two plane disks.

    Truncation is by the geodesic balls of the given radii about the axis
    midpoint; a point (t, r) is inside when cosh(r) cosh(t) <= cosh(R).
    """
    params = params or SolverParams.from_settings()
    if a >= min(radii) - 1.0:
        raise GeometryError("neck too wide for the truncation radii", {"a": a, "radii": list(radii)})
    k = np.sinh(a) * np.cosh(a)
    t_inf = plane_separation(a, params) / 2.0

    def make_event(radius: float, terminal: bool):
        log_cosh = np.log(np.cosh(radius))

        def event(s, y):
            return np.log(np.cosh(y[1])) + np.log(np.cosh(y[0])) - log_cosh

        event.terminal = terminal
        event.direction = 1
        return event

    events = [make_event(radius, radius == max(radii)) for radius in radii]
    sol = solve_ivp(
        _rhs_area, (0.0, 2.0 * max(radii) + 10.0), [0.0, a, 0.0, 0.0], method="RK45",
        events=events, rtol=params.rtol, atol=params.atol * min(1.0, a),
    )
    if sol.status == -1:
        raise SolverError(f"area integration failed: {sol.message}", {"a": a})
    out = []
    for radius, hits in zip(radii, sol.y_events):
        if len(hits) == 0:
            raise SolverError("truncation sphere not reached", {"a": a, "radius": radius})
        t_r, _, _, integral = hits[0]
        boundary = np.cosh(radius) * (1.0 / np.cosh(t_r) - 1.0 / np.cosh(t_inf))
        out.append(float(4.0 * np.pi * (integral + boundary - (np.cosh(a) - 1.0))))
    return out


def area_deficit(a: float, params: Optional[SolverParams] = None) -> float:
    """Area deficit extrapolated to infinite truncation radius."""
    d6, d8, d10 = area_deficit_samples(a, params)
    e1, e2 = d8 - d6, d10 - d8
    if abs(e2) > abs(e1) and abs(e1) > 1e-12:
        raise SolverError("area difference does not converge", {"a": a, "samples": [d6, d8, d10]})
    if abs(e2 - e1) < 1e-15:
        return d10
    return float(d10 - e2 * e2 / (e2 - e1))


def least_area_threshold(tol: float, params: Optional[SolverParams] = None,
                         d0: Optional[ThresholdBracket] = None) -> ThresholdBracket:
    """Largest d for which some catenoid has smaller area than the two disks."""
    if tol <= 0.0:
        raise GeometryError("tolerance must be positive", {"tol": tol})
    params = params or SolverParams.from_settings()
    d0 = d0 or existence_threshold(tol, params)
    if area_deficit(d0.neck, params) < 0.0:
        logger.info("Least-area threshold coincides with d0")
        return ThresholdBracket(d0.value, d0.interval, d0.neck, d0.neck_interval)

    grid = np.geomspace(d0.neck, 3.5, 30)
    deficits = np.array([area_deficit(a, params) for a in grid])
    crossings = [i for i in range(len(grid) - 1) if deficits[i] >= 0.0 > deficits[i + 1]]
    if not crossings:
        raise SolverError("no sign change of the area deficit on the wide-neck branch",
                          {"grid": grid.tolist(), "deficits": deficits.tolist()})
    i = crossings[0]
    a_lo, a_hi = grid[i], grid[i + 1]
    root = brentq(lambda a: area_deficit(a, params), a_lo, a_hi, xtol=tol / 4.0)
    lo, hi = max(a_lo, root - tol / 4.0), min(a_hi, root + tol / 4.0)
    d1 = plane_separation(root, params)
    ends = sorted([plane_separation(lo, params), plane_separation(hi, params)])
    logger.info(f"Least-area threshold d1={d1:.10f} at neck a={root:.8f}")
    return ThresholdBracket(value=float(d1), interval=(float(ends[0]), float(ends[1])),
                            neck=float(root), neck_interval=(float(lo), float(hi)))


def compute_thresholds(tol: float, params: Optional[SolverParams] = None) -> ThresholdEstimates:
    params = params or SolverParams.from_settings()
    d0 = existence_threshold(tol, params)
    d1 = least_area_threshold(tol, params, d0)
    table = []
    for a in np.geomspace(0.05, 3.0, 12):
        table.append((float(a), plane_separation(a, params), area_deficit(a, params)))
    solver = dict(params.to_json(), tol=tol, area_radii=list(AREA_RADII))
    return ThresholdEstimates(d0=d0, d1=d1, solver=solver, table=table)


def standard_pair(t_inf: float) -> CirclePair:
    """Boundary circles z = +-tanh(t_inf) with disks around the poles."""
    h = float(np.tanh(t_inf))
    return CirclePair(SphereCircle(np.array([0.0, 0.0, 1.0]), h), SphereCircle(np.array([0.0, 0.0, -1.0]), h))


def catenoids_for_distance(d: float, thresholds: Optional[ThresholdEstimates] = None,
                           params: Optional[SolverParams] = None) -> List[CatenoidSolution]:
    """All catenoids in standard position whose boundary planes are d apart."""
    if d < 0.0:
        raise GeometryError("distance must be non-negative", {"d": d})
    if d == 0.0:
        return []
    params = params or SolverParams.from_settings()
    d0 = thresholds.d0 if thresholds is not None else existence_threshold(settings.THRESHOLD_TOL, params)
    if d > d0.value:
        return []

    def gap(a: float) -> float:
        return plane_separation(a, params) - d

    necks = []
    for lo, hi in ((1e-4, d0.neck), (d0.neck, 12.0)):
        g_lo, g_hi = gap(lo), gap(hi)
        if g_lo == 0.0:
            necks.append(lo)
        elif g_lo * g_hi < 0.0:
            necks.append(brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14))
    if not necks and d0.value - d < 1e-12:
        necks.append(d0.neck)

    solutions = []
    for a in sorted(set(necks)):
        curve = solve_generating_curve(a, params)
        residual = mean_curvature_residual(curve)
        if residual >= settings.RESIDUAL_TOL:
            raise SolverError("catenoid fails the mean curvature check", {"a": a, "residual": residual})
        deficit = area_deficit(a, params) if a < AREA_RADII[0] - 1.0 else None
        solutions.append(CatenoidSolution(
            axis=(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])),
            boundary=standard_pair(curve.t_inf),
            curve=curve,
            dL=curve.plane_separation,
            area_deficit=deficit,
        ))
    return solutions


def coaxial_axis(pair: CirclePair) -> Tuple[SpherePoint, SpherePoint]:
    """Endpoints (p in the first disk, q in the second) of the common axis."""
    if spherical_distance_rho(pair.first, pair.second) <= 0.0:
        raise GeometryError("circles are tangent, no common axis")
    g = compose(inversion_in_circle(pair.first), inversion_in_circle(pair.second))
    _, vectors = np.linalg.eig(g.matrix)
    points = from_homogeneous(vectors)
    inside_first = pair.first.contains(points)
    if inside_first[0] == inside_first[1]:
        raise GeometryError("fixed points not separated by the pair", {"points": points.tolist()})
    p_index = 0 if inside_first[0] else 1
    return points[p_index], points[1 - p_index]


def normalize_pair(pair: CirclePair) -> Tuple[MobiusMap, float]:
    """T and t_inf with T(standard_pair(t_inf)) = pair."""
    p, q = coaxial_axis(pair)
    basis = np.column_stack([to_homogeneous(p[None, :])[:, 0], to_homogeneous(q[None, :])[:, 0]])
    s = MobiusMap(basis)
    inv = s.inverse()
    _, rho1 = pair.first.transformed(inv).chart_center_radius()
    _, rho2 = pair.second.transformed(inv).chart_center_radius()
    mu = np.sqrt(rho1 * rho2)
    t_inf = 0.5 * np.log(rho1 / rho2)
    scale = np.diag([np.sqrt(mu), 1.0 / np.sqrt(mu)]).astype(complex)
    return MobiusMap(s.matrix @ scale), float(t_inf)


def catenoids_for_pair(pair: CirclePair, thresholds: Optional[ThresholdEstimates] = None,
                       params: Optional[SolverParams] = None) -> List[CatenoidSolution]:
    d = plane_distance_dL(pair.first, pair.second)
    axis = coaxial_axis(pair)
    return [CatenoidSolution(axis=axis, boundary=pair, curve=s.curve, dL=d, area_deficit=s.area_deficit)
            for s in catenoids_for_distance(d, thresholds, params)]


def _minkowski(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


class FermiFrame:
    """Fermi coordinates about the geodesic from q to p in the ball model.

    t grows toward p, and t = t_inf on the plane asymptotic to reference.
    Computations go through the hyperboloid model.
    """

    def __init__(self, p: np.ndarray, q: np.ndarray, reference: SphereCircle, t_inf: float):
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        point = reference.sample(1)[0]
        self.kappa = float(np.exp(2.0 * t_inf) * np.sum((point - self.p) ** 2) / np.sum((point - self.q) ** 2))
        self.pq = float(np.sum((self.p - self.q) ** 2))

        lam = np.sqrt(1.0 / (self.pq * self.kappa))
        self.p_null = lam * np.concatenate([[1.0], self.p])
        self.q_null = self.kappa * lam * np.concatenate([[1.0], self.q])
        self.normals = self._normal_plane()

    def _normal_plane(self) -> List[np.ndarray]:
        basis = []
        for e in np.eye(4)[1:]:
            v = e + 2.0 * _minkowski(e, self.q_null) * self.p_null + 2.0 * _minkowski(e, self.p_null) * self.q_null
            for b in basis:
                v = v - _minkowski(v, b) * b
            norm = _minkowski(v, v)
            if norm > 1e-10:
                basis.append(v / np.sqrt(norm))
            if len(basis) == 2:
                return basis
        raise GeometryError("could not build the normal frame of the axis")

    @classmethod
    def for_solution(cls, solution: CatenoidSolution) -> "FermiFrame":
        return cls(solution.axis[0], solution.axis[1], solution.boundary.first, solution.curve.t_inf)

    def coordinates(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(t, r) of ball points, shape (n, 3)."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        dp = np.sum((x - self.p) ** 2, axis=1)
        dq = np.sum((x - self.q) ** 2, axis=1)
        t = 0.5 * np.log(self.kappa * dq / dp)
        cosh_r = 2.0 * np.sqrt(dp * dq) / (np.sqrt(self.pq) * (1.0 - np.sum(x * x, axis=1)))
        return t, np.arccosh(np.maximum(cosh_r, 1.0))

    def to_ball(self, t: np.ndarray, r: np.ndarray, theta: np.ndarray) -> np.ndarray:
        t, r, theta = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float), np.asarray(theta, float))
        gamma = np.exp(t)[..., None] * self.p_null + np.exp(-t)[..., None] * self.q_null
        nu = np.cos(theta)[..., None] * self.normals[0] + np.sin(theta)[..., None] * self.normals[1]
        x = np.cosh(r)[..., None] * gamma + np.sinh(r)[..., None] * nu
        return x[..., 1:] / (1.0 + x[..., :1])


class SolidCatenoid:
    """The axis-side region bounded by a catenoid."""

    def __init__(self, solution: CatenoidSolution):
        self.solution = solution
        self.frame = FermiFrame.for_solution(solution)
        self._r, self._t = solution.curve.half_profile()

    def profile_t(self, r: np.ndarray) -> np.ndarray:
        """Axis coordinate of the catenoid at distance r >= a from the axis."""
        curve = self.solution.curve
        r = np.asarray(r, dtype=float)
        inner = np.interp(r, self._r, self._t)
        k = curve.conserved
        e = np.exp(-np.maximum(r, curve.cutoff_radius))
        tail = k * (np.log1p(e) - np.log1p(-e) - 2.0 * e / (1.0 + e * e))
        return np.where(r <= self._r[-1], inner, curve.t_inf - tail)

    def contains_fermi(self, t: np.ndarray, r: np.ndarray) -> np.ndarray:
        t, r = np.abs(np.asarray(t, dtype=float)), np.asarray(r, dtype=float)
        a = self.solution.curve.neck_parameter
        inside = (t >= self.solution.curve.t_inf) | (r < a)
        return inside | (t > self.profile_t(np.maximum(r, a)))

    def contains_ball(self, points: np.ndarray) -> np.ndarray:
        t, r = self.frame.coordinates(points)
        return self.contains_fermi(t, r)

    def contains_sphere(self, points: np.ndarray) -> np.ndarray:
        pair = self.solution.boundary
        return pair.first.contains(points) | pair.second.contains(points)

    def surface_samples(self, count: int) -> np.ndarray:
        """About count ball points on the catenoid surface."""
        r, t = self._r, self._t
        rings = max(int(np.sqrt(count)), 4)
        index = np.linspace(0, len(r) - 1, rings // 2).astype(int)
        tt = np.concatenate([-t[index][::-1], t[index]])
        rr = np.concatenate([r[index][::-1], r[index]])
        theta = np.linspace(0.0, 2.0 * np.pi, max(count // len(tt), 4), endpoint=False)
        grid_t, grid_theta = np.meshgrid(tt, theta, indexing="ij")
        grid_r = np.broadcast_to(rr[:, None], grid_t.shape)
        return self.frame.to_ball(grid_t, grid_r, grid_theta).reshape(-1, 3)


def solid_contains(solid: SolidCatenoid, p: Union[Sequence[float], np.ndarray]) -> bool:
    p = np.asarray(p, dtype=float)
    if p.shape == (2,):
        return bool(solid.contains_fermi(np.array([p[0]]), np.array([p[1]]))[0])
    norm = np.linalg.norm(p)
    if norm >= 1.0 - 1e-12:
        return bool(solid.contains_sphere(p[None, :] / norm)[0])
    return bool(solid.contains_ball(p[None, :])[0])


def geodesic_plane_points(circle: SphereCircle, rings: int = 24, spokes: int = 48,
                          max_radius: float = 12.0) -> np.ndarray:
    """Ball points on the totally geodesic plane asymptotic to circle.

    The plane is {x : <x, N> = 0} on the hyperboloid with N = (h, n);
    points are laid out in geodesic polar coordinates about its point
    nearest the origin.
    """
    n, h = circle.normal, circle.offset
    normal = np.concatenate([[h], n])
    foot = np.array([1.0, 0.0, 0.0, 0.0]) + h / (1.0 - h * h) * normal
    foot = foot / np.sqrt(-_minkowski(foot, foot))
    u, v = orthonormal_complement(n)
    radius = np.linspace(0.0, max_radius, rings)
    theta = np.linspace(0.0, 2.0 * np.pi, spokes, endpoint=False)
    rr, tt = np.meshgrid(radius, theta, indexing="ij")
    direction = np.cos(tt)[..., None] * np.concatenate([[0.0], u]) + np.sin(tt)[..., None] * np.concatenate([[0.0], v])
    x = np.cosh(rr)[..., None] * foot + np.sinh(rr)[..., None] * direction
    return (x[..., 1:] / (1.0 + x[..., :1])).reshape(-1, 3)
