"""SVG figures of configurations, arrangements and limit sets in a stereographic view."""

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.circles import SphereCircle
from core.construction import Arrangement, ConstructionGeometry
from core.errors import GeometryError
from core.kleinian import NORTH, LimitSetCloud, Polyline, Side, _angle
from core.moebius import rotation_between

logger = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"
SIDE_COLORS = {Side.PLUS: "#c0392b", Side.MINUS: "#1f5fa8", None: "#7f7f7f"}
CURVE_COLOR = "#111111"
MUTED_COLOR = "#c8c8c8"


@dataclass(frozen=True)
class Projection:
    """Stereographic projection from pole, or plain (x, y) coordinates when planar."""

    pole: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    size: int = 800
    clearance: float = 1e-3
    planar: bool = False

    def rotation(self) -> np.ndarray:
        pole = np.asarray(self.pole, dtype=float)
        return rotation_between(pole / np.linalg.norm(pole), NORTH)

    def project(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.planar:
            return np.column_stack([pts[:, 0], -pts[:, 1]])
        pts = pts @ self.rotation().T
        denom = 1.0 - pts[:, 2]
        return np.column_stack([pts[:, 0] / denom, -pts[:, 1] / denom])

    def project_circle(self, circle: SphereCircle) -> Tuple[float, float, float]:
        rotated = SphereCircle(self.rotation() @ circle.normal, circle.offset)
        center, radius = rotated.chart_center_radius()
        return center.real, -center.imag, radius


@dataclass(frozen=True)
class CircleLayer:
    circles: Tuple[SphereCircle, ...]
    stroke: str = "#1f5fa8"
    width: float = 1.0
    name: str = "circles"


@dataclass(frozen=True, eq=False)
class PolylineLayer:
    points: np.ndarray
    closed: bool = True
    stroke: str = CURVE_COLOR
    width: float = 1.0
    name: str = "curve"


@dataclass(frozen=True, eq=False)
class PointLayer:
    points: np.ndarray
    fill: str = CURVE_COLOR
    size: float = 1.0
    name: str = "points"


@dataclass(frozen=True)
class Annotation:
    text: str
    position: Tuple[float, float]
    fill: str = CURVE_COLOR
    name: str = "annotation"


Layer = Union[CircleLayer, PolylineLayer, PointLayer, Annotation]


@dataclass(frozen=True)
class Scene:
    layers: Tuple[Layer, ...] = ()
    projection: Projection = field(default_factory=Projection)
    title: str = ""


def _fmt(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def _check_pole(scene: Scene) -> None:
    projection = scene.projection
    if projection.planar:
        return
    pole = np.asarray(projection.pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    eps = projection.clearance
    for k, layer in enumerate(scene.layers):
        if isinstance(layer, CircleLayer):
            for circle in layer.circles:
                if abs(float(_angle(pole, circle.normal)) - circle.angular_radius) < eps:
                    raise GeometryError(f"projection pole lies on a circle of layer {k}; choose another pole")
        elif isinstance(layer, PolylineLayer):
            if layer.closed and len(layer.points) >= 3:
                gap = float(Polyline(layer.points).distance(pole[None, :])[0])
            else:
                gap = float(np.min(_angle(layer.points, pole[None, :])))
            if gap < eps:
                raise GeometryError(f"projection pole lies on the polyline of layer {k}; choose another pole")
        elif isinstance(layer, PointLayer) and len(layer.points):
            if float(np.min(_angle(layer.points, pole[None, :]))) < eps:
                raise GeometryError(f"projection pole lies on the points of layer {k}; choose another pole")


def _extent(scene: Scene) -> Tuple[float, float, float, float]:
    projection = scene.projection
    xs: List[np.ndarray] = []
    ys: List[np.ndarray] = []
    for layer in scene.layers:
        if isinstance(layer, CircleLayer):
            for circle in layer.circles:
                cx, cy, r = projection.project_circle(circle)
                xs.append(np.array([cx - r, cx + r]))
                ys.append(np.array([cy - r, cy + r]))
        elif isinstance(layer, (PolylineLayer, PointLayer)) and len(layer.points):
            xy = projection.project(layer.points)
            xs.append(xy[:, 0])
            ys.append(xy[:, 1])
    if not xs:
        return -1.0, -1.0, 2.0, 2.0
    x, y = np.concatenate(xs), np.concatenate(ys)
    span = max(float(x.max() - x.min()), float(y.max() - y.min()), 1e-9)
    pad = 0.05 * span
    return float(x.min()) - pad, float(y.min()) - pad, span + 2.0 * pad, span + 2.0 * pad


def render_svg(scene: Scene) -> bytes:
    """SVG 1.1 document; a pure function of the scene."""
    _check_pole(scene)
    projection = scene.projection
    x0, y0, w, h = _extent(scene)
    unit = w / projection.size

    root = ET.Element("svg", {
        "xmlns": SVG_NS,
        "version": "1.1",
        "width": f"{projection.size}px",
        "height": f"{projection.size}px",
        "viewBox": " ".join(_fmt(v) for v in (x0, y0, w, h)),
    })
    if scene.title:
        ET.SubElement(root, "title").text = scene.title

    for k, layer in enumerate(scene.layers):
        group = ET.SubElement(root, "g", {"id": f"layer-{k}", "class": layer.name})
        if isinstance(layer, CircleLayer):
            for circle in layer.circles:
                cx, cy, r = projection.project_circle(circle)
                ET.SubElement(group, "circle", {
                    "cx": _fmt(cx), "cy": _fmt(cy), "r": _fmt(r), "fill": "none",
                    "stroke": layer.stroke, "stroke-width": _fmt(layer.width * unit),
                })
        elif isinstance(layer, PolylineLayer):
            xy = projection.project(layer.points)
            if layer.closed:
                xy = np.vstack([xy, xy[:1]])
            ET.SubElement(group, "polyline", {
                "points": " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in xy),
                "fill": "none", "stroke": layer.stroke, "stroke-width": _fmt(layer.width * unit),
                "stroke-linejoin": "round",
            })
        elif isinstance(layer, PointLayer):
            if len(layer.points) == 0:
                continue
            xy = projection.project(layer.points)
            ET.SubElement(group, "path", {
                "d": "".join(f"M{_fmt(x)} {_fmt(y)}h0" for x, y in xy),
                "stroke": layer.fill, "stroke-width": _fmt(layer.size * unit), "stroke-linecap": "round",
            })
        else:
            x, y = layer.position
            label = ET.SubElement(group, "text", {
                "x": _fmt(x0 + x * w), "y": _fmt(y0 + y * h), "fill": layer.fill,
                "font-family": "sans-serif", "font-size": _fmt(14.0 * unit),
            })
            label.text = layer.text

    body = ET.tostring(root, encoding="unicode")
    return ('<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n").encode("utf-8")


def write_svg(scene: Scene, path: str) -> str:
    with open(path, "wb") as f:
        f.write(render_svg(scene))
    logger.info(f"Wrote {path}")
    return path


def parallel_scene(geometry: ConstructionGeometry, projection: Optional[Projection] = None) -> Scene:
    """The 2N parallel circles."""
    circles = tuple(c for pair in geometry.parallel for c in (pair.first, pair.second))
    return Scene(layers=(CircleLayer(circles, stroke=CURVE_COLOR, name="parallel"),),
                 projection=projection or Projection(), title=f"{len(circles)} parallel circles")


def curve_scene(geometry: ConstructionGeometry, projection: Optional[Projection] = None) -> Scene:
    """The Jordan curve with its 2N - 1 bridges."""
    return Scene(layers=(PolylineLayer(geometry.curve.points),), projection=projection or Projection(),
                 title=f"{geometry.curve.bridge_count} narrow bridges")


def configuration_scene(geometry: ConstructionGeometry, projection: Optional[Projection] = None) -> Scene:
    """Curve and the 6N - 2 station circles, colored by side."""
    layers: List[Layer] = [PolylineLayer(geometry.curve.points)]
    by_side: Dict[Optional[Side], List[SphereCircle]] = {}
    for station in geometry.stations:
        by_side.setdefault(station.side, []).extend(station.circles)
    for side in (Side.PLUS, Side.MINUS, None):
        if side in by_side:
            layers.append(CircleLayer(tuple(by_side[side]), stroke=SIDE_COLORS[side],
                                      name=f"stations-{side.value if side else 'unknown'}"))
    return Scene(layers=tuple(layers), projection=projection or Projection(),
                 title=f"{len(geometry.stations)} catenoid stations")


def arrangement_scene(geometry: ConstructionGeometry, arrangement: Arrangement,
                      certificate: Optional[Dict] = None, projection: Optional[Projection] = None) -> Scene:
    """One arrangement: selected stations by side, the rest muted, with a legend."""
    selected = set(arrangement.stations)
    muted = tuple(c for k, s in enumerate(geometry.stations) if k not in selected for c in s.circles)
    layers: List[Layer] = [PolylineLayer(geometry.curve.points)]
    if muted:
        layers.append(CircleLayer(muted, stroke=MUTED_COLOR, width=0.5, name="unselected"))
    for side in (Side.PLUS, Side.MINUS, None):
        circles = tuple(c for k in arrangement.stations if geometry.stations[k].side == side
                        for c in geometry.stations[k].circles)
        if circles:
            layers.append(CircleLayer(circles, stroke=SIDE_COLORS[side], width=1.5,
                                      name=f"selected-{side.value if side else 'unknown'}"))

    status = ""
    if certificate is not None:
        records = {r["index"]: r for r in certificate.get("arrangements", [])}
        record = records.get(arrangement.index)
        if record is not None:
            status = " VALID" if record["valid"] else " INVALID"
    labels = ", ".join(geometry.stations[k].label for k in arrangement.stations)
    layers.append(Annotation(f"arrangement {arrangement.choices}{status}: {labels}", (0.02, 0.04), name="title"))
    layers.append(Annotation("plus side", (0.02, 0.08), fill=SIDE_COLORS[Side.PLUS], name="legend"))
    layers.append(Annotation("minus side", (0.02, 0.12), fill=SIDE_COLORS[Side.MINUS], name="legend"))
    return Scene(layers=tuple(layers), projection=projection or Projection(),
                 title=f"arrangement {arrangement.choices}")


def cloud_scene(cloud: LimitSetCloud, projection: Optional[Projection] = None,
                curve: Optional[np.ndarray] = None) -> Scene:
    layers: List[Layer] = []
    if curve is not None:
        layers.append(PolylineLayer(curve, stroke=MUTED_COLOR, name="curve"))
    layers.append(PointLayer(cloud.points, size=1.0, name="limit-set"))
    return Scene(layers=tuple(layers), projection=projection or Projection(),
                 title=f"limit set, {len(cloud.points)} points")


def profile_scene(samples: Sequence[Sequence[float]]) -> Scene:
    """A catenoid generating curve in the (t, r) half-plane."""
    pts = np.asarray(samples, dtype=float)
    return Scene(layers=(PolylineLayer(pts, closed=False, name="generating-curve"),),
                 projection=Projection(planar=True), title="generating curve")

