"""Environment tagging of GPS fixes from labelled map geometry.

Map data comes from a GeoJSON subset: a ``FeatureCollection`` whose features
carry ``Polygon``, ``MultiPolygon``, ``LineString`` or ``Point`` geometry and a
``label`` property. Each item near a fix gets a relevancy score from its label
weight, its proximity and (for line features) the alignment between the line
and the direction of travel; the best-scoring item decides the tag.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .telemetry import EnvironmentTag, Shipment

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0

LABEL_TAGS: dict[str, EnvironmentTag] = {
    "ocean": EnvironmentTag.OCEAN,
    "sea": EnvironmentTag.OCEAN,
    "water": EnvironmentTag.WATER_BODIES,
    "lake": EnvironmentTag.WATER_BODIES,
    "river": EnvironmentTag.WATER_BODIES,
    "pond": EnvironmentTag.WATER_BODIES,
    "port": EnvironmentTag.PORT,
    "harbour": EnvironmentTag.PORT,
    "railway": EnvironmentTag.RAILWAYS,
    "road": EnvironmentTag.ROADS,
    "highway": EnvironmentTag.ROADS,
    "residential": EnvironmentTag.URBAN,
    "industrial": EnvironmentTag.URBAN,
    "commercial": EnvironmentTag.URBAN,
    "park": EnvironmentTag.NATURE,
    "forest": EnvironmentTag.NATURE,
    "farmland": EnvironmentTag.NATURE,
    "grassland": EnvironmentTag.NATURE,
    "other": EnvironmentTag.NATURE,
}

DEFAULT_LABEL_WEIGHTS: dict[str, float] = {
    "ocean": 1.0,
    "sea": 1.0,
    "water": 0.9,
    "lake": 0.9,
    "river": 0.8,
    "pond": 0.6,
    "port": 0.9,
    "harbour": 0.9,
    "railway": 0.8,
    "road": 0.8,
    "highway": 0.85,
    "residential": 0.7,
    "industrial": 0.7,
    "commercial": 0.7,
    "park": 0.6,
    "forest": 0.6,
    "farmland": 0.5,
    "grassland": 0.5,
    "other": 0.2,
}

# highest first; used only to break exact score ties
TAG_PRIORITY = (
    EnvironmentTag.OCEAN,
    EnvironmentTag.WATER_BODIES,
    EnvironmentTag.PORT,
    EnvironmentTag.RAILWAYS,
    EnvironmentTag.ROADS,
    EnvironmentTag.URBAN,
    EnvironmentTag.NATURE,
)
_PRIORITY_RANK = {tag: len(TAG_PRIORITY) - i for i, tag in enumerate(TAG_PRIORITY)}


class GeoParseError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"feature {index}: {message}")
        self.index = index


@dataclass(frozen=True, eq=False)
class Polygon:
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        if len(self.lat) < 4:
            raise ValueError("polygon ring needs at least 4 vertices")
        if self.lat[0] != self.lat[-1] or self.lon[0] != self.lon[-1]:
            raise ValueError("polygon ring is not closed")


@dataclass(frozen=True, eq=False)
class LineString:
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        if len(self.lat) < 2:
            raise ValueError("linestring needs at least 2 vertices")


@dataclass(frozen=True)
class Point:
    lat: float
    lon: float


Geometry = Union[Polygon, LineString, Point]


@dataclass(frozen=True, eq=False)
class MapItem:
    geometry: Geometry
    label: str

    @property
    def tag(self) -> EnvironmentTag:
        return LABEL_TAGS[self.label]

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        g = self.geometry
        if isinstance(g, Point):
            return g.lat, g.lat, g.lon, g.lon
        return float(g.lat.min()), float(g.lat.max()), float(g.lon.min()), float(g.lon.max())


@dataclass(frozen=True)
class RelevancyScore:
    item: MapItem
    score: float


@dataclass(frozen=True)
class ScoringConfig:
    lambda_km: float = 0.5
    radius_km: float = 5.0
    fallback_km: float = 10.0
    min_heading_factor: float = 0.25
    label_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_LABEL_WEIGHTS))

    def weight(self, label: str) -> float:
        return float(self.label_weights.get(label, self.label_weights.get("other", 0.0)))

    def scaled(self, k: float) -> "ScoringConfig":
        return ScoringConfig(
            self.lambda_km,
            self.radius_km,
            self.fallback_km,
            self.min_heading_factor,
            {lab: w * k for lab, w in self.label_weights.items()},
        )


# -- parsing -----------------------------------------------------------------


def _ring(coords, index: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        arr = np.asarray(coords, dtype=float)
    except (TypeError, ValueError):
        raise GeoParseError(index, f"{what}: coordinates are not numeric") from None
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise GeoParseError(index, f"{what}: expected a list of [lon, lat] pairs")
    return arr[:, 1].copy(), arr[:, 0].copy()


def _polygon(rings, index: int) -> Polygon:
    if not isinstance(rings, list) or not rings:
        raise GeoParseError(index, "polygon without rings")
    if len(rings) > 1:
        raise GeoParseError(index, "polygon holes are not supported")
    lat, lon = _ring(rings[0], index, "polygon")
    try:
        return Polygon(lat, lon)
    except ValueError as exc:
        raise GeoParseError(index, str(exc)) from None


def parse_geojson(doc: Mapping, stats: Optional[Counter] = None) -> list[MapItem]:
    """Parse an in-memory GeoJSON-subset document."""
    if doc.get("type") != "FeatureCollection":
        raise GeoParseError(-1, "top level must be a FeatureCollection")
    stats = stats if stats is not None else Counter()
    items: list[MapItem] = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = (feat or {}).get("geometry") or {}
        props = (feat or {}).get("properties") or {}
        label = str(props.get("label", "")).strip().lower()
        if label not in LABEL_TAGS:
            stats["unknown_label"] += 1
            label = "other"
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            items.append(MapItem(_polygon(coords, i), label))
        elif gtype == "MultiPolygon":
            if not isinstance(coords, list) or not coords:
                raise GeoParseError(i, "empty multipolygon")
            items.extend(MapItem(_polygon(rings, i), label) for rings in coords)
        elif gtype == "LineString":
            lat, lon = _ring(coords, i, "linestring")
            try:
                items.append(MapItem(LineString(lat, lon), label))
            except ValueError as exc:
                raise GeoParseError(i, str(exc)) from None
        elif gtype == "Point":
            try:
                lon, lat = float(coords[0]), float(coords[1])
            except (TypeError, ValueError, IndexError):
                raise GeoParseError(i, "point needs [lon, lat]") from None
            items.append(MapItem(Point(lat, lon), label))
        else:
            raise GeoParseError(i, f"unsupported geometry type {gtype!r}")
    if stats["unknown_label"]:
        logger.warning("%d features with unknown labels mapped to 'other'", stats["unknown_label"])
    return items


def parse_geofile(path, stats: Optional[Counter] = None) -> list[MapItem]:
    with open(path) as fh:
        return parse_geojson(json.load(fh), stats)


# -- geometry ----------------------------------------------------------------


def haversine_km(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance between two (lat, lon) points in km."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _on_segment(px, py, x1, y1, x2, y2) -> np.ndarray:
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = np.maximum(np.abs(x2 - x1) + np.abs(y2 - y1), 1e-300)
    within = (
        (px >= np.minimum(x1, x2))
        & (px <= np.maximum(x1, x2))
        & (py >= np.minimum(y1, y2))
        & (py <= np.maximum(y1, y2))
    )
    return within & (np.abs(cross) <= 1e-12 * scale)


def point_in_polygon(p: Sequence[float], poly: Polygon) -> bool:
    """Even-odd ray casting in the lon/lat plane; boundary points count as inside."""
    py, px = float(p[0]), float(p[1])
    y1, x1 = poly.lat[:-1], poly.lon[:-1]
    y2, x2 = poly.lat[1:], poly.lon[1:]
    if np.any(_on_segment(px, py, x1, y1, x2, y2)):
        return True
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    return bool(np.count_nonzero(straddles & (px < x_cross)) % 2)


def _project(lat, lon, lat0, lon0):
    """Local equirectangular projection around (lat0, lon0), in km."""
    k = math.radians(1.0) * EARTH_RADIUS_KM
    return (np.asarray(lon) - lon0) * k * math.cos(math.radians(lat0)), (np.asarray(lat) - lat0) * k


def _nearest_segment(p, lat, lon) -> tuple[float, int]:
    """Distance in km from p to a polyline and the index of the closest segment."""
    x, y = _project(lat, lon, p[0], p[1])
    x1, y1, x2, y2 = x[:-1], y[:-1], x[1:], y[1:]
    dx, dy = x2 - x1, y2 - y1
    len2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(len2 > 0, -(x1 * dx + y1 * dy) / len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    d = np.hypot(x1 + t * dx, y1 + t * dy)
    j = int(np.argmin(d))
    return float(d[j]), j


def distance_km(item: MapItem, p: Sequence[float]) -> float:
    """Distance from p to the item's geometry; 0 inside a polygon."""
    g = item.geometry
    if isinstance(g, Point):
        return haversine_km(p, (g.lat, g.lon))
    if isinstance(g, Polygon) and point_in_polygon(p, g):
        return 0.0
    return _nearest_segment(p, g.lat, g.lon)[0]


def _bbox_gap_km(item: MapItem, p) -> float:
    """Cheap lower bound on the distance from p to the item, for pruning."""
    lat0, lat1, lon0, lon1 = item.bbox
    dlat = max(lat0 - p[0], 0.0, p[0] - lat1)
    dlon = max(lon0 - p[1], 0.0, p[1] - lon1)
    k = math.radians(1.0) * EARTH_RADIUS_KM
    coslat = math.cos(math.radians(min(90.0, max(abs(lat0), abs(lat1), abs(p[0])))))
    return 0.99 * math.hypot(dlat * k, dlon * k * coslat)


def relevancy(
    item: MapItem,
    p: Sequence[float],
    v: Sequence[float] = (0.0, 0.0),
    cfg: ScoringConfig = ScoringConfig(),
) -> RelevancyScore:
    """Score = label weight x proximity kernel x heading factor.

    ``v`` is the velocity (east, north) in m/s. The heading factor only applies
    to line features and is 1 when the velocity is zero.
    """
    weight = cfg.weight(item.label)
    g = item.geometry
    if isinstance(g, Polygon) and point_in_polygon(p, g):
        return RelevancyScore(item, weight)
    if isinstance(g, Point):
        d = haversine_km(p, (g.lat, g.lon))
        seg = -1
    else:
        d, seg = _nearest_segment(p, g.lat, g.lon)
    if d > cfg.radius_km:
        return RelevancyScore(item, 0.0)
    score = weight * math.exp(-d / cfg.lambda_km)
    if isinstance(g, LineString):
        score *= heading_factor(g, seg, v, cfg.min_heading_factor)
    return RelevancyScore(item, score)


def heading_factor(line: LineString, seg: int, v: Sequence[float], floor: float = 0.25) -> float:
    speed = math.hypot(v[0], v[1])
    if speed == 0:
        return 1.0
    x, y = _project(line.lat[seg : seg + 2], line.lon[seg : seg + 2], line.lat[seg], line.lon[seg])
    sx, sy = float(x[1] - x[0]), float(y[1] - y[0])
    slen = math.hypot(sx, sy)
    if slen == 0:
        return 1.0
    cos = (sx * v[0] + sy * v[1]) / (slen * speed)
    return max(floor, abs(cos))


def tag_point(
    p: Sequence[float],
    v: Sequence[float],
    items: Iterable[MapItem],
    cfg: ScoringConfig = ScoringConfig(),
) -> EnvironmentTag:
    """Tag of the most relevant item; fallback when nothing is within range."""
    best: Optional[tuple[float, int]] = None
    best_tag = None
    land_near = False
    for item in items:
        tag = item.tag
        gap = _bbox_gap_km(item, p)
        if not land_near and tag is not EnvironmentTag.OCEAN and isinstance(item.geometry, Polygon):
            land_near = gap <= cfg.fallback_km and distance_km(item, p) <= cfg.fallback_km
        if gap > cfg.radius_km:
            continue
        s = relevancy(item, p, v, cfg).score
        if s <= 0:
            continue
        key = (s, _PRIORITY_RANK[tag])
        if best is None or key > best:
            best, best_tag = key, tag
    if best_tag is not None:
        return best_tag
    return EnvironmentTag.NATURE if land_near else EnvironmentTag.OCEAN


def velocities(lat: np.ndarray, lon: np.ndarray, epoch: np.ndarray) -> np.ndarray:
    """(east, north) velocity in m/s at each fix from neighbouring fixes."""
    n = len(lat)
    out = np.zeros((n, 2))
    if n < 2:
        return out
    for i in range(n):
        a, b = (i, i + 1) if i + 1 < n else (i - 1, i)
        dt = epoch[b] - epoch[a]
        if dt <= 0:
            continue
        x, y = _project(lat[b], lon[b], lat[a], lon[a])
        out[i] = (float(x) * 1000.0 / dt, float(y) * 1000.0 / dt)
    return out


def tag_shipment(shipment: Shipment, items: Sequence[MapItem], cfg: ScoringConfig = ScoringConfig()) -> Shipment:
    """Return a copy of the shipment with every measurement tagged."""
    ms = shipment.measurements
    lat = np.array([m.lat for m in ms])
    lon = np.array([m.lon for m in ms])
    epoch = np.array([m.epoch for m in ms])
    vel = velocities(lat, lon, epoch)
    tags = [tag_point((lat[i], lon[i]), vel[i], items, cfg) for i in range(len(ms))]
    return shipment.with_tags(tags)


def tag_shipments(shipments: Iterable[Shipment], items: Sequence[MapItem], cfg: ScoringConfig = ScoringConfig()):
    return [tag_shipment(s, items, cfg) for s in shipments]
