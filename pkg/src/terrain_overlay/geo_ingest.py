"""GeoJSON ingestion and the planar world <-> CRS affine mapping.

Only Polygon and MultiPolygon geometries are accepted, either bare or wrapped
in Feature / FeatureCollection objects.  Rings must be explicitly closed in the
input; the closing duplicate is dropped during normalization and ring
orientation is fixed (exterior counter-clockwise, holes clockwise).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRing,
    DuplicateRegionId,
    NonInvertibleTransform,
    ParseError,
    UnclosedRing,
    UnsupportedGeometry,
)

Bounds = tuple[float, float, float, float]  # (umin, vmin, umax, vmax)


def signed_area(ring: np.ndarray) -> float:
    """Shoelace area of an open ring; positive for counter-clockwise."""
    x = ring[:, 0]
    y = ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class RoiPolygon:
    exterior: np.ndarray
    holes: tuple[np.ndarray, ...]
    region_id: int

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        return (self.exterior, *self.holes)

    @property
    def n_vertices(self) -> int:
        return sum(len(r) for r in self.rings)

    @property
    def area(self) -> float:
        return sum(signed_area(r) for r in self.rings)

    def bounds(self) -> Bounds:
        lo = self.exterior.min(axis=0)
        hi = self.exterior.max(axis=0)
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def edges(self) -> np.ndarray:
        """All ring edges as an (E, 4) array of ``ax, ay, bx, by``."""
        parts = [np.hstack([r, np.roll(r, -1, axis=0)]) for r in self.rings]
        return np.ascontiguousarray(np.vstack(parts), dtype=np.float64)

    def same_shape(self, other: "RoiPolygon") -> bool:
        if self.region_id != other.region_id or len(self.holes) != len(other.holes):
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.rings, other.rings)
        )


@dataclass(frozen=True, eq=False)
class RoiSet:
    regions: tuple[RoiPolygon, ...]
    crs_bounds: Bounds | None
    ignored_z_count: int = 0

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    @property
    def ids(self) -> list[int]:
        return [r.region_id for r in self.regions]

    def same_shape(self, other: "RoiSet") -> bool:
        return (
            len(self) == len(other)
            and self.crs_bounds == other.crs_bounds
            and self.ignored_z_count == other.ignored_z_count
            and all(a.same_shape(b) for a, b in zip(self.regions, other.regions))
        )


def _bounds_of(regions) -> Bounds | None:
    if not regions:
        return None
    pts = np.vstack([r.exterior for r in regions])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def make_roi_set(regions, ignored_z_count: int = 0) -> RoiSet:
    """Assemble a RoiSet from already-normalized polygons, checking id uniqueness."""
    regions = tuple(regions)
    seen = set()
    for r in regions:
        if r.region_id <= 0:
            raise DuplicateRegionId(f"region id must be positive, got {r.region_id}")
        if r.region_id in seen:
            raise DuplicateRegionId(f"region id {r.region_id} used more than once")
        seen.add(r.region_id)
    return RoiSet(regions, _bounds_of(regions), ignored_z_count)


def normalize_ring(points, *, hole: bool) -> np.ndarray:
    """Drop the closing duplicate, collapse repeats and orient the ring.

    ``points`` must be explicitly closed.  Raises UnclosedRing or
    DegenerateRing.
    """
    ring = np.asarray(points, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 1:
        raise ParseError("ring must be a list of 2D positions")
    if not np.isfinite(ring).all():
        raise ParseError("ring contains non-finite coordinates")
    if len(ring) < 2 or not np.array_equal(ring[0], ring[-1]):
        raise UnclosedRing("ring is not closed (first position != last position)")
    ring = ring[:-1]
    keep = np.ones(len(ring), dtype=bool)
    keep[1:] = np.any(ring[1:] != ring[:-1], axis=1)
    ring = ring[keep]
    while len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(np.unique(ring, axis=0)) < 3:
        raise DegenerateRing(f"ring has {len(ring)} distinct vertices, need >= 3")
    area = signed_area(ring)
    if area == 0.0:
        raise DegenerateRing("ring has zero area")
    if (area < 0) != hole:
        ring = ring[::-1]
    return np.ascontiguousarray(ring)


class _Reader:
    def __init__(self):
        self.ignored_z = 0

    def position(self, p) -> list[float]:
        if not isinstance(p, list) or len(p) < 2:
            raise ParseError(f"position must be an array of >= 2 numbers, got {p!r}")
        for c in p:
            if isinstance(c, bool) or not isinstance(c, (int, float)):
                raise ParseError(f"non-numeric coordinate {c!r}")
        if len(p) > 2:
            self.ignored_z += 1
        return [float(p[0]), float(p[1])]

    def polygon(self, coords) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        if not isinstance(coords, list) or not coords:
            raise ParseError("Polygon coordinates must be a non-empty array of rings")
        rings = []
        for k, ring in enumerate(coords):
            if not isinstance(ring, list):
                raise ParseError("ring must be an array of positions")
            pts = [self.position(p) for p in ring]
            rings.append(normalize_ring(pts, hole=k > 0))
        return rings[0], tuple(rings[1:])

    def geometry(self, geom) -> list:
        if not isinstance(geom, dict) or "type" not in geom:
            raise ParseError("geometry must be an object with a 'type'")
        kind = geom["type"]
        if kind == "Polygon":
            return [self.polygon(geom.get("coordinates"))]
        if kind == "MultiPolygon":
            parts = geom.get("coordinates")
            if not isinstance(parts, list):
                raise ParseError("MultiPolygon coordinates must be an array")
            return [self.polygon(p) for p in parts]
        raise UnsupportedGeometry(f"unsupported geometry type {kind!r}")


def _feature_id(feature) -> int | None:
    props = feature.get("properties")
    if not isinstance(props, dict) or "id" not in props:
        return None
    rid = props["id"]
    if isinstance(rid, bool) or not isinstance(rid, int) or rid <= 0:
        raise ParseError(f"feature property 'id' must be a positive integer, got {rid!r}")
    return rid


def parse_geojson(text: str) -> RoiSet:
    """Parse GeoJSON text into a RoiSet.

    Region ids are assigned 1..n in document order; a Feature whose
    ``properties.id`` is a positive integer overrides the id of its polygon.
    Third coordinate elements are ignored and counted in ``ignored_z_count``.
    """
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "type" not in doc:
        raise ParseError("top-level GeoJSON object with a 'type' member expected")

    reader = _Reader()
    entries: list[tuple[tuple, int | None]] = []

    def add_feature(feature):
        if not isinstance(feature, dict) or feature.get("type") != "Feature":
            raise ParseError("FeatureCollection members must be Features")
        geom = feature.get("geometry")
        if geom is None:
            return
        override = _feature_id(feature)
        polys = reader.geometry(geom)
        if override is not None and len(polys) > 1:
            raise DuplicateRegionId(
                f"feature id {override} would be shared by {len(polys)} polygons"
            )
        entries.extend((p, override) for p in polys)

    kind = doc["type"]
    if kind == "FeatureCollection":
        feats = doc.get("features")
        if not isinstance(feats, list):
            raise ParseError("FeatureCollection.features must be an array")
        for f in feats:
            add_feature(f)
    elif kind == "Feature":
        add_feature(doc)
    else:
        entries.extend((p, None) for p in reader.geometry(doc))

    regions = []
    for index, ((exterior, holes), override) in enumerate(entries, start=1):
        rid = override if override is not None else index
        regions.append(RoiPolygon(exterior, holes, rid))
    return make_roi_set(regions, reader.ignored_z)


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} not allowed")


def load_geojson(path) -> RoiSet:
    with open(path, encoding="utf-8") as fh:
        return parse_geojson(fh.read())


def roi_set_to_geojson(roi: RoiSet) -> str:
    """Serialize a RoiSet back to a FeatureCollection (rings re-closed)."""
    feats = []
    for r in roi.regions:
        rings = [np.vstack([ring, ring[:1]]).tolist() for ring in r.rings]
        feats.append(
            {
                "type": "Feature",
                "properties": {"id": r.region_id},
                "geometry": {"type": "Polygon", "coordinates": rings},
            }
        )
    return json.dumps({"type": "FeatureCollection", "features": feats})


@dataclass(frozen=True)
class WorldCrsTransform:
    """Affine map (u, v) = (a*x + b*z + tx, c*x + d*z + ty) from world ground to CRS."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 1.0
    tx: float = 0.0
    ty: float = 0.0
    _inv: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if not math.isfinite(det) or abs(det) <= 1e-12:
            raise NonInvertibleTransform(f"|det| = {abs(det):.3g} <= 1e-12")
        ia, ib = self.d / det, -self.b / det
        ic, id_ = -self.c / det, self.a / det
        object.__setattr__(self, "_inv", (ia, ib, ic, id_))

    @classmethod
    def from_six(cls, values) -> "WorldCrsTransform":
        vals = [float(v) for v in values]
        if len(vals) != 6:
            raise ValueError(f"transform needs 6 numbers [a, b, c, d, tx, ty], got {len(vals)}")
        return cls(*vals)

    @classmethod
    def scale_translate(cls, scale: float, tx: float = 0.0, ty: float = 0.0):
        return cls(scale, 0.0, 0.0, scale, tx, ty)

    def as_six(self) -> list[float]:
        return [self.a, self.b, self.c, self.d, self.tx, self.ty]

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def linear(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def crs_from_world(self, p):
        p = np.asarray(p, dtype=np.float64)
        x, z = p[..., 0], p[..., 1]
        return np.stack([self.a * x + self.b * z + self.tx, self.c * x + self.d * z + self.ty], axis=-1)

    def world_from_crs(self, q):
        q = np.asarray(q, dtype=np.float64)
        du = q[..., 0] - self.tx
        dv = q[..., 1] - self.ty
        ia, ib, ic, id_ = self._inv
        return np.stack([ia * du + ib * dv, ic * du + id_ * dv], axis=-1)

    def then(self, other: "WorldCrsTransform") -> "WorldCrsTransform":
        """Composite map: apply ``self`` then ``other``."""
        m = other.linear @ self.linear
        t = other.linear @ np.array([self.tx, self.ty]) + np.array([other.tx, other.ty])
        return WorldCrsTransform(m[0, 0], m[0, 1], m[1, 0], m[1, 1], t[0], t[1])

    def inverse(self) -> "WorldCrsTransform":
        ia, ib, ic, id_ = self._inv
        tx = -(ia * self.tx + ib * self.ty)
        ty = -(ic * self.tx + id_ * self.ty)
        return WorldCrsTransform(ia, ib, ic, id_, tx, ty)


IDENTITY = WorldCrsTransform()


def crs_from_world(t: WorldCrsTransform, p):
    return t.crs_from_world(p)


def world_from_crs(t: WorldCrsTransform, q):
    return t.world_from_crs(q)


def reproject_roi_set(roi: RoiSet, src: WorldCrsTransform, dst: WorldCrsTransform) -> RoiSet:
    """Re-express polygons given in ``src``'s CRS in ``dst``'s CRS.

    Both transforms map the same world ground plane; rings are re-oriented when
    the combined map is orientation-reversing.
    """
    m = src.inverse().then(dst)
    regions = []
    for r in roi.regions:
        ext = m.crs_from_world(r.exterior)
        holes = tuple(m.crs_from_world(h) for h in r.holes)
        if m.det < 0:
            ext = ext[::-1]
            holes = tuple(h[::-1] for h in holes)
        regions.append(
            RoiPolygon(np.ascontiguousarray(ext), tuple(np.ascontiguousarray(h) for h in holes), r.region_id)
        )
    return RoiSet(tuple(regions), _bounds_of(regions), roi.ignored_z_count)
