"""Offline baking of RoI polygons into extruded meshes and region-id textures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import MissingStyle, OpenMesh, TriangulationFailure
from .geo_ingest import RoiPolygon, RoiSet, WorldCrsTransform
from .style_composite import DEFAULT_POLICY, OpacityPolicy, effective_opacity, eval_pattern, pattern_scale


def point_in_polygon(poly: RoiPolygon, q) -> bool:
    """Even-odd membership of ``q``; points on right/top edges are outside."""
    qx, qy = float(q[0]), float(q[1])
    inside = False
    for ring in poly.rings:
        n = len(ring)
        for k in range(n):
            ax, ay = ring[k]
            bx, by = ring[(k + 1) % n]
            if (ay > qy) != (by > qy):
                x = ax + (qy - ay) * (bx - ax) / (by - ay)
                if qx < x:
                    inside = not inside
    return inside


def contains_points(poly: RoiPolygon, pts) -> np.ndarray:
    """Vectorized point_in_polygon over an (..., 2) array of CRS points."""
    pts = np.asarray(pts, dtype=np.float64)
    qx = pts[..., 0]
    qy = pts[..., 1]
    inside = np.zeros(qx.shape, dtype=bool)
    for ax, ay, bx, by in poly.edges():
        cross = (ay > qy) != (by > qy)
        if not cross.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x = ax + (qy - ay) * (bx - ax) / (by - ay)
        inside ^= cross & (qx < x)
    return inside


def boundary_distance(poly: RoiPolygon, pts) -> np.ndarray:
    """Euclidean distance from CRS points to the nearest ring edge."""
    pts = np.asarray(pts, dtype=np.float64)
    best = np.full(pts.shape[:-1], np.inf)
    px = pts[..., 0]
    py = pts[..., 1]
    for ax, ay, bx, by in poly.edges():
        ex, ey = bx - ax, by - ay
        den = ex * ex + ey * ey
        t = np.clip(((px - ax) * ex + (py - ay) * ey) / den, 0.0, 1.0)
        d = np.hypot(px - (ax + t * ex), py - (ay + t * ey))
        np.minimum(best, d, out=best)
    return best


# --- cap triangulation -------------------------------------------------------


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_cross(edges: np.ndarray) -> bool:
    """True if any two non-adjacent edges intersect or overlap."""
    n = len(edges)
    a = edges[:, None, :2]
    b = edges[:, None, 2:]
    c = edges[None, :, :2]
    d = edges[None, :, 2:]

    def orient(p, q, r):
        v = (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])
        return np.sign(v)

    o1 = orient(a, b, c)
    o2 = orient(a, b, d)
    o3 = orient(c, d, a)
    o4 = orient(c, d, b)
    proper = (o1 * o2 < 0) & (o3 * o4 < 0)
    collinear = (o1 == 0) & (o2 == 0)
    lo_ab = np.minimum(a, b)
    hi_ab = np.maximum(a, b)
    lo_cd = np.minimum(c, d)
    hi_cd = np.maximum(c, d)
    overlap_extent = np.all(np.minimum(hi_ab, hi_cd) - np.maximum(lo_ab, lo_cd) > 0, axis=-1)
    # collinear edges sharing more than a point
    span_ab = hi_ab - lo_ab
    axis = (span_ab[..., 0] >= span_ab[..., 1])
    lo1 = np.where(axis, lo_ab[..., 0], lo_ab[..., 1])
    hi1 = np.where(axis, hi_ab[..., 0], hi_ab[..., 1])
    lo2 = np.where(axis, lo_cd[..., 0], lo_cd[..., 1])
    hi2 = np.where(axis, hi_cd[..., 0], hi_cd[..., 1])
    overlap = collinear & (np.minimum(hi1, hi2) - np.maximum(lo1, lo2) > 0)
    bad = proper | overlap | (collinear & overlap_extent)
    np.fill_diagonal(bad, False)
    return bool(bad.any()) if n else False


def _validate_simple(poly: RoiPolygon):
    edges = poly.edges()
    if _segments_cross(edges):
        raise TriangulationFailure(f"region {poly.region_id}: ring edges intersect")


def _bridge_holes(points: np.ndarray, poly: RoiPolygon) -> list[int]:
    """Merge hole rings into the exterior through mutually visible bridges."""
    n_ext = len(poly.exterior)
    ring = list(range(n_ext))
    offsets = np.cumsum([n_ext] + [len(h) for h in poly.holes])
    holes = []
    for k, hole in enumerate(poly.holes):
        start = int(offsets[k])
        idx = list(range(start, start + len(hole)))
        m = int(np.argmax(hole[:, 0]))
        holes.append((hole[m, 0], idx[m:] + idx[:m]))
    holes.sort(key=lambda h: -h[0])

    for _, hidx in holes:
        mi = hidx[0]
        mx, my = points[mi]
        best_x = math.inf
        best_edge = None
        for k in range(len(ring)):
            a = points[ring[k]]
            b = points[ring[(k + 1) % len(ring)]]
            if a[1] == b[1]:
                if a[1] != my:
                    continue
                xs = [x for x in (a[0], b[0]) if x >= mx]
                if not xs:
                    continue
                x = min(xs)
            elif min(a[1], b[1]) <= my <= max(a[1], b[1]):
                x = a[0] + (my - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            else:
                continue
            if mx <= x < best_x:
                best_x = x
                best_edge = k
        if best_edge is None:
            raise TriangulationFailure(f"region {poly.region_id}: hole not enclosed by exterior")
        ka = best_edge
        kb = (best_edge + 1) % len(ring)
        pa = points[ring[ka]]
        pb = points[ring[kb]]
        if pa[1] == my and pa[0] == best_x:
            cand = ka
        elif pb[1] == my and pb[0] == best_x:
            cand = kb
        else:
            cand = ka if pa[0] > pb[0] else kb
            # a reflex vertex inside triangle (M, I, P) would block the bridge
            px, py = points[ring[cand]]
            best_key = None
            for k in range(len(ring)):
                vx, vy = points[ring[k]]
                if k == cand or (vx, vy) == (px, py):
                    continue
                if not _in_triangle_closed((mx, my), (best_x, my), (px, py), (vx, vy)):
                    continue
                prev = points[ring[k - 1]]
                nxt = points[ring[(k + 1) % len(ring)]]
                if _cross(prev, (vx, vy), nxt) > 0:
                    continue
                key = (math.atan2(abs(vy - my), vx - mx), math.hypot(vx - mx, vy - my))
                if best_key is None or key < best_key:
                    best_key = key
                    best = k
            if best_key is not None:
                cand = best
        ring = ring[: cand + 1] + hidx + [hidx[0], ring[cand]] + ring[cand + 1 :]
    return ring


def _in_triangle_closed(a, b, c, p) -> bool:
    d1 = _cross(a, b, p)
    d2 = _cross(b, c, p)
    d3 = _cross(c, a, p)
    has_neg = d1 < 0 or d2 < 0 or d3 < 0
    has_pos = d1 > 0 or d2 > 0 or d3 > 0
    return not (has_neg and has_pos)


def _ear_clip(points: np.ndarray, ring: list[int], rid: int) -> np.ndarray:
    tris = []
    ring = list(ring)
    while len(ring) > 3:
        n = len(ring)
        pos = points[ring]
        prev = np.roll(pos, 1, axis=0)
        nxt = np.roll(pos, -1, axis=0)
        turn = (pos[:, 0] - prev[:, 0]) * (nxt[:, 1] - prev[:, 1]) - (pos[:, 1] - prev[:, 1]) * (nxt[:, 0] - prev[:, 0])
        reflex = np.flatnonzero(turn <= 0)
        chosen = None
        for strict in (True, False):
            cands = np.flatnonzero(turn > 0) if strict else np.flatnonzero(turn == 0)
            for k in cands:
                a, b, c = prev[k], pos[k], nxt[k]
                others = reflex if strict else np.arange(n)
                others = others[(others != k) & (others != (k - 1) % n) & (others != (k + 1) % n)]
                if len(others):
                    q = pos[others]
                    same = (
                        np.all(q == a, axis=1) | np.all(q == b, axis=1) | np.all(q == c, axis=1)
                    )
                    q = q[~same]
                if len(others) and len(q):
                    d1 = (b[0] - a[0]) * (q[:, 1] - a[1]) - (b[1] - a[1]) * (q[:, 0] - a[0])
                    d2 = (c[0] - b[0]) * (q[:, 1] - b[1]) - (c[1] - b[1]) * (q[:, 0] - b[0])
                    d3 = (a[0] - c[0]) * (q[:, 1] - c[1]) - (a[1] - c[1]) * (q[:, 0] - c[0])
                    if strict:
                        blocked = (d1 >= 0) & (d2 >= 0) & (d3 >= 0)
                    else:
                        blocked = (d1 > 0) & (d2 > 0) & (d3 > 0)
                    if blocked.any():
                        continue
                chosen = int(k)
                break
            if chosen is not None:
                break
        if chosen is None:
            raise TriangulationFailure(f"region {rid}: no ear found (self-intersecting ring?)")
        n = len(ring)
        tris.append((ring[(chosen - 1) % n], ring[chosen], ring[(chosen + 1) % n]))
        del ring[chosen]
    tris.append(tuple(ring))
    return np.array(tris, dtype=np.int64)


def triangulate_indices(poly: RoiPolygon) -> tuple[np.ndarray, np.ndarray]:
    """Ear-clip the polygon with holes.

    Returns ``(points, triangles)`` where ``points`` is the exterior followed by
    every hole and ``triangles`` indexes into it (counter-clockwise).
    """
    _validate_simple(poly)
    points = np.vstack(poly.rings)
    ring = _bridge_holes(points, poly)
    return points, _ear_clip(points, ring, poly.region_id)


def triangulate_cap(poly: RoiPolygon) -> np.ndarray:
    """Triangles partitioning the polygon, as a (T, 3, 2) array of CRS points."""
    points, tris = triangulate_indices(poly)
    return points[tris]


# --- extrusion ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShapeMesh:
    vertices: np.ndarray  # (V, 3) world
    triangles: np.ndarray  # (T, 3) int
    region_id: int
    half_height: float

    def signed_volume(self) -> float:
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def edge_incidence(triangles: np.ndarray) -> dict:
    """Count triangles per undirected edge."""
    counts: dict = {}
    for tri in np.asarray(triangles):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_closed_manifold(triangles: np.ndarray) -> bool:
    tris = np.asarray(triangles)
    if len(tris) == 0:
        return False
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]).astype(np.int64)
    base = int(directed.max()) + 1
    lo = directed.min(axis=1)
    hi = directed.max(axis=1)
    _, counts = np.unique(lo * base + hi, return_counts=True)
    if not np.all(counts == 2):
        return False
    # consistent winding: every directed edge appears once
    keys = directed[:, 0] * base + directed[:, 1]
    return len(np.unique(keys)) == len(keys)


def check_closed_manifold(mesh: ShapeMesh) -> None:
    if not is_closed_manifold(mesh.triangles):
        raise OpenMesh(f"shape mesh for region {mesh.region_id} is not a closed 2-manifold")


def extrude_polygon(poly: RoiPolygon, t: WorldCrsTransform, half_height: float) -> ShapeMesh:
    """Sweep the polygon along world y from -half_height to +half_height."""
    if not half_height > 0:
        raise ValueError(f"half_height must be positive, got {half_height}")
    points, cap = triangulate_indices(poly)
    n = len(points)
    ground = t.world_from_crs(points)
    top = np.column_stack([ground[:, 0], np.full(n, half_height), ground[:, 1]])
    bottom = np.column_stack([ground[:, 0], np.full(n, -half_height), ground[:, 1]])
    vertices = np.vstack([top, bottom])

    tris = [cap, cap[:, ::-1] + n]
    start = 0
    for ring in poly.rings:
        m = len(ring)
        i = np.arange(start, start + m)
        k = np.roll(i, -1)
        tris.append(np.column_stack([k, i, i + n]))
        tris.append(np.column_stack([k, i + n, k + n]))
        start += m
    triangles = np.ascontiguousarray(np.vstack(tris), dtype=np.int64)
    mesh = ShapeMesh(vertices, triangles, poly.region_id, float(half_height))
    if mesh.signed_volume() < 0:
        mesh = ShapeMesh(vertices, np.ascontiguousarray(triangles[:, ::-1]), poly.region_id, float(half_height))
    return mesh


def extrude_roi_set(roi: RoiSet, t: WorldCrsTransform, half_height: float) -> list[ShapeMesh]:
    return [extrude_polygon(p, t, half_height) for p in roi.regions]


# --- rasterization ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RoiTexture:
    width: int
    height: int
    crs_window: tuple[float, float, float, float]
    id_grid: np.ndarray  # (height, width) int32, row j <-> increasing v
    dist_grid: np.ndarray  # (height, width) float64 texels, negative inside

    @property
    def texel_size(self) -> tuple[float, float]:
        u0, v0, u1, v1 = self.crs_window
        return (u1 - u0) / self.width, (v1 - v0) / self.height

    @cached_property
    def packed(self) -> np.ndarray:
        """(height, width, 2) float64 texels of (region id, distance).

        Interleaving both channels lets a lookup touch one cache line.
        """
        out = np.empty((self.height, self.width, 2))
        out[..., 0] = self.id_grid
        out[..., 1] = self.dist_grid
        return out

    def texel_centers(self) -> np.ndarray:
        """CRS coordinates of every texel center, shape (height, width, 2)."""
        return texel_centers(self.crs_window, self.width, self.height)

    def sub_window(self, i0: int, j0: int, i1: int, j1: int) -> tuple[float, float, float, float]:
        """CRS rectangle covered by texel columns [i0, i1) and rows [j0, j1)."""
        u0, v0, _, _ = self.crs_window
        du, dv = self.texel_size
        return (u0 + i0 * du, v0 + j0 * dv, u0 + i1 * du, v0 + j1 * dv)


def texel_centers(window, width: int, height: int) -> np.ndarray:
    u0, v0, u1, v1 = window
    du = (u1 - u0) / width
    dv = (v1 - v0) / height
    xs = u0 + (np.arange(width, dtype=np.float64) + 0.5) * du
    ys = v0 + (np.arange(height, dtype=np.float64) + 0.5) * dv
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def signed_distance(id_grid: np.ndarray, threads: int = 1) -> np.ndarray:
    """Signed distance (texels) to the nearest region boundary, negative inside.

    The boundary sits halfway between a texel and its differently-labelled
    neighbour, so adjacent texels across an edge read -0.5 and +0.5.  Texels
    beyond the grid count as id 0.
    """
    h, w = id_grid.shape
    diag = math.hypot(w, h)
    padded = np.pad(id_grid, 1)
    inside = padded > 0
    out = np.sqrt(kernels.edt_sq(inside, threads)) - 0.5
    if inside.any():
        for rid in np.unique(padded[inside]):
            rows = np.flatnonzero((padded == rid).any(axis=1))
            cols = np.flatnonzero((padded == rid).any(axis=0))
            r0, r1 = rows[0] - 1, rows[-1] + 2
            c0, c1 = cols[0] - 1, cols[-1] + 2
            sub = padded[r0:r1, c0:c1]
            d = np.sqrt(kernels.edt_sq(sub != rid, threads)) - 0.5
            region = sub == rid
            out[r0:r1, c0:c1][region] = -d[region]
    out = np.clip(out[1:-1, 1:-1], -diag, diag)
    return np.ascontiguousarray(out)


def rasterize_roi(roi: RoiSet, crs_window, width: int, height: int, threads: int = 1) -> RoiTexture:
    """Sample region membership at texel centers; later regions overwrite earlier ones."""
    if width < 1 or height < 1:
        raise ValueError("texture size must be at least 1x1")
    u0, v0, u1, v1 = (float(c) for c in crs_window)
    if not (u1 > u0 and v1 > v0):
        raise ValueError(f"degenerate crs_window {crs_window}")
    du = (u1 - u0) / width
    dv = (v1 - v0) / height
    ids = np.zeros((height, width), dtype=np.int32)
    for region in roi.regions:
        kernels.scanline_fill(ids, region.edges(), u0, v0, du, dv, int(region.region_id), threads)
    dist = signed_distance(ids, threads)
    return RoiTexture(width, height, (u0, v0, u1, v1), ids, dist)


def default_window(roi: RoiSet, margin: float = 0.02):
    """CRS bounds padded by ``margin`` of the larger extent on every side."""
    if roi.crs_bounds is None:
        return (0.0, 0.0, 1.0, 1.0)
    u0, v0, u1, v1 = roi.crs_bounds
    pad = margin * max(u1 - u0, v1 - v0)
    return (u0 - pad, v0 - pad, u1 + pad, v1 + pad)


def bake_style_texture(roi: RoiTexture, styles, policy: OpacityPolicy = DEFAULT_POLICY, *,
                       clamp: bool = True, warnings: list | None = None,
                       only_region: int | None = None) -> np.ndarray:
    """RGBA float32 raster with pattern, outline and opacity baked in.

    ``styles`` maps region id to OverlayStyle.  When ``only_region`` is given
    every other region is left transparent (one texture per decal).
    """
    h, w = roi.id_grid.shape
    rgba = np.zeros((h, w, 4), dtype=np.float32)
    ids = roi.id_grid
    present = np.unique(ids[ids > 0])
    scale = pattern_scale(roi.width)
    jj, ii = np.indices((h, w))
    for rid in present:
        rid = int(rid)
        if only_region is not None and rid != only_region:
            continue
        try:
            style = styles[rid]
        except (KeyError, IndexError):
            raise MissingStyle(f"no style for region id {rid}") from None
        sel = ids == rid
        x = ii[sel] + 0.5
        y = jj[sel] + 0.5
        cov = eval_pattern(style, x, y, roi.dist_grid[sel], scale=scale)
        alpha = effective_opacity(style.opacity, policy, warnings, rid) if clamp else style.opacity
        rgba[sel, 0] = style.color[0]
        rgba[sel, 1] = style.color[1]
        rgba[sel, 2] = style.color[2]
        rgba[sel, 3] = alpha * cov
    return rgba
