"""The three overlay membership techniques: image-space CSG, decals and PPS.

Every technique maps a G-buffer to an OverlayMask; compositing is separate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CameraInsideSolid, DimensionMismatch, OpenMesh
from .geo_ingest import RoiPolygon, RoiSet, WorldCrsTransform
from .scene_raster import LAYER_NAMES, Camera, GBuffer, orthonormal_basis, screen_triangles
from .shape_bake import RoiTexture, ShapeMesh, boundary_distance, contains_points, is_closed_manifold

DEFAULT_DECAL_LAYERS = ("terrain",)
_EDGE_TOL = 1e-12


@dataclass(eq=False)
class OverlayMask:
    width: int
    height: int
    region_id: np.ndarray  # (H, W) int32, 0 = none
    rgba: np.ndarray | None = None  # (H, W, 4) float32 decal samples
    pattern_xy: np.ndarray | None = None  # (H, W, 2) texture-pixel coordinates
    dist: np.ndarray | None = None  # (H, W) signed boundary distance, texels
    fetches: int = 0

    @classmethod
    def empty(cls, width: int, height: int) -> "OverlayMask":
        return cls(width, height, np.zeros((height, width), dtype=np.int32))

    @property
    def covered(self) -> np.ndarray:
        return self.region_id > 0


# --- image-space CSG ---------------------------------------------------------------


def _ray_crossings(origin: np.ndarray, vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Per-triangle hit flags for a ray from ``origin`` (slightly tilted upward)."""
    direction = np.array([1e-3, 1.0, 2e-3])
    direction /= np.linalg.norm(direction)
    v = vertices[triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v[:, 0]
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    w = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    return ok & (u >= 0) & (w >= 0) & (u + w <= 1) & (t > 0)


def _ray_parity(origin: np.ndarray, mesh: ShapeMesh) -> bool:
    return bool(_ray_crossings(origin, mesh.vertices, mesh.triangles).sum() % 2)


def _merge_meshes(meshes):
    """Concatenated vertices and triangles plus the owning mesh of each triangle."""
    verts, tris, owner = [], [], []
    base = 0
    for k, m in enumerate(meshes):
        verts.append(m.vertices)
        tris.append(np.asarray(m.triangles, dtype=np.int64) + base)
        owner.append(np.full(len(m.triangles), k, dtype=np.int64))
        base += len(m.vertices)
    return np.vstack(verts), np.vstack(tris), np.concatenate(owner)


@dataclass(frozen=True)
class PatternFrame:
    """Maps world ground points to baked-texture pixel coordinates."""

    transform: WorldCrsTransform
    crs_window: tuple[float, float, float, float]
    width: int
    height: int

    @classmethod
    def of(cls, roi: RoiTexture, t: WorldCrsTransform) -> "PatternFrame":
        return cls(t, roi.crs_window, roi.width, roi.height)

    def texel_coords(self, world_xz: np.ndarray) -> np.ndarray:
        uv = self.transform.crs_from_world(world_xz)
        u0, v0, u1, v1 = self.crs_window
        return np.stack(
            [(uv[..., 0] - u0) / (u1 - u0) * self.width, (uv[..., 1] - v0) / (v1 - v0) * self.height], axis=-1
        )

    @property
    def texel_size(self) -> float:
        u0, v0, u1, v1 = self.crs_window
        return 0.5 * ((u1 - u0) / self.width + (v1 - v0) / self.height)


def csg_mask(g: GBuffer, meshes, cam: Camera, threads: int = 1, *, frame: PatternFrame | None = None,
             outline_polygons: dict | None = None) -> OverlayMask:
    """Per-pixel parity of camera-to-fragment segments against closed shape meshes.

    A fragment with an odd number of shape-mesh surfaces between it and the
    camera lies inside that solid.  Meshes are processed in order, so the last
    odd-parity mesh wins on overlap.  ``frame`` adds texture-space pattern
    coordinates; ``outline_polygons`` (region id -> RoiPolygon) adds exact
    boundary distances for outline styles.
    """
    meshes = list(meshes)
    mask = OverlayMask.empty(g.width, g.height)
    if not meshes:
        return mask
    verts, tris, owner = _merge_meshes(meshes)
    # disjoint closed manifolds merge into a closed manifold, so one check
    # covers the common case and the per-mesh pass only names the culprit
    if not is_closed_manifold(tris) or any(len(m.triangles) == 0 for m in meshes):
        for m in meshes:
            if not is_closed_manifold(m.triangles):
                raise OpenMesh(f"shape mesh for region {m.region_id} is not a closed 2-manifold")
    inside = np.bincount(owner, weights=_ray_crossings(cam.position, verts, tris), minlength=len(meshes))
    for k in np.flatnonzero(inside.astype(np.int64) % 2):
        raise CameraInsideSolid(f"camera is inside the shape mesh of region {meshes[k].region_id}")
    z_clip = cam.near * 1e-3
    sx, sy, sz, ctris, _, src = screen_triangles(cam, verts, tris, g.width, g.height, z_clip)
    cowner = owner[src]
    order = np.argsort(cowner, kind="stable")
    offsets = np.searchsorted(cowner[order], np.arange(len(meshes) + 1))
    rids = np.array([m.region_id for m in meshes], dtype=np.int32)
    kernels.csg_parity(
        sx, sy, sz, np.ascontiguousarray(ctris[order]), offsets, rids,
        np.ascontiguousarray(g.depth), mask.region_id, threads,
    )
    if frame is not None:
        _attach_vector_pattern(mask, g, frame, outline_polygons)
    return mask


def _attach_vector_pattern(mask: OverlayMask, g: GBuffer, frame: PatternFrame, outline_polygons):
    sel = mask.region_id > 0
    xz = g.world[..., [0, 2]]
    pxy = np.zeros((g.height, g.width, 2))
    pxy[sel] = frame.texel_coords(xz[sel])
    mask.pattern_xy = pxy
    if outline_polygons:
        dist = np.full((g.height, g.width), np.inf)
        crs = frame.transform.crs_from_world(xz[sel])
        ids = mask.region_id[sel]
        vals = np.full(len(ids), np.inf)
        for rid, poly in outline_polygons.items():
            k = ids == rid
            if k.any():
                vals[k] = -boundary_distance(poly, crs[k]) / frame.texel_size
        dist[sel] = vals
        mask.dist = dist


# --- decal projector ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Projector:
    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    orthographic: bool = False
    fov_y: float = 60.0
    aspect: float = 1.0
    half_extents: tuple[float, float] = (1.0, 1.0)
    near: float = 0.01
    far: float = 100.0
    right: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not self.orthographic and not 0 < self.fov_y < 180:
            raise ValueError("vertical FoV must lie in (0, 180) degrees")
        if self.orthographic and not (self.half_extents[0] > 0 and self.half_extents[1] > 0):
            raise ValueError("orthographic half extents must be positive")
        r, u, f = orthonormal_basis(self.forward, self.up)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "forward", f)
        object.__setattr__(self, "up", u)
        object.__setattr__(self, "right", r)

    @property
    def basis(self) -> np.ndarray:
        return np.stack([self.position, self.right, self.up, self.forward])

    @property
    def extent_params(self) -> tuple[float, float]:
        if self.orthographic:
            return float(self.half_extents[0]), float(self.half_extents[1])
        th = math.tan(math.radians(self.fov_y) / 2.0)
        return th * self.aspect, th


def decal_uv(proj: Projector, p):
    """Normalized (u, v) of ``p`` on the projector image plane, or None outside.

    u grows along the projector's right axis, v grows downward (against up).
    """
    d = np.asarray(p, dtype=np.float64) - proj.position
    xp = d[0] * proj.right[0] + d[1] * proj.right[1] + d[2] * proj.right[2]
    yp = d[0] * proj.up[0] + d[1] * proj.up[1] + d[2] * proj.up[2]
    zp = d[0] * proj.forward[0] + d[1] * proj.forward[1] + d[2] * proj.forward[2]
    if not (proj.near <= zp <= proj.far):
        return None
    p0, p1 = proj.extent_params
    if proj.orthographic:
        xn, yn = xp / p0, yp / p1
    else:
        xn, yn = xp / (zp * p0), yp / (zp * p1)
    # tan() of a round angle is off by an ulp or so; keep points on the frustum edge
    if abs(xn) > 1.0 + _EDGE_TOL or abs(yn) > 1.0 + _EDGE_TOL:
        return None
    xn = min(max(xn, -1.0), 1.0)
    yn = min(max(yn, -1.0), 1.0)
    return (1.0 + xn) * 0.5, (1.0 - yn) * 0.5


def projector_for_window(t: WorldCrsTransform, crs_window, y_min: float, y_max: float) -> Projector:
    """Straight-down orthographic projector covering a CRS rectangle.

    Texture column index follows CRS u and row index follows CRS v, matching
    RoiTexture layout.  Needs a transform whose inverse linear part has
    orthogonal columns and positive determinant (rotation + axis scaling).
    """
    inv = t.inverse()
    ex = np.array([inv.a, inv.c])  # world direction of +u
    ey = np.array([inv.b, inv.d])  # world direction of +v
    if abs(ex @ ey) > 1e-9 * np.linalg.norm(ex) * np.linalg.norm(ey) or t.det <= 0:
        raise ValueError("decal projector needs a rotation/scale world<->CRS transform with det > 0")
    u0, v0, u1, v1 = crs_window
    center = t.world_from_crs(np.array([(u0 + u1) / 2.0, (v0 + v1) / 2.0]))
    hw = np.linalg.norm(ex) * (u1 - u0) / 2.0
    hh = np.linalg.norm(ey) * (v1 - v0) / 2.0
    ey_dir = ey / np.linalg.norm(ey)
    top = y_max + 1.0
    return Projector(
        position=np.array([center[0], top, center[1]]),
        forward=np.array([0.0, -1.0, 0.0]),
        up=np.array([-ey_dir[0], 0.0, -ey_dir[1]]),
        orthographic=True,
        half_extents=(hw, hh),
        near=1e-3,
        far=top - y_min + 1.0,
    )


@dataclass(frozen=True, eq=False)
class Decal:
    projector: Projector
    texture: np.ndarray  # (th, tw, 4) float32
    region_id: int


def _eligible(g: GBuffer, layers) -> np.ndarray:
    codes = [LAYER_NAMES[name] for name in layers]
    return np.ascontiguousarray(np.isin(g.layer, codes) & g.covered)


def apply_decal(g: GBuffer, proj: Projector, baked: np.ndarray, layers=DEFAULT_DECAL_LAYERS,
                region_id: int = 1, mask: OverlayMask | None = None, threads: int = 1,
                _eligible_cache=None) -> OverlayMask:
    """One full-screen projector pass; samples with alpha > 0 overwrite ``mask``."""
    baked = np.ascontiguousarray(baked, dtype=np.float32)
    if baked.ndim != 3 or baked.shape[0] == 0 or baked.shape[1] == 0 or baked.shape[2] != 4:
        raise ValueError("baked decal texture must be a non-empty (h, w, 4) array")
    if mask is None:
        mask = OverlayMask.empty(g.width, g.height)
    if mask.rgba is None:
        mask.rgba = np.zeros((g.height, g.width, 4), dtype=np.float32)
    eligible = _eligible_cache if _eligible_cache is not None else _eligible(g, layers)
    p0, p1 = proj.extent_params
    kernels.decal_pass(
        np.ascontiguousarray(g.world), eligible, proj.basis, proj.orthographic, p0, p1,
        proj.near, proj.far, baked, int(region_id), mask.region_id, mask.rgba, threads,
    )
    return mask


def apply_decals(g: GBuffer, decals, layers=DEFAULT_DECAL_LAYERS, threads: int = 1) -> OverlayMask:
    mask = OverlayMask.empty(g.width, g.height)
    mask.rgba = np.zeros((g.height, g.width, 4), dtype=np.float32)
    eligible = _eligible(g, layers)
    for d in decals:
        apply_decal(g, d.projector, d.texture, layers, d.region_id, mask, threads, _eligible_cache=eligible)
    return mask


def build_decals(roi: RoiTexture, t: WorldCrsTransform, y_min: float, y_max: float,
                 rgba: np.ndarray | None = None) -> list[Decal]:
    """One projector per region, each covering the region's texel-aligned bounding box.

    Without ``rgba`` the decal textures carry the bare footprint (alpha 1).
    """
    decals = []
    ids = roi.id_grid
    for rid in (int(r) for r in np.unique(ids[ids > 0])):
        rows = np.flatnonzero((ids == rid).any(axis=1))
        cols = np.flatnonzero((ids == rid).any(axis=0))
        j0, j1 = int(rows[0]), int(rows[-1]) + 1
        i0, i1 = int(cols[0]), int(cols[-1]) + 1
        sub = ids[j0:j1, i0:i1] == rid
        tex = np.zeros((j1 - j0, i1 - i0, 4), dtype=np.float32)
        if rgba is None:
            tex[sub] = (1.0, 1.0, 1.0, 1.0)
        else:
            tex[sub] = rgba[j0:j1, i0:i1][sub]
        proj = projector_for_window(t, roi.sub_window(i0, j0, i1, j1), y_min, y_max)
        decals.append(Decal(proj, tex, rid))
    return decals


# --- post-process sampling --------------------------------------------------------------


def pps_lookup(g: GBuffer, t: WorldCrsTransform, roi: RoiTexture, threads: int = 1) -> OverlayMask:
    """One id-texture fetch per pixel through the world -> CRS transform."""
    out_id = np.zeros((g.height, g.width), dtype=np.int32)
    texel = np.zeros((g.height, g.width, 2), dtype=np.int32)
    dist = np.zeros((g.height, g.width))
    fetches = kernels.pps_fetch(
        np.ascontiguousarray(g.world), np.ascontiguousarray(g.covered), t.as_six(), roi.crs_window,
        roi.packed, out_id, texel, dist, threads,
    )
    return OverlayMask(g.width, g.height, out_id, None, texel + 0.5, dist, fetches)


# --- reference ----------------------------------------------------------------------------


def reference_mask(g: GBuffer, roi: RoiSet, t: WorldCrsTransform) -> np.ndarray:
    """Exact even-odd membership of every G-buffer world point (last region wins)."""
    out = np.zeros((g.height, g.width), dtype=np.int32)
    sel = g.covered
    crs = t.crs_from_world(g.world[sel][:, [0, 2]])
    ids = np.zeros(len(crs), dtype=np.int32)
    for poly in roi.regions:
        ids[contains_points(poly, crs)] = poly.region_id
    out[sel] = ids
    return out


def boundary_distance_px(reference: np.ndarray) -> np.ndarray:
    """Screen-space distance (px) from each pixel to the nearest reference boundary pixel."""
    h, w = reference.shape
    edge = np.zeros((h, w), dtype=bool)
    diff_x = reference[:, 1:] != reference[:, :-1]
    diff_y = reference[1:, :] != reference[:-1, :]
    edge[:, 1:] |= diff_x
    edge[:, :-1] |= diff_x
    edge[1:, :] |= diff_y
    edge[:-1, :] |= diff_y
    return np.sqrt(kernels.edt_sq(edge))


def crs_boundary_distance(g: GBuffer, roi: RoiSet, t: WorldCrsTransform, pixels: np.ndarray) -> np.ndarray:
    """CRS distance from the world points of ``pixels`` (bool mask) to the nearest ring edge."""
    crs = t.crs_from_world(g.world[pixels][:, [0, 2]])
    best = np.full(len(crs), np.inf)
    for poly in roi.regions:
        np.minimum(best, boundary_distance(poly, crs), out=best)
    return best


def check_same_shape(a: OverlayMask, b: OverlayMask):
    if a.region_id.shape != b.region_id.shape:
        raise DimensionMismatch(f"{a.region_id.shape} vs {b.region_id.shape}")


def polygons_by_id(roi: RoiSet) -> dict[int, RoiPolygon]:
    return {p.region_id: p for p in roi.regions}
