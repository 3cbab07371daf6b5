"""Software rasterization of a heightfield terrain and occluders into a G-buffer.

Conventions: world y is up; pixel (i, j) has its center at (i + 0.5, j + 0.5)
with j growing downward; camera depth is the distance along the forward axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

LAYER_SKY = 0
LAYER_TERRAIN = 1
LAYER_OBJECT = 2
LAYER_NAMES = {"sky": LAYER_SKY, "terrain": LAYER_TERRAIN, "object": LAYER_OBJECT}

SKY_COLOR = (0.62, 0.74, 0.88)
TERRAIN_ALBEDO = (0.42, 0.52, 0.30)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError(f"cannot normalize {v}")
    return v / n


def orthonormal_basis(forward, up) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right, up, forward with right = forward x up (up re-orthogonalized)."""
    f = _unit(forward)
    r = np.cross(f, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(r) < 1e-12:
        raise ValueError("up vector is parallel to forward")
    r = r / np.linalg.norm(r)
    u = np.cross(r, f)
    return r, u, f


@dataclass(frozen=True, eq=False)
class Heightfield:
    heights: np.ndarray  # (nx, nz) world y
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ValueError("heightfield needs at least 2x2 samples")
        if not np.isfinite(h).all():
            raise ValueError("heightfield contains non-finite heights")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        object.__setattr__(self, "heights", h)

    @property
    def nx(self) -> int:
        return self.heights.shape[0]

    @property
    def nz(self) -> int:
        return self.heights.shape[1]

    @property
    def max_abs_height(self) -> float:
        return float(np.abs(self.heights).max())

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, z0 = self.origin
        return (x0, z0, x0 + (self.nx - 1) * self.cell_size, z0 + (self.nz - 1) * self.cell_size)

    def vertices(self) -> np.ndarray:
        x0, z0 = self.origin
        xs = x0 + np.arange(self.nx) * self.cell_size
        zs = z0 + np.arange(self.nz) * self.cell_size
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        return np.stack([gx, self.heights, gz], axis=-1).reshape(-1, 3)

    def normals(self) -> np.ndarray:
        """Per-vertex normals from central differences (one-sided at the border)."""
        h = self.heights
        dhdx = np.gradient(h, self.cell_size, axis=0)
        dhdz = np.gradient(h, self.cell_size, axis=1)
        n = np.stack([-dhdx, np.ones_like(h), -dhdz], axis=-1)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        return n.reshape(-1, 3)

    def triangles(self) -> np.ndarray:
        i, k = np.meshgrid(np.arange(self.nx - 1), np.arange(self.nz - 1), indexing="ij")
        v00 = (i * self.nz + k).ravel()
        v10 = ((i + 1) * self.nz + k).ravel()
        v01 = (i * self.nz + k + 1).ravel()
        v11 = ((i + 1) * self.nz + k + 1).ravel()
        t1 = np.stack([v00, v01, v10], axis=1)
        t2 = np.stack([v10, v01, v11], axis=1)
        return np.stack([t1, t2], axis=1).reshape(-1, 3)

    def height_at(self, x, z):
        """Height of the rendered surface (two triangles per cell) at ground points."""
        x0, z0 = self.origin
        fx = (np.asarray(x, dtype=np.float64) - x0) / self.cell_size
        fz = (np.asarray(z, dtype=np.float64) - z0) / self.cell_size
        i = np.clip(np.floor(fx).astype(int), 0, self.nx - 2)
        k = np.clip(np.floor(fz).astype(int), 0, self.nz - 2)
        s = fx - i
        t = fz - k
        h = self.heights
        h00, h10, h01, h11 = h[i, k], h[i + 1, k], h[i, k + 1], h[i + 1, k + 1]
        lower = s + t <= 1.0
        return np.where(
            lower,
            h00 + s * (h10 - h00) + t * (h01 - h00),
            h11 + (1 - s) * (h01 - h11) + (1 - t) * (h10 - h11),
        )


def flat_heightfield(nx: int, nz: int, cell_size: float = 1.0, origin=(0.0, 0.0), height: float = 0.0):
    return Heightfield(np.full((nx, nz), float(height)), cell_size, tuple(origin))


def value_noise_heightfield(seed: int, nx: int, nz: int, cell_size: float = 1.0, amplitude: float = 5.0,
                            octaves: int = 4, base_cells: int = 4, origin=(0.0, 0.0)) -> Heightfield:
    """Seeded multi-octave value noise with smoothstep interpolation."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0.0, 1.0, nx)
    v = np.linspace(0.0, 1.0, nz)
    total = np.zeros((nx, nz))
    amp, norm = 1.0, 0.0
    cells = base_cells
    for _ in range(octaves):
        lattice = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
        fu = u * cells
        fv = v * cells
        iu = np.minimum(fu.astype(int), cells - 1)
        iv = np.minimum(fv.astype(int), cells - 1)
        su = fu - iu
        sv = fv - iv
        su = su * su * (3 - 2 * su)
        sv = sv * sv * (3 - 2 * sv)
        a = lattice[iu[:, None], iv[None, :]]
        b = lattice[iu[:, None] + 1, iv[None, :]]
        c = lattice[iu[:, None], iv[None, :] + 1]
        d = lattice[iu[:, None] + 1, iv[None, :] + 1]
        top = a + (b - a) * su[:, None]
        bot = c + (d - c) * su[:, None]
        total += amp * (top + (bot - top) * sv[None, :])
        norm += amp
        amp *= 0.5
        cells *= 2
    return Heightfield(amplitude * total / norm, cell_size, tuple(origin))


@dataclass(frozen=True, eq=False)
class Camera:
    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    fov_y: float = 45.0
    aspect: float = 1.0
    near: float = 0.1
    far: float = 1000.0
    right: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.fov_y < 180:
            raise ValueError("vertical FoV must lie in (0, 180) degrees")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not self.aspect > 0:
            raise ValueError("aspect must be positive")
        r, u, f = orthonormal_basis(self.forward, self.up)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "forward", f)
        object.__setattr__(self, "up", u)
        object.__setattr__(self, "right", r)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0), **kw) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        return cls(position, np.asarray(target, dtype=np.float64) - position, np.asarray(up, dtype=np.float64), **kw)

    @classmethod
    def orbit(cls, target, distance: float, elevation_deg: float, azimuth_deg: float, **kw) -> "Camera":
        """Camera on a sphere around ``target`` looking at it."""
        el = math.radians(elevation_deg)
        az = math.radians(azimuth_deg)
        target = np.asarray(target, dtype=np.float64)
        offset = distance * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        up = (0.0, 1.0, 0.0) if elevation_deg < 89.9 else (-math.sin(az), 0.0, -math.cos(az))
        return cls.look_at(target + offset, target, up, **kw)

    @property
    def tan_half(self) -> float:
        return math.tan(math.radians(self.fov_y) / 2.0)

    def to_camera(self, p) -> np.ndarray:
        d = np.asarray(p, dtype=np.float64) - self.position
        return np.stack([d @ self.right, d @ self.up, d @ self.forward], axis=-1)

    def screen_from_camera(self, c, width: int, height: int):
        th = self.tan_half
        xn = c[..., 0] / (c[..., 2] * th * self.aspect)
        yn = c[..., 1] / (c[..., 2] * th)
        return (xn + 1.0) * 0.5 * width, (1.0 - yn) * 0.5 * height

    def elevation_deg(self) -> float:
        return math.degrees(math.asin(max(-1.0, min(1.0, -self.forward[1]))))


def project(cam: Camera, p, width: int, height: int):
    """Pixel coordinates and depth of ``p``, or None when behind the near plane."""
    c = cam.to_camera(p)
    if c[2] < cam.near:
        return None
    x, y = cam.screen_from_camera(c, width, height)
    return float(x), float(y), float(c[2])


def unproject(cam: Camera, px: float, py: float, depth: float, width: int, height: int) -> np.ndarray:
    th = cam.tan_half
    xn = 2.0 * px / width - 1.0
    yn = 1.0 - 2.0 * py / height
    xc = xn * depth * th * cam.aspect
    yc = yn * depth * th
    return cam.position + xc * cam.right + yc * cam.up + depth * cam.forward


# --- primitive occluders -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeshObject:
    """Triangle mesh with per-vertex normals and a constant albedo."""

    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    albedo: tuple[float, float, float] = (0.2, 0.45, 0.2)


def _faceted(vertices, triangles, albedo) -> MeshObject:
    v = vertices[triangles].reshape(-1, 3)
    fn = np.cross(vertices[triangles[:, 1]] - vertices[triangles[:, 0]], vertices[triangles[:, 2]] - vertices[triangles[:, 0]])
    fn /= np.linalg.norm(fn, axis=1, keepdims=True)
    n = np.repeat(fn, 3, axis=0)
    tris = np.arange(len(v)).reshape(-1, 3)
    return MeshObject(v, n, tris, tuple(albedo))


def cone(center, base_y: float, radius: float, height: float, segments: int = 16,
         albedo=(0.16, 0.40, 0.16)) -> MeshObject:
    """Closed cone standing on ``base_y`` at ground position ``center`` (x, z)."""
    cx, cz = center
    ang = np.linspace(0.0, 2 * math.pi, segments, endpoint=False)
    ring = np.column_stack([cx + radius * np.cos(ang), np.full(segments, base_y), cz + radius * np.sin(ang)])
    apex = np.array([[cx, base_y + height, cz]])
    base_c = np.array([[cx, base_y, cz]])
    verts = np.vstack([ring, apex, base_c])
    k = np.arange(segments)
    side = np.column_stack([k, np.full(segments, segments), (k + 1) % segments])
    bottom = np.column_stack([(k + 1) % segments, np.full(segments, segments + 1), k])
    return _faceted(verts, np.vstack([side, bottom]), albedo)


def box(lo, hi, albedo=(0.55, 0.50, 0.45)) -> MeshObject:
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array(
        [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0], [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
        dtype=np.float64,
    )
    t = np.array(
        [[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
         [3, 6, 2], [3, 7, 6], [0, 4, 7], [0, 7, 3], [1, 2, 6], [1, 6, 5]]
    )
    return _faceted(v, t, albedo)


# --- G-buffer ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GBuffer:
    width: int
    height: int
    depth: np.ndarray  # (H, W), +inf on sky
    world: np.ndarray  # (H, W, 3), NaN on sky
    normal: np.ndarray  # (H, W, 3)
    albedo: np.ndarray  # (H, W, 3)
    layer: np.ndarray  # (H, W) uint8

    @property
    def covered(self) -> np.ndarray:
        return self.layer != LAYER_SKY


def clip_near(cam_pts: np.ndarray, attrs: np.ndarray, tris: np.ndarray, z_clip: float):
    """Clip triangles against the plane ``z = z_clip`` in camera space.

    ``attrs`` are per-vertex values interpolated linearly along clipped edges.
    Returns new camera points, attributes, triangles and the source triangle of
    each output triangle.
    """
    z = cam_pts[:, 2]
    behind = z[tris] < z_clip
    n_behind = behind.sum(axis=1)
    keep = np.flatnonzero(n_behind == 0)
    partial = np.flatnonzero((n_behind == 1) | (n_behind == 2))
    if len(partial) == 0:
        return cam_pts, attrs, tris[keep], keep
    new_pts = [cam_pts]
    new_attrs = [attrs]
    out_tris = [tris[keep]]
    out_src = [keep]
    next_id = len(cam_pts)
    extra_pts, extra_attrs, extra_tris, extra_src = [], [], [], []

    def cut(a, b):
        t = (z_clip - z[a]) / (z[b] - z[a])
        p = cam_pts[a] + t * (cam_pts[b] - cam_pts[a])
        p[2] = z_clip
        return p, attrs[a] + t * (attrs[b] - attrs[a])

    for ti in partial:
        tri = tris[ti]
        poly = []
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            a_in = z[a] >= z_clip
            b_in = z[b] >= z_clip
            if a_in:
                poly.append(("v", a))
            if a_in != b_in:
                poly.append(("p", cut(a, b)))
        ids = []
        for kind, item in poly:
            if kind == "v":
                ids.append(int(item))
            else:
                extra_pts.append(item[0])
                extra_attrs.append(item[1])
                ids.append(next_id)
                next_id += 1
        for k in range(1, len(ids) - 1):
            extra_tris.append((ids[0], ids[k], ids[k + 1]))
            extra_src.append(ti)
    if extra_pts:
        new_pts.append(np.array(extra_pts))
        new_attrs.append(np.array(extra_attrs))
    if extra_tris:
        out_tris.append(np.array(extra_tris, dtype=tris.dtype))
        out_src.append(np.array(extra_src, dtype=keep.dtype))
    return np.vstack(new_pts), np.vstack(new_attrs), np.vstack(out_tris), np.concatenate(out_src)


def _scene_arrays(terrain: Heightfield | None, objects):
    verts, norms, albs, tris, layers = [], [], [], [], []
    base = 0
    if terrain is not None:
        v = terrain.vertices()
        verts.append(v)
        norms.append(terrain.normals())
        albs.append(np.tile(TERRAIN_ALBEDO, (len(v), 1)))
        t = terrain.triangles()
        tris.append(t)
        layers.append(np.full(len(t), LAYER_TERRAIN, dtype=np.uint8))
        base += len(v)
    for obj in objects:
        verts.append(obj.vertices)
        norms.append(obj.normals)
        albs.append(np.tile(obj.albedo, (len(obj.vertices), 1)))
        tris.append(obj.triangles + base)
        layers.append(np.full(len(obj.triangles), LAYER_OBJECT, dtype=np.uint8))
        base += len(obj.vertices)
    if not verts:
        return np.zeros((0, 3)), np.zeros((0, 9)), np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.uint8)
    attrs = np.hstack([np.vstack(verts), np.vstack(norms), np.vstack(albs)])
    return np.vstack(verts), attrs, np.vstack(tris).astype(np.int64), np.concatenate(layers)


def screen_triangles(cam: Camera, world_pts: np.ndarray, tris: np.ndarray, width: int, height: int,
                     z_clip: float, attrs: np.ndarray | None = None):
    """Camera-transform, near-clip and project triangles for the raster kernels."""
    cam_pts = cam.to_camera(world_pts) if len(world_pts) else np.zeros((0, 3))
    if attrs is None:
        attrs = np.zeros((len(world_pts), 0))
    cam_pts, attrs, tris, src = clip_near(cam_pts, attrs, tris, z_clip)
    with np.errstate(divide="ignore", invalid="ignore"):
        sx, sy = cam.screen_from_camera(cam_pts, width, height)
    sz = np.ascontiguousarray(cam_pts[:, 2])
    return np.ascontiguousarray(sx), np.ascontiguousarray(sy), sz, np.ascontiguousarray(tris), attrs, src


def rasterize_scene(terrain: Heightfield | None, objects, cam: Camera, width: int, height: int,
                    threads: int = 1) -> GBuffer:
    """Depth-buffered rasterization into a G-buffer with perspective-correct attributes."""
    if width < 1 or height < 1:
        raise ValueError("resolution must be at least 1x1")
    world_pts, attrs, tris, layers = _scene_arrays(terrain, list(objects))
    sx, sy, sz, ctris, cattrs, src = screen_triangles(cam, world_pts, tris, width, height, cam.near, attrs)
    tri_index, bary, depth = kernels.raster_triangles(sx, sy, sz, ctris, cam.near, cam.far, width, height, threads)
    covered = tri_index >= 0
    world = np.full((height, width, 3), np.nan)
    normal = np.zeros((height, width, 3))
    albedo = np.zeros((height, width, 3))
    layer = np.zeros((height, width), dtype=np.uint8)
    if covered.any():
        t = tri_index[covered]
        b = bary[covered]
        corner = cattrs[ctris[t]]  # (N, 3, 9)
        interp = np.einsum("nk,nkc->nc", b, corner)
        world[covered] = interp[:, 0:3]
        n = interp[:, 3:6]
        normal[covered] = n / np.linalg.norm(n, axis=1, keepdims=True)
        albedo[covered] = interp[:, 6:9]
        layer[covered] = layers[src[t]]
    return GBuffer(width, height, depth, world, normal, albedo, layer)


def shade_base(g: GBuffer, sun_dir, intensity: float = 1.0, ambient: float = 0.25,
               sky_color=SKY_COLOR, clamp: bool = True) -> np.ndarray:
    """albedo * (ambient + intensity * max(0, n . -sun)); sky gets ``sky_color``."""
    sun = np.asarray(sun_dir, dtype=np.float64)
    if abs(np.linalg.norm(sun) - 1.0) > 1e-9:
        raise ValueError("sun direction must be unit length")
    lambert = np.maximum(0.0, -(g.normal @ sun))
    img = g.albedo * (ambient + intensity * lambert)[..., None]
    img[~g.covered] = sky_color
    return np.clip(img, 0.0, 1.0) if clamp else img
