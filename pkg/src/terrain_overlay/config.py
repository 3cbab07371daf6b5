"""Scene configuration: one JSON document, validated completely before use.

Units: world coordinates are scene units with y up; the ground plane is
(x, z).  ``transform`` maps world (x, z) to CRS (u, v) as
(u, v) = (a*x + b*z + tx, c*x + d*z + ty).  Angles are degrees, resolutions
are pixels, opacity is a fraction.  Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NonInvertibleTransform, OverlayError
from .geo_ingest import RoiPolygon, RoiSet, WorldCrsTransform, load_geojson, make_roi_set, reproject_roi_set
from .scene_raster import Camera, Heightfield, MeshObject, box, cone, flat_heightfield, value_noise_heightfield
from .style_composite import DEFAULT_POLICY, OpacityPolicy, OverlayStyle

SCHEMA_VERSION = 1
DEFAULT_RESOLUTION = (512, 512)
DEFAULT_TEXTURE_RESOLUTION = (1024, 1024)
DEFAULT_SUN = {"direction": [-0.4082482904638631, -0.8164965809277261, -0.4082482904638631], "intensity": 1.0, "ambient": 0.3}

SCHEMA_HELP = """\
scene config (JSON, "schema": 1):
  terrain      {"type": "flat", "size": [nx, nz], "cell_size": 1.0, "origin": [x0, z0], "height": 0.0}
               {"type": "procedural", "seed": 7, "size": [nx, nz], "cell_size": 1.0, "amplitude": 5.0}
               {"type": "png", "path": "h.png", "cell_size": 1.0, "height_range": [lo, hi]}
                 (16-bit grayscale, column = x, row = z, 0..65535 -> lo..hi world units)
  objects      [{"type": "cone", "center": [x, z], "radius": r, "height": h},
                {"type": "box", "min": [x, y, z], "max": [x, y, z]}]
  camera       {"position": [x, y, z], "target": [x, y, z], "fov_y": 45, "near": 0.1, "far": 1000}
               or {"orbit": {"target": [x, y, z], "distance": d, "elevation": deg, "azimuth": deg}, ...}
  sun          {"direction": [x, y, z] (unit, pointing from the sun), "intensity": 1.0, "ambient": 0.3}
  transform    [a, b, c, d, tx, ty]   world (x, z) -> CRS (u, v)
  overlays     [{"geojson": "rois.geojson", "transform": [six numbers, optional],
                 "styles": {"default": {...}, "<region id>": {...}},
                 "opacity_policy": {"min": 0.2, "max": 0.7, "default": 0.45}}]
               style keys: pattern fill|stripes|dots, density low|high, outline, outline_width (px),
               color [r, g, b] in [0, 1], opacity in [0, 1]
  resolution          [width, height] output pixels, each >= 16
  texture_resolution  [width, height] baked texture pixels (default 1024x1024)
  texture_window      [u0, v0, u1, v1] CRS window of the baked texture (default: padded bounds)
  half_height         extrusion half-height in world units (default 10 x max |terrain height|)
  decal_layers        layers decals paint: any of terrain, object (default ["terrain"])
  clamp               clamp opacity into the policy range (default true)
"""


@dataclass(eq=False)
class OverlaySource:
    path: Path
    transform: WorldCrsTransform
    roi: RoiSet  # already in the scene CRS with scene-wide ids
    styles: dict[int, OverlayStyle]
    policy: OpacityPolicy


@dataclass(eq=False)
class SceneConfig:
    terrain: Heightfield | None
    objects: list[MeshObject]
    camera: Camera
    sun_direction: tuple[float, float, float]
    sun_intensity: float
    ambient: float
    transform: WorldCrsTransform
    overlays: list[OverlaySource]
    resolution: tuple[int, int]
    texture_resolution: tuple[int, int] = DEFAULT_TEXTURE_RESOLUTION
    texture_window: tuple[float, float, float, float] | None = None
    half_height: float | None = None
    decal_layers: tuple[str, ...] = ("terrain",)
    clamp: bool = True
    source: Path | None = field(default=None, repr=False)

    @property
    def roi(self) -> RoiSet:
        regions = [r for o in self.overlays for r in o.roi.regions]
        z = sum(o.roi.ignored_z_count for o in self.overlays)
        return make_roi_set(regions, z)

    def effective_half_height(self) -> float:
        if self.half_height is not None:
            return self.half_height
        m = self.terrain.max_abs_height if self.terrain is not None else 0.0
        return 10.0 * m if m > 0 else 1.0

    def y_range(self) -> tuple[float, float]:
        """Vertical span decal projectors must enclose."""
        ys = [0.0]
        if self.terrain is not None:
            ys += [float(self.terrain.heights.min()), float(self.terrain.heights.max())]
        for o in self.objects:
            ys += [float(o.vertices[:, 1].min()), float(o.vertices[:, 1].max())]
        return min(ys) - 1.0, max(ys) + 1.0


class _Errors:
    """Collects validation messages so they can be reported together."""

    def __init__(self):
        self.items: list[str] = []

    def add(self, msg: str):
        self.items.append(msg)

    def guard(self, where: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except FileNotFoundError as e:
            self.add(f"{where}: no such input: {e.filename}")
        except (OverlayError, ValueError, TypeError, KeyError) as e:
            self.add(f"{where}: {e}")
        return None


def _vec(v, n: int, name: str):
    if not isinstance(v, (list, tuple)) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
        raise ValueError(f"{name} must be a list of {n} numbers")
    vals = [float(x) for x in v]
    if not all(math.isfinite(x) for x in vals):
        raise ValueError(f"{name} must be finite")
    return vals


def _size(v, name: str, minimum: int = 1) -> tuple[int, int]:
    if not isinstance(v, (list, tuple)) or len(v) != 2 or not all(isinstance(x, int) for x in v):
        raise ValueError(f"{name} must be [width, height] integers")
    if min(v) < minimum:
        raise ValueError(f"{name} must be at least {minimum}x{minimum}, got {v[0]}x{v[1]}")
    return int(v[0]), int(v[1])


def _resolve(base: Path, p) -> Path:
    if not isinstance(p, str):
        raise ValueError("path must be a string")
    path = Path(p)
    return path if path.is_absolute() else base / path


def _terrain(d, base: Path) -> Heightfield | None:
    if d is None:
        return None
    kind = d.get("type")
    cell = float(d.get("cell_size", 1.0))
    origin = tuple(_vec(d.get("origin", [0.0, 0.0]), 2, "terrain.origin"))
    if kind == "flat":
        nx, nz = _size(d.get("size", [129, 129]), "terrain.size", 2)
        return flat_heightfield(nx, nz, cell, origin, float(d.get("height", 0.0)))
    if kind == "procedural":
        nx, nz = _size(d.get("size", [129, 129]), "terrain.size", 2)
        seed = d.get("seed", 7)
        if not isinstance(seed, int):
            raise ValueError("terrain.seed must be an integer")
        return value_noise_heightfield(
            seed, nx, nz, cell, float(d.get("amplitude", 5.0)), int(d.get("octaves", 4)),
            int(d.get("base_cells", 4)), origin,
        )
    if kind == "png":
        from .io_formats import read_png16

        path = _resolve(base, d.get("path"))
        lo, hi = _vec(d.get("height_range", [0.0, 10.0]), 2, "terrain.height_range")
        raw = read_png16(path).astype(np.float64)
        return Heightfield(lo + (hi - lo) * raw.T / 65535.0, cell, origin)
    raise ValueError(f"terrain.type must be flat, procedural or png, got {kind!r}")


def _objects(items, terrain: Heightfield | None) -> list[MeshObject]:
    out = []
    for k, d in enumerate(items or []):
        kind = d.get("type")
        if kind == "cone":
            cx, cz = _vec(d.get("center"), 2, f"objects[{k}].center")
            if "base_y" in d:
                base_y = float(d["base_y"])
            elif terrain is not None:
                base_y = float(terrain.height_at(cx, cz))
            else:
                base_y = 0.0
            r = float(d.get("radius", 1.0))
            h = float(d.get("height", 3.0))
            if not (r > 0 and h > 0):
                raise ValueError(f"objects[{k}]: radius and height must be positive")
            out.append(cone((cx, cz), base_y, r, h))
        elif kind == "box":
            lo = _vec(d.get("min"), 3, f"objects[{k}].min")
            hi = _vec(d.get("max"), 3, f"objects[{k}].max")
            if not all(a < b for a, b in zip(lo, hi)):
                raise ValueError(f"objects[{k}]: min must be below max on every axis")
            out.append(box(lo, hi))
        else:
            raise ValueError(f"objects[{k}].type must be cone or box, got {kind!r}")
    return out


def _camera(d, aspect: float) -> Camera:
    if not isinstance(d, dict):
        raise ValueError("camera must be an object")
    kw = {"fov_y": float(d.get("fov_y", 45.0)), "near": float(d.get("near", 0.1)), "far": float(d.get("far", 1000.0))}
    if "orbit" in d:
        o = d["orbit"]
        return Camera.orbit(
            _vec(o.get("target"), 3, "camera.orbit.target"), float(o["distance"]), float(o["elevation"]),
            float(o.get("azimuth", 0.0)), aspect=aspect, **kw,
        )
    pos = _vec(d.get("position"), 3, "camera.position")
    target = _vec(d.get("target"), 3, "camera.target")
    up = _vec(d.get("up", [0.0, 1.0, 0.0]), 3, "camera.up")
    if np.allclose(pos, target):
        raise ValueError("camera.position and camera.target coincide")
    return Camera.look_at(pos, target, up, aspect=aspect, **kw)


def _styles(d) -> tuple[OverlayStyle | None, dict[int, OverlayStyle]]:
    default = None
    per_id = {}
    for key, val in (d or {}).items():
        if key == "default":
            default = OverlayStyle.from_dict(val)
            continue
        try:
            rid = int(key)
        except ValueError:
            raise ValueError(f"style key {key!r} is neither 'default' nor a region id") from None
        per_id[rid] = OverlayStyle.from_dict(val)
    return default, per_id


def _policy(d) -> OpacityPolicy:
    if d is None:
        return DEFAULT_POLICY
    extra = set(d) - {"min", "max", "default"}
    if extra:
        raise ValueError(f"unknown opacity_policy keys: {sorted(extra)}")
    return OpacityPolicy(**{k: float(v) for k, v in d.items()})


def _overlays(items, base: Path, scene_t: WorldCrsTransform | None, errs: _Errors) -> list[OverlaySource]:
    out = []
    next_id = 0
    for k, d in enumerate(items or []):
        where = f"overlays[{k}]"
        if not isinstance(d, dict) or "geojson" not in d:
            errs.add(f"{where}: needs a 'geojson' path")
            continue
        path = errs.guard(where, _resolve, base, d["geojson"])
        roi = errs.guard(where, load_geojson, path) if path is not None else None
        t_file = scene_t
        if "transform" in d:
            t_file = errs.guard(f"{where}.transform", lambda v: WorldCrsTransform.from_six(_vec(v, 6, "transform")), d["transform"])
        styles = errs.guard(f"{where}.styles", _styles, d.get("styles"))
        policy = errs.guard(f"{where}.opacity_policy", _policy, d.get("opacity_policy"))
        if roi is None or styles is None or policy is None or t_file is None or scene_t is None:
            continue
        default, per_id = styles
        unknown = sorted(set(per_id) - set(roi.ids))
        if unknown:
            errs.add(f"{where}.styles: no region with id {unknown}")
        missing = [rid for rid in roi.ids if rid not in per_id and default is None]
        if missing:
            errs.add(f"{where}.styles: no style for region ids {missing} and no default")
            continue
        if t_file is not scene_t:
            roi = reproject_roi_set(roi, t_file, scene_t)
        # ids stay unique across files by offsetting each file's ids
        regions, remap = [], {}
        for r in roi.regions:
            new = next_id + r.region_id
            remap[r.region_id] = new
            regions.append(RoiPolygon(r.exterior, r.holes, new))
        local_max = max(roi.ids, default=0)
        next_id += local_max
        styles_new = {remap[rid]: per_id.get(rid, default) for rid in roi.ids}
        out.append(OverlaySource(path, t_file, make_roi_set(regions, roi.ignored_z_count), styles_new, policy))
    return out


def parse_scene(doc, base: Path) -> SceneConfig:
    """Validate a decoded config document; raises ConfigError listing every problem."""
    errs = _Errors()
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema") != SCHEMA_VERSION:
        errs.add(f"schema: expected {SCHEMA_VERSION}, got {doc.get('schema')!r}")
    known = {
        "schema", "terrain", "objects", "camera", "sun", "transform", "overlays", "resolution",
        "texture_resolution", "texture_window", "half_height", "decal_layers", "clamp",
    }
    extra = sorted(set(doc) - known)
    if extra:
        errs.add(f"unknown keys: {extra}")
    resolution = errs.guard("resolution", _size, doc.get("resolution", list(DEFAULT_RESOLUTION)), "resolution", 16)
    tex_res = errs.guard(
        "texture_resolution", _size, doc.get("texture_resolution", list(DEFAULT_TEXTURE_RESOLUTION)),
        "texture_resolution",
    )
    window = None
    if "texture_window" in doc:
        window = errs.guard("texture_window", _vec, doc["texture_window"], 4, "texture_window")
        if window is not None and not (window[0] < window[2] and window[1] < window[3]):
            errs.add("texture_window: need u0 < u1 and v0 < v1")
    terrain = errs.guard("terrain", _terrain, doc.get("terrain"), base)
    objects = errs.guard("objects", _objects, doc.get("objects"), terrain) or []
    aspect = resolution[0] / resolution[1] if resolution else 1.0
    camera = errs.guard("camera", _camera, doc.get("camera"), aspect)
    sun = doc.get("sun", DEFAULT_SUN)
    if not isinstance(sun, dict):
        errs.add("sun: must be an object")
        sun = DEFAULT_SUN
    sun_dir = errs.guard("sun.direction", _vec, sun.get("direction", DEFAULT_SUN["direction"]), 3, "sun.direction")
    if sun_dir is not None and abs(float(np.linalg.norm(sun_dir)) - 1.0) > 1e-6:
        errs.add("sun.direction: must be unit length")
    transform = None
    if "transform" not in doc:
        errs.add("transform: required (six numbers a, b, c, d, tx, ty)")
    else:
        six = errs.guard("transform", _vec, doc["transform"], 6, "transform")
        if six is not None:
            try:
                transform = WorldCrsTransform.from_six(six)
            except NonInvertibleTransform as e:
                errs.add(f"transform: {e}")
    overlays = _overlays(doc.get("overlays"), base, transform, errs)
    half_height = doc.get("half_height")
    if half_height is not None and not (isinstance(half_height, (int, float)) and half_height > 0):
        errs.add("half_height: must be a positive number")
    layers = doc.get("decal_layers", ["terrain"])
    if not isinstance(layers, list) or not layers or any(x not in ("terrain", "object") for x in layers):
        errs.add("decal_layers: must be a non-empty list drawn from terrain, object")
    clamp = doc.get("clamp", True)
    if not isinstance(clamp, bool):
        errs.add("clamp: must be true or false")
    if overlays:
        try:
            make_roi_set([r for o in overlays for r in o.roi.regions])
        except OverlayError as e:
            errs.add(f"overlays: {e}")
    if errs.items:
        raise ConfigError("invalid scene config:\n  " + "\n  ".join(errs.items))
    return SceneConfig(
        terrain, objects, camera, tuple(sun_dir), float(sun.get("intensity", 1.0)), float(sun.get("ambient", 0.3)),
        transform, overlays, resolution, tex_res, tuple(window) if window else None,
        float(half_height) if half_height is not None else None, tuple(layers), clamp,
    )


def load_scene(path) -> SceneConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"no such input: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    cfg = parse_scene(doc, path.parent)
    cfg.source = path
    return cfg
