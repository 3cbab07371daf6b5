"""File formats: PPM/PNG images, 16-bit id PNGs, OBJ meshes and texture sidecars.

Writers go through ``atomic_write`` so a failed command never leaves a
half-written file behind.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .shape_bake import RoiTexture, ShapeMesh

SIDECAR_VERSION = 1


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Float [0, 1] to 8-bit with round-half-up; values are clipped first."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(img: np.ndarray) -> bytes:
    """Binary P6 PPM of an (H, W, 3) float image."""
    u8 = to_uint8(img)
    if u8.ndim != 3 or u8.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    h, w = u8.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + u8.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    """Inverse of encode_ppm for files without comments; returns uint8 (H, W, 3)."""
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("not an 8-bit P6 PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def _png_bytes(im: Image.Image) -> bytes:
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def encode_png(img: np.ndarray) -> bytes:
    """8-bit RGB or RGBA PNG from a float image."""
    u8 = to_uint8(img)
    mode = {3: "RGB", 4: "RGBA"}.get(u8.shape[-1] if u8.ndim == 3 else 0)
    if mode is None:
        raise ValueError("PNG needs an (H, W, 3) or (H, W, 4) image")
    return _png_bytes(Image.fromarray(u8, mode))


def encode_png16(grid: np.ndarray) -> bytes:
    """16-bit grayscale PNG of an integer grid (ids must fit in 0..65535)."""
    grid = np.asarray(grid)
    if grid.size and (grid.min() < 0 or grid.max() > 65535):
        raise ValueError("values out of 16-bit range")
    return _png_bytes(Image.fromarray(grid.astype(np.uint16)))


def read_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I", "L"):
            raise ValueError(f"{path}: expected a 16-bit grayscale PNG, got mode {im.mode}")
        return np.asarray(im).astype(np.int64)


def write_image(path, img: np.ndarray) -> None:
    """PPM or PNG chosen by extension."""
    ext = Path(path).suffix.lower()
    if ext == ".ppm":
        atomic_write(path, encode_ppm(img))
    elif ext == ".png":
        atomic_write(path, encode_png(img))
    else:
        raise ValueError(f"unsupported image extension {ext!r} (use .ppm or .png)")


# --- meshes -------------------------------------------------------------------------------


def encode_obj(meshes) -> bytes:
    """Wavefront OBJ with one object per shape mesh (1-based indices)."""
    lines = ["# extruded region meshes"]
    base = 1
    for m in meshes:
        lines.append(f"o region_{m.region_id}")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in m.vertices.tolist())
        lines.extend(f"f {a + base} {b + base} {c + base}" for a, b, c in m.triangles.tolist())
        base += len(m.vertices)
    return ("\n".join(lines) + "\n").encode()


def read_obj(path) -> list[ShapeMesh]:
    """Parse the OBJ subset written by encode_obj."""
    meshes = []
    name, verts, faces = None, [], []
    offset = 1
    all_count = 0

    def flush():
        if name is None:
            return
        rid = int(name.rsplit("_", 1)[-1]) if name.startswith("region_") else len(meshes) + 1
        v = np.array(verts, dtype=np.float64).reshape(-1, 3)
        f = np.array(faces, dtype=np.int64).reshape(-1, 3) - offset
        hh = float(np.abs(v[:, 1]).max()) if len(v) else 0.0
        meshes.append(ShapeMesh(v, f, rid, hh))

    for raw in Path(path).read_text().splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "o":
            flush()
            offset = all_count + 1
            name, verts, faces = parts[1], [], []
        elif parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
            all_count += 1
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) for p in parts[1:4]])
    flush()
    return meshes


# --- baked textures -----------------------------------------------------------------------


def texture_sidecar(roi: RoiTexture) -> dict:
    return {
        "version": SIDECAR_VERSION,
        "width": roi.width,
        "height": roi.height,
        "crs_window": [float(x) for x in roi.crs_window],
        # PNG row 0 is the top (largest v) so the image reads north-up
        "row_order": "north_up",
    }


def encode_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def write_roi_texture(png_path, json_path, roi: RoiTexture) -> None:
    atomic_write(png_path, encode_png16(roi.id_grid[::-1]))
    atomic_write(json_path, encode_json(texture_sidecar(roi)))


def read_roi_texture(png_path, json_path, threads: int = 1) -> RoiTexture:
    """Reload a baked id texture; the distance channel is recomputed."""
    from .shape_bake import signed_distance

    meta = json.loads(Path(json_path).read_text())
    ids = read_png16(png_path)
    if meta.get("row_order", "north_up") == "north_up":
        ids = ids[::-1]
    ids = np.ascontiguousarray(ids, dtype=np.int32)
    if ids.shape != (meta["height"], meta["width"]):
        raise ValueError(f"{png_path}: size {ids.shape[::-1]} does not match sidecar")
    return RoiTexture(meta["width"], meta["height"], tuple(meta["crs_window"]), ids, signed_distance(ids, threads))


def write_style_texture(path, rgba: np.ndarray) -> None:
    atomic_write(path, encode_png(rgba[::-1]))
