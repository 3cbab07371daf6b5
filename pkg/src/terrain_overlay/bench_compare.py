"""Render-time benchmark over overlay counts, slope fitting and mask metrics.

Only the overlay phase (mask computation plus compositing) is timed; the base
G-buffer is rasterized once per cell outside the timed region.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InsufficientData
from .geo_ingest import RoiPolygon, RoiSet, WorldCrsTransform, make_roi_set, normalize_ring
from .overlay_techniques import OverlayMask
from .pipeline import TECHNIQUES, OverlayAssets, bake_assets, render_technique, resolve_styles
from .scene_raster import Camera, Heightfield, MeshObject, cone, rasterize_scene, shade_base, value_noise_heightfield
from .style_composite import OverlayStyle

CSV_HEADER = ("technique", "overlays", "frame", "ms")
WARMUP_FRAMES = 3
SUN = (-0.4082482904638631, -0.8164965809277261, -0.4082482904638631)

# 1 world unit = 2 CRS units, offset like a projected grid origin
BENCH_TRANSFORM = WorldCrsTransform.scale_translate(2.0, 500000.0, 4100000.0)


@dataclass(eq=False)
class BenchScene:
    seed: int
    terrain: Heightfield
    objects: list[MeshObject]
    camera: Camera
    transform: WorldCrsTransform
    roi: RoiSet
    assets: OverlayAssets
    resolution: tuple[int, int]


def random_star_polygon(rng: np.random.Generator, center, radius: float, n_vertices: int = 16):
    """Simple polygon with sorted angles and jittered radii around ``center``."""
    base = np.sort(rng.uniform(0.0, 2 * math.pi, n_vertices))
    # keep angles distinct so no two vertices coincide
    base = base[np.concatenate([[True], np.diff(base) > 1e-6])]
    r = radius * rng.uniform(0.55, 1.0, len(base))
    pts = np.column_stack([center[0] + r * np.cos(base), center[1] + r * np.sin(base)])
    return pts


def _bench_polygons(seed: int, n: int, crs_extent, vertices: int) -> RoiSet:
    u0, v0, u1, v1 = crs_extent
    span = min(u1 - u0, v1 - v0)
    regions = []
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        cx = rng.uniform(u0 + 0.15 * (u1 - u0), u1 - 0.15 * (u1 - u0))
        cy = rng.uniform(v0 + 0.15 * (v1 - v0), v1 - 0.15 * (v1 - v0))
        radius = rng.uniform(0.04, 0.10) * span
        pts = random_star_polygon(rng, (cx, cy), radius, vertices)
        ring = normalize_ring(np.vstack([pts, pts[:1]]), hole=False)
        regions.append(RoiPolygon(ring, (), k + 1))
    return make_roi_set(regions)


_PALETTE = [
    (0.95, 0.80, 0.10), (0.90, 0.25, 0.20), (0.20, 0.55, 0.95), (0.85, 0.35, 0.85),
    (0.10, 0.80, 0.70), (0.95, 0.55, 0.10), (0.55, 0.30, 0.90), (0.95, 0.95, 0.95),
]


def generate_bench_scene(seed: int, n_overlays: int, resolution=(512, 512), texture_size=(1024, 1024),
                         vertices: int = 16, threads: int = 1) -> BenchScene:
    """Deterministic procedural terrain plus ``n_overlays`` seeded random polygons.

    Polygon k depends only on (seed, k), so a larger count extends the set of a
    smaller one.  Every technique's assets are baked from the same RoiSet.
    """
    if n_overlays < 0:
        raise ValueError("n_overlays must be >= 0")
    terrain = value_noise_heightfield(seed, 129, 129, cell_size=1.0, amplitude=3.0)
    x0, z0, x1, z1 = terrain.extent
    t = BENCH_TRANSFORM
    lo = t.crs_from_world(np.array([x0, z0]))
    hi = t.crs_from_world(np.array([x1, z1]))
    crs_extent = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
    roi = _bench_polygons(seed, n_overlays, crs_extent, vertices)

    rng = np.random.default_rng([seed, 10_000])
    objects = []
    for _ in range(6):
        cx, cz = rng.uniform(x0 + 10, x1 - 10, 2)
        objects.append(cone((cx, cz), float(terrain.height_at(cx, cz)), rng.uniform(1.5, 3.0), rng.uniform(4.0, 8.0)))

    w, h = resolution
    center = ((x0 + x1) / 2.0, 0.0, (z0 + z1) / 2.0)
    cam = Camera.orbit(center, 190.0, 60.0, 25.0, fov_y=45.0, aspect=w / h, near=1.0, far=1000.0)

    styles = {
        r.region_id: OverlayStyle("fill", color=_PALETTE[(r.region_id - 1) % len(_PALETTE)], opacity=0.45)
        for r in roi.regions
    }
    styles = resolve_styles(roi, styles)
    half_height = 10.0 * terrain.max_abs_height
    y_range = (float(terrain.heights.min()) - 1.0, float(terrain.heights.max()) + 10.0)
    assets = bake_assets(
        roi, t, styles, texture_size=texture_size, half_height=half_height, y_range=y_range,
        window=crs_extent, threads=threads,
    )
    return BenchScene(seed, terrain, objects, cam, t, roi, assets, (w, h))


@dataclass
class BenchReport:
    rows: list[tuple[str, int, int, float]]
    environment: dict
    digests: dict = field(default_factory=dict)  # (technique, count) -> sha256 of the frame
    fetches: dict = field(default_factory=dict)  # (technique, count) -> texture fetches per frame

    def medians(self) -> dict:
        cells: dict = {}
        for tech, n, _, ms in self.rows:
            cells.setdefault((tech, n), []).append(ms)
        return {k: statistics.median(v) for k, v in cells.items()}

    @property
    def techniques(self) -> list[str]:
        return list(dict.fromkeys(r[0] for r in self.rows))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for tech, n, frame, ms in self.rows:
                w.writerow([tech, n, frame, f"{ms:.6f}"])

    def write_environment(self, path) -> None:
        env = dict(self.environment)
        env["digests"] = {f"{t}:{n}": d for (t, n), d in self.digests.items()}
        env["fetches"] = {f"{t}:{n}": f for (t, n), f in self.fetches.items()}
        with open(path, "w") as fh:
            json.dump(env, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path, environment: dict | None = None) -> "BenchReport":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = tuple(next(r))
            if header != CSV_HEADER:
                raise ValueError(f"unexpected CSV header {header}")
            rows = [(t, int(n), int(f), float(ms)) for t, n, f, ms in r]
        return cls(rows, environment or {})


def environment_descriptor(resolution, seed: int, threads: int, frames: int) -> dict:
    return {
        "resolution": list(resolution),
        "seed": seed,
        "threads": threads,
        "frames_per_cell": frames,
        "warmup_frames": WARMUP_FRAMES,
        "backend": kernels.BACKEND,
        "python": platform.python_version(),
        "machine": platform.machine(),
        "cpu_count": os.cpu_count(),
    }


def image_digest(img: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(img).tobytes()).hexdigest()


def run_bench(techniques=TECHNIQUES, overlay_counts=(1, 2, 4, 8, 16, 32), frames_per_cell: int = 20,
              resolution=(512, 512), seed: int = 7, threads: int = 1, texture_size=(1024, 1024),
              progress=None) -> BenchReport:
    """Time the overlay phase for every (technique, count) cell.

    Cells run strictly one after another.  The first ``WARMUP_FRAMES`` frames
    of each cell are discarded.
    """
    if frames_per_cell < 10:
        raise ValueError("frames_per_cell must be >= 10")
    techniques = list(techniques)
    for tech in techniques:
        if tech not in TECHNIQUES:
            raise ValueError(f"unknown technique {tech!r}")
    counts = list(overlay_counts)
    w, h = resolution
    timings: dict = {}
    report = BenchReport([], environment_descriptor(resolution, seed, threads, frames_per_cell))
    for n in counts:
        scene = generate_bench_scene(seed, n, resolution, texture_size, threads=threads)
        g = rasterize_scene(scene.terrain, scene.objects, scene.camera, w, h, threads)
        base = shade_base(g, SUN, 1.0, 0.3)
        for tech in techniques:
            samples = []
            for frame in range(WARMUP_FRAMES + frames_per_cell):
                t0 = time.perf_counter()
                img, mask = render_technique(tech, g, base, scene.camera, scene.assets, threads)
                dt = (time.perf_counter() - t0) * 1000.0
                if frame >= WARMUP_FRAMES:
                    samples.append(dt)
                if frame == WARMUP_FRAMES:
                    report.digests[(tech, n)] = image_digest(img)
                    report.fetches[(tech, n)] = mask.fetches
            timings[(tech, n)] = samples
            if progress is not None:
                progress(tech, n, statistics.median(samples))
    for tech in techniques:
        for n in counts:
            for k, ms in enumerate(timings[(tech, n)]):
                report.rows.append((tech, n, k, ms))
    return report


@dataclass(frozen=True)
class SlopeFit:
    technique: str
    intercept: float
    slope: float
    residual_rms: float


def fit_slopes(report: BenchReport) -> dict[str, SlopeFit]:
    """Least-squares line of median frame time against overlay count, per technique."""
    med = report.medians()
    fits = {}
    for tech in report.techniques:
        pts = sorted((n, ms) for (t, n), ms in med.items() if t == tech)
        if len({n for n, _ in pts}) < 3:
            raise InsufficientData(f"{tech}: need >= 3 distinct overlay counts, got {len(pts)}")
        x = np.array([p[0] for p in pts], dtype=np.float64)
        y = np.array([p[1] for p in pts], dtype=np.float64)
        A = np.column_stack([np.ones_like(x), x])
        (b, m), *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - (b + m * x)
        fits[tech] = SlopeFit(tech, float(b), float(m), float(np.sqrt(np.mean(resid**2))))
    return fits


def format_slope_table(fits: dict[str, SlopeFit]) -> str:
    lines = [f"{'technique':<10} {'intercept_ms':>13} {'slope_ms':>12} {'rms_ms':>10}"]
    for f in fits.values():
        lines.append(f"{f.technique:<10} {f.intercept:>13.4f} {f.slope:>12.5f} {f.residual_rms:>10.4f}")
    return "\n".join(lines)


def write_slopes_csv(fits: dict[str, SlopeFit], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["technique", "intercept_ms", "slope_ms_per_overlay", "residual_rms_ms"])
        for f in fits.values():
            w.writerow([f.technique, f"{f.intercept:.6f}", f"{f.slope:.6f}", f"{f.residual_rms:.6f}"])


def ordering_holds(fits: dict[str, SlopeFit]) -> bool:
    """slope(pps) < slope(csg) < slope(decal)."""
    return fits["pps"].slope < fits["csg"].slope < fits["decal"].slope


def _ids(m) -> np.ndarray:
    return m.region_id if isinstance(m, OverlayMask) else np.asarray(m)


def mask_iou(a, b) -> float:
    """|a>0 and b>0| / |a>0 or b>0|, 1.0 when both are empty."""
    a = _ids(a)
    b = _ids(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    pa = a > 0
    pb = b > 0
    union = np.count_nonzero(pa | pb)
    if union == 0:
        return 1.0
    return np.count_nonzero(pa & pb) / union
