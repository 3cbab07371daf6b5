"""terrain-overlay command line: bake, render, bench and compare.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .bench_compare import fit_slopes, format_slope_table, mask_iou, ordering_holds, run_bench, write_slopes_csv
from .config import SCHEMA_HELP, load_scene
from .errors import ConfigError, InsufficientData, OverlayError
from .geo_ingest import WorldCrsTransform, load_geojson
from .io_formats import atomic_write, encode_obj, write_image, write_roi_texture, write_style_texture
from .overlay_techniques import boundary_distance_px, reference_mask
from .pipeline import TECHNIQUES, footprint_mask, render_config, resolve_styles, scene_assets
from .scene_raster import rasterize_scene
from .shape_bake import bake_style_texture, default_window, extrude_roi_set, rasterize_roi
from .style_composite import OverlayStyle

log = logging.getLogger("terrain_overlay")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(n: int):
    def parse(text: str) -> list[float]:
        try:
            vals = [float(x) for x in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {len(vals)}")
        return vals

    return parse


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    return vals[0], vals[1]


def _technique(text: str) -> str:
    if text not in TECHNIQUES:
        raise argparse.ArgumentTypeError(f"technique must be one of {', '.join(TECHNIQUES)}, got {text!r}")
    return text


def _default_threads() -> int:
    raw = os.environ.get("OVERLAY_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(n, 1)


def _require_input(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such input: {p}")
    return p


def _require_outdir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"output path is not a directory: {p}")
    return p


# --- commands -----------------------------------------------------------------------------


def cmd_bake(args) -> int:
    src = _require_input(args.geojson)
    out = _require_outdir(args.out)
    roi = load_geojson(src)
    t = WorldCrsTransform.from_six(args.transform)
    style = OverlayStyle.from_dict(json.loads(args.style)) if args.style else OverlayStyle()
    warnings: list = []
    styles = resolve_styles(roi, {}, clamp=not args.no_clamp, warnings=warnings, default=style)
    window = tuple(args.window) if args.window else default_window(roi)
    tw, th = args.resolution
    tex = rasterize_roi(roi, window, tw, th, args.threads)
    meshes = extrude_roi_set(roi, t, args.half_height)
    rgba = bake_style_texture(tex, styles, clamp=False)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    # everything is computed before the first file is written
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "shapes.obj", encode_obj(meshes))
    write_roi_texture(out / "roi_ids.png", out / "roi_ids.json", tex)
    write_style_texture(out / "style.png", rgba)
    print(f"baked {len(roi)} region(s): {out / 'shapes.obj'}, {out / 'roi_ids.png'}, {out / 'style.png'}")
    return 0


def _load_cfg(path, resolution=None):
    cfg = load_scene(_require_input(path))
    if resolution is not None:
        if min(resolution) < 16:
            raise ConfigError("resolution must be at least 16x16")
        from dataclasses import replace

        from .scene_raster import Camera

        cam = cfg.camera
        cam = Camera(cam.position, cam.forward, cam.up, cam.fov_y, resolution[0] / resolution[1], cam.near, cam.far)
        cfg = replace(cfg, resolution=tuple(resolution), camera=cam)
    return cfg


def cmd_render(args) -> int:
    out = Path(args.out)
    if out.suffix.lower() not in (".ppm", ".png"):
        raise UsageError(f"output must end in .ppm or .png, got {out.name!r}")
    if not out.parent.exists():
        raise UsageError(f"output directory does not exist: {out.parent}")
    cfg = _load_cfg(args.config, args.resolution)
    clamp = False if args.no_clamp else None
    res = render_config(cfg, args.technique, clamp=clamp, threads=args.threads)
    write_image(out, res.image)
    if args.mask:
        from .io_formats import encode_png16

        atomic_write(args.mask, encode_png16(res.mask.region_id))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    report = {
        "technique": args.technique,
        "output": str(out),
        "resolution": list(cfg.resolution),
        "overlays": len(res.assets.roi),
        "threads": args.threads,
        "backend": kernels.BACKEND,
        "clamp": cfg.clamp if clamp is None else clamp,
        "covered_pixels": int(np.count_nonzero(res.mask.region_id)),
        "fetches": res.mask.fetches,
        "timings_ms": {k: round(v, 3) for k, v in res.timings_ms.items()},
        "warnings": [str(w) for w in res.warnings],
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_bench(args) -> int:
    opts = {}
    if args.config:
        opts = json.loads(_require_input(args.config).read_text())
        if not isinstance(opts, dict):
            raise ConfigError("bench config must be a JSON object")
        extra = set(opts) - {"techniques", "counts", "frames", "resolution", "seed", "texture_resolution"}
        if extra:
            raise ConfigError(f"unknown bench config keys: {sorted(extra)}")
    techniques = args.technique or opts.get("techniques") or list(TECHNIQUES)
    for tech in techniques:
        if tech not in TECHNIQUES:
            raise ConfigError(f"unknown technique {tech!r}")
    counts = args.counts or opts.get("counts") or [1, 2, 4, 8, 16, 32]
    frames = args.frames or opts.get("frames") or 20
    resolution = args.resolution or tuple(opts.get("resolution", (512, 512)))
    tex = tuple(opts.get("texture_resolution", (1024, 1024)))
    seed = args.seed if args.seed is not None else opts.get("seed", 7)
    if frames < 10:
        raise ConfigError("--frames must be at least 10")
    if min(resolution) < 16:
        raise ConfigError("resolution must be at least 16x16")
    csv_path = Path(args.csv)
    if not csv_path.parent.exists():
        raise UsageError(f"output directory does not exist: {csv_path.parent}")

    def progress(tech, n, ms):
        print(f"  {tech:<6} overlays={n:<3} median={ms:.3f} ms", file=sys.stderr)

    report = run_bench(techniques, counts, frames, tuple(resolution), seed, args.threads, tex, progress)
    report.write_csv(csv_path)
    env_path = csv_path.with_suffix(".json")
    report.write_environment(env_path)
    print(f"wrote {len(report.rows)} rows to {csv_path} (environment: {env_path})")
    try:
        fits = fit_slopes(report)
    except InsufficientData as e:
        print(f"no slope fit: {e}")
        return 0
    print(format_slope_table(fits))
    if args.slopes:
        write_slopes_csv(fits, args.slopes)
    if all(t in fits for t in TECHNIQUES):
        verdict = "holds" if ordering_holds(fits) else "does NOT hold"
        print(f"ordering slope(pps) < slope(csg) < slope(decal): {verdict}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_cfg(args.config, args.resolution)
    assets = scene_assets(cfg, tuple({args.a, args.b}), threads=args.threads)
    w, h = cfg.resolution
    g = rasterize_scene(cfg.terrain, cfg.objects, cfg.camera, w, h, args.threads)
    ma = footprint_mask(args.a, g, cfg.camera, assets, args.threads, cfg.decal_layers)
    mb = footprint_mask(args.b, g, cfg.camera, assets, args.threads, cfg.decal_layers)
    diff = (ma.region_id > 0) != (mb.region_id > 0)
    ref = reference_mask(g, assets.roi, cfg.transform)
    dist = boundary_distance_px(ref)
    n_diff = int(np.count_nonzero(diff))
    max_d = float(dist[diff].max()) if n_diff else 0.0
    if args.diff:
        img = np.zeros((h, w, 3))
        img[(ma.region_id > 0) & ~diff] = (0.5, 0.5, 0.5)
        img[diff & (ma.region_id > 0)] = (1.0, 0.0, 0.0)
        img[diff & (mb.region_id > 0)] = (0.0, 0.4, 1.0)
        write_image(args.diff, img)
    print(json.dumps({
        "a": args.a,
        "b": args.b,
        "iou": mask_iou(ma, mb),
        "differing_pixels": n_diff,
        "max_boundary_distance_px": max_d,
        "covered_a": int(np.count_nonzero(ma.region_id)),
        "covered_b": int(np.count_nonzero(mb.region_id)),
    }, indent=2))
    return 0


# --- parser --------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="terrain-overlay",
        description="Bake GeoJSON regions, render terrain overlays and benchmark the overlay techniques.",
        epilog=SCHEMA_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    threads = {"type": int, "default": _default_threads(), "help": "worker threads (default: $OVERLAY_THREADS or 1)"}

    b = sub.add_parser("bake", help="bake OBJ shape meshes, id texture and style texture")
    b.add_argument("geojson")
    b.add_argument("--transform", type=_float_list(6), default=[1, 0, 0, 1, 0, 0],
                   help="a,b,c,d,tx,ty mapping world (x, z) to CRS (u, v)")
    b.add_argument("--resolution", type=_size, default=(1024, 1024), help="texture WIDTHxHEIGHT (default 1024x1024)")
    b.add_argument("--half-height", type=float, default=100.0, help="extrusion half-height, world units (default 100)")
    b.add_argument("--window", type=_float_list(4), help="CRS window u0,v0,u1,v1 (default: padded bounds)")
    b.add_argument("--style", help="style JSON applied to every region")
    b.add_argument("--no-clamp", action="store_true", help="do not clamp opacity to the policy range")
    b.add_argument("--threads", **threads)
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(func=cmd_bake)

    r = sub.add_parser("render", help="render one still with a chosen technique")
    r.add_argument("config")
    r.add_argument("--technique", type=_technique, required=True, help="csg, decal or pps")
    r.add_argument("--out", required=True, help="image path ending in .ppm or .png")
    r.add_argument("--mask", help="also write the region-id mask as a 16-bit PNG")
    r.add_argument("--resolution", type=_size, help="override the config resolution")
    r.add_argument("--no-clamp", action="store_true", help="do not clamp opacity to the policy range")
    r.add_argument("--threads", **threads)
    r.set_defaults(func=cmd_render)

    be = sub.add_parser("bench", help="time the overlay phase against overlay count")
    be.add_argument("config", nargs="?", help="optional bench JSON (techniques, counts, frames, resolution, seed)")
    be.add_argument("--csv", required=True, help="CSV output; the environment JSON goes next to it")
    be.add_argument("--slopes", help="also write the slope table as CSV")
    be.add_argument("--technique", type=_technique, action="append", help="repeatable (default: all three)")
    be.add_argument("--counts", type=_int_list, help="overlay counts, e.g. 1,2,4,8,16,32")
    be.add_argument("--frames", type=int, help="timed frames per cell, >= 10 (default 20)")
    be.add_argument("--resolution", type=_size, help="frame WIDTHxHEIGHT (default 512x512)")
    be.add_argument("--seed", type=int, help="scene seed (default 7)")
    be.add_argument("--threads", **threads)
    be.set_defaults(func=cmd_bench)

    c = sub.add_parser("compare", help="mask IoU and disagreement statistics of two techniques")
    c.add_argument("config")
    c.add_argument("a", type=_technique)
    c.add_argument("b", type=_technique)
    c.add_argument("--diff", help="write a disagreement image (.ppm or .png)")
    c.add_argument("--resolution", type=_size, help="override the config resolution")
    c.add_argument("--threads", **threads)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: no such input: {e.filename}", file=sys.stderr)
        return 2
    except (OverlayError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
