"""Compiled vs pure-Python kernel timings on the benchmark scene.

    python benchmarks/bench_kernels.py [--resolution 512] [--overlays 16] [--repeat 5]

Each kernel runs on identical inputs under both backends; outputs are
checked for bit-identity before timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from terrain_overlay import kernels
from terrain_overlay.bench_compare import generate_bench_scene
from terrain_overlay.geo_ingest import RoiSet
from terrain_overlay.overlay_techniques import _eligible, _merge_meshes
from terrain_overlay.scene_raster import _scene_arrays, rasterize_scene, screen_triangles


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3, out


def _cases(scene, res):
    cam = scene.camera
    g = rasterize_scene(scene.terrain, scene.objects, cam, res, res)
    tex = scene.assets.texture
    roi: RoiSet = scene.roi

    wp, _, tris, _ = _scene_arrays(scene.terrain, scene.objects)
    sx, sy, sz, ctris, _, _ = screen_triangles(cam, wp, tris, res, res, cam.near)

    verts, mtris, owner = _merge_meshes(scene.assets.meshes)
    msx, msy, msz, mct, _, src = screen_triangles(cam, verts, mtris, res, res, cam.near * 1e-3)
    order = np.argsort(owner[src], kind="stable")
    offsets = np.searchsorted(owner[src][order], np.arange(len(scene.assets.meshes) + 1))
    rids = np.array([m.region_id for m in scene.assets.meshes], dtype=np.int32)
    mct = np.ascontiguousarray(mct[order])

    edges = np.ascontiguousarray(np.vstack([p.edges() for p in roi.regions]))
    u0, v0, u1, v1 = tex.crs_window
    elig = _eligible(g, ("terrain",))
    decal = scene.assets.decals[0]
    p0, p1 = decal.projector.extent_params

    def scan(k):
        grid = np.zeros((tex.height, tex.width), dtype=np.int32)
        k.scanline_fill(grid, edges, u0, v0, (u1 - u0) / tex.width, (v1 - v0) / tex.height, 1)
        return grid

    def parity(k):
        mask = np.zeros((res, res), dtype=np.int32)
        k.csg_parity(msx, msy, msz, mct, offsets, rids, g.depth, mask)
        return mask

    def decal_pass(k):
        out_id = np.zeros((res, res), dtype=np.int32)
        rgba = np.zeros((res, res, 4), dtype=np.float32)
        k.decal_pass(g.world, elig, decal.projector.basis, decal.projector.orthographic, p0, p1,
                     decal.projector.near, decal.projector.far, decal.texture, 1, out_id, rgba)
        return out_id, rgba

    def pps(k):
        out_id = np.zeros((res, res), dtype=np.int32)
        texel = np.zeros((res, res, 2), dtype=np.int32)
        dist = np.zeros((res, res))
        k.pps_fetch(g.world, g.covered, scene.transform.as_six(), tex.crs_window, tex.packed, out_id, texel, dist)
        return out_id, texel, dist

    rng = np.random.default_rng(0)
    base = rng.random((res * res, 3))
    pix = np.flatnonzero(elig.ravel()).astype(np.int64)
    alpha = rng.uniform(0.2, 0.7, len(pix))
    color = rng.random((len(roi.regions) + 1, 3))
    cidx = rng.integers(0, len(color), len(pix)).astype(np.int64)

    def blend(k):
        out = base.copy()
        k.blend(out, pix, alpha, color, cidx)
        return out

    return {
        "scanline_fill": scan,
        "edt_sq": lambda k: k.edt_sq(tex.id_grid > 0),
        "raster_triangles": lambda k: k.raster_triangles(sx, sy, sz, ctris, cam.near, cam.far, res, res),
        "csg_parity": parity,
        "decal_pass": decal_pass,
        "pps_fetch": pps,
        "blend": blend,
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b, equal_nan=a.dtype.kind == "f")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--resolution", type=int, default=512)
    ap.add_argument("--overlays", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the Python fallback is available")
    scene = generate_bench_scene(args.seed, args.overlays, (args.resolution, args.resolution))
    cases = _cases(scene, args.resolution)

    print(f"{'kernel':<18}" + "".join(f"{name + ' ms':>14}" for name in backends) + f"{'speedup':>10}{'identical':>11}")
    for name, fn in cases.items():
        times, outs = {}, {}
        for bname, mod in backends.items():
            times[bname], outs[bname] = _best(lambda: fn(mod), args.repeat)
        row = f"{name:<18}" + "".join(f"{times[b]:>14.2f}" for b in backends)
        if len(backends) == 2:
            ok = _same(outs["python"], outs["cython"])
            row += f"{times['python'] / times['cython']:>10.1f}{str(ok):>11}"
        print(row)


if __name__ == "__main__":
    main()
