import hashlib
import json

import numpy as np
import pytest

from terrain_overlay.cli import main
from terrain_overlay.config import load_scene
from terrain_overlay.io_formats import decode_ppm, read_obj, to_uint8
from terrain_overlay.scene_raster import rasterize_scene, shade_base
from terrain_overlay.shape_bake import is_closed_manifold

from .conftest import polygon_doc

SQ = [[3, 3], [7, 3], [7, 7], [3, 7], [3, 3]]


def run(argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as e:  # argparse usage errors
        return e.code


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def scene(tmp_path):
    (tmp_path / "r.geojson").write_text(polygon_doc([SQ]))
    doc = {
        "schema": 1,
        "terrain": {"type": "flat", "size": [11, 11]},
        "camera": {"position": [5, 25, 5.01], "target": [5, 0, 5], "fov_y": 30},
        "transform": [1, 0, 0, 1, 0, 0],
        "overlays": [{"geojson": "r.geojson", "styles": {"default": {"color": [1, 0, 0], "opacity": 0.45}}}],
        "resolution": [48, 48],
        "texture_resolution": [128, 128],
    }
    (tmp_path / "s.json").write_text(json.dumps(doc))
    return tmp_path


def test_render_pps_analytic_blend(scene, capsys):
    out = scene / "o.ppm"
    assert run(["render", scene / "s.json", "--technique", "pps", "--out", out]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fetches"] == 48 * 48
    img = decode_ppm(out.read_bytes())
    cfg = load_scene(scene / "s.json")
    g = rasterize_scene(cfg.terrain, cfg.objects, cfg.camera, 48, 48)
    base = shade_base(g, cfg.sun_direction, cfg.sun_intensity, cfg.ambient)
    world = g.world
    inside = g.covered & (np.abs(world[..., 0] - 5) < 1.8) & (np.abs(world[..., 2] - 5) < 1.8)
    outside = g.covered & ((np.abs(world[..., 0] - 5) > 2.2) | (np.abs(world[..., 2] - 5) > 2.2))
    assert inside.any() and outside.any()
    expect = 0.55 * base + 0.45 * np.array([1.0, 0.0, 0.0])
    assert np.array_equal(img[inside], to_uint8(expect[inside]))
    assert np.array_equal(img[outside], to_uint8(base[outside]))


@pytest.mark.parametrize("tech", ["csg", "decal", "pps"])
def test_render_all_techniques_png(scene, tech, capsys):
    assert run(["render", scene / "s.json", "--technique", tech, "--out", scene / f"{tech}.png",
                "--mask", scene / f"{tech}_mask.png"]) == 0
    assert (scene / f"{tech}.png").exists() and (scene / f"{tech}_mask.png").exists()


def test_render_deterministic(scene):
    for k in (1, 2):
        assert run(["render", scene / "s.json", "--technique", "csg", "--out", scene / f"{k}.ppm"]) == 0
    assert sha(scene / "1.ppm") == sha(scene / "2.ppm")


def test_render_usage_errors(scene, capsys):
    assert run(["render", scene / "s.json", "--technique", "foo", "--out", scene / "x.ppm"]) == 2
    assert run(["render", scene / "s.json", "--technique", "pps", "--out", scene / "x.jpg"]) == 2
    assert run(["render", scene / "nope.json", "--technique", "pps", "--out", scene / "x.ppm"]) == 2
    assert "no such input" in capsys.readouterr().err
    assert not (scene / "x.ppm").exists()


def test_invalid_config_writes_nothing(scene):
    doc = json.loads((scene / "s.json").read_text())
    doc["resolution"] = [2, 2]
    (scene / "bad.json").write_text(json.dumps(doc))
    assert run(["render", scene / "bad.json", "--technique", "pps", "--out", scene / "bad.ppm"]) == 2
    assert not (scene / "bad.ppm").exists()


def test_bake(scene, capsys):
    out = scene / "baked"
    assert run(["bake", scene / "r.geojson", "--resolution", "64x64", "--half-height", "50", "--out", out]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["roi_ids.json", "roi_ids.png", "shapes.obj", "style.png"]
    (mesh,) = read_obj(out / "shapes.obj")
    assert is_closed_manifold(mesh.triangles)
    first = {n: sha(out / n) for n in names}
    assert run(["bake", scene / "r.geojson", "--resolution", "64x64", "--half-height", "50", "--out", out]) == 0
    assert {n: sha(out / n) for n in names} == first


def test_bake_missing_file(tmp_path, capsys):
    assert run(["bake", tmp_path / "missing.geojson", "--out", tmp_path / "o"]) == 2
    assert "no such input" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bake_bad_geometry_is_runtime_error(tmp_path, capsys):
    (tmp_path / "bad.geojson").write_text('{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}')
    assert run(["bake", tmp_path / "bad.geojson", "--out", tmp_path / "o"]) == 1
    assert not (tmp_path / "o").exists()


def test_compare(scene, capsys):
    assert run(["compare", scene / "s.json", "pps", "pps"]) == 0
    same = json.loads(capsys.readouterr().out)
    assert same["iou"] == 1.0 and same["differing_pixels"] == 0
    assert run(["compare", scene / "s.json", "csg", "pps", "--diff", scene / "d.png"]) == 0
    cross = json.loads(capsys.readouterr().out)
    assert cross["iou"] >= 0.95
    assert (scene / "d.png").exists()


def test_bench_cli(tmp_path, capsys):
    csv_path = tmp_path / "b.csv"
    assert run(["bench", "--csv", csv_path, "--counts", "1,2,4", "--frames", "10", "--resolution", "32x32",
                "--slopes", tmp_path / "s.csv"]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "technique,overlays,frame,ms"
    assert len(lines) - 1 == 3 * 3 * 10
    assert (tmp_path / "b.json").exists() and (tmp_path / "s.csv").exists()
    assert "ordering" in capsys.readouterr().out


def test_bench_cli_usage(tmp_path):
    assert run(["bench", "--csv", tmp_path / "b.csv", "--frames", "3"]) == 2
    assert run(["bench", "--csv", tmp_path / "b.csv", "--counts", "1,x"]) == 2
    assert run(["bench"]) == 2


def test_threads_env_default(scene, monkeypatch, capsys):
    monkeypatch.setenv("OVERLAY_THREADS", "3")
    assert run(["render", scene / "s.json", "--technique", "pps", "--out", scene / "t.ppm"]) == 0
    assert json.loads(capsys.readouterr().out)["threads"] == 3
