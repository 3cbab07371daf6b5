import json

import numpy as np
import pytest
from PIL import Image

from terrain_overlay.config import SCHEMA_HELP, load_scene, parse_scene
from terrain_overlay.errors import ConfigError

from .conftest import SQUARE, polygon_doc


def base_doc(**kw):
    doc = {
        "schema": 1,
        "terrain": {"type": "flat", "size": [11, 11]},
        "camera": {"position": [5, 20, 5.01], "target": [5, 0, 5]},
        "transform": [1, 0, 0, 1, 0, 0],
        "overlays": [{"geojson": "r.geojson", "styles": {"default": {"color": [1, 0, 0]}}}],
        "resolution": [32, 32],
    }
    doc.update(kw)
    return doc


@pytest.fixture
def wd(tmp_path):
    (tmp_path / "r.geojson").write_text(polygon_doc([[[3, 3], [7, 3], [7, 7], [3, 7], [3, 3]]]))
    return tmp_path


def test_minimal(wd):
    cfg = parse_scene(base_doc(), wd)
    assert cfg.resolution == (32, 32)
    assert cfg.roi.ids == [1]
    assert cfg.camera.aspect == 1.0
    # flat terrain has no height scale; the half-height falls back to one unit
    assert cfg.effective_half_height() == 1.0


def test_all_errors_reported_together(wd):
    doc = base_doc(schema=2, resolution=[4, 4], terrain={"type": "lava"})
    with pytest.raises(ConfigError) as e:
        parse_scene(doc, wd)
    msg = str(e.value)
    assert "schema" in msg and "resolution" in msg and "terrain" in msg


def test_missing_style(wd):
    doc = base_doc(overlays=[{"geojson": "r.geojson", "styles": {}}])
    with pytest.raises(ConfigError, match="style"):
        parse_scene(doc, wd)


def test_missing_geojson(wd):
    doc = base_doc(overlays=[{"geojson": "nope.geojson", "styles": {"default": {}}}])
    with pytest.raises(ConfigError):
        parse_scene(doc, wd)


def test_multiple_files_get_distinct_ids(wd):
    (wd / "b.geojson").write_text(polygon_doc([SQUARE], [[[8, 8], [9, 8], [9, 9], [8, 8]]]))
    doc = base_doc(overlays=[
        {"geojson": "r.geojson", "styles": {"default": {}}},
        {"geojson": "b.geojson", "styles": {"default": {"opacity": 0.3}}},
    ])
    cfg = parse_scene(doc, wd)
    assert cfg.roi.ids == [1, 2, 3]


def test_per_file_transform_reprojected(wd):
    # the second file's CRS is the scene CRS scaled by 10
    (wd / "big.geojson").write_text(polygon_doc([[[30, 30], [70, 30], [70, 70], [30, 70], [30, 30]]]))
    doc = base_doc(overlays=[{"geojson": "big.geojson", "transform": [10, 0, 0, 10, 0, 0], "styles": {"default": {}}}])
    cfg = parse_scene(doc, wd)
    assert cfg.roi.crs_bounds == pytest.approx((3, 3, 7, 7))


def test_png_terrain(wd):
    h = np.zeros((4, 6), dtype=np.uint16)
    h[1, 2] = 65535
    Image.fromarray(h).save(wd / "h.png")
    cfg = parse_scene(base_doc(terrain={"type": "png", "path": "h.png", "height_range": [0, 10]}), wd)
    # column = x, row = z
    assert cfg.terrain.heights.shape == (6, 4)
    assert cfg.terrain.heights[2, 1] == pytest.approx(10.0)


def test_orbit_camera(wd):
    doc = base_doc(camera={"orbit": {"target": [5, 0, 5], "distance": 30, "elevation": 40, "azimuth": 10}},
                   resolution=[64, 32])
    cfg = parse_scene(doc, wd)
    assert cfg.camera.elevation_deg() == pytest.approx(40)
    assert cfg.camera.aspect == 2.0


def test_load_scene_errors(tmp_path):
    with pytest.raises(ConfigError, match="no such input"):
        load_scene(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_scene(tmp_path / "bad.json")


def test_load_scene_resolves_relative_paths(wd):
    (wd / "s.json").write_text(json.dumps(base_doc()))
    assert load_scene(wd / "s.json").roi.ids == [1]


def test_help_documents_units():
    assert '"schema": 1' in SCHEMA_HELP and "world" in SCHEMA_HELP
