import numpy as np
import pytest
import shapely

from terrain_overlay.bench_compare import mask_iou
from terrain_overlay.errors import CameraInsideSolid, OpenMesh
from terrain_overlay.geo_ingest import IDENTITY, RoiPolygon, WorldCrsTransform, make_roi_set, normalize_ring
from terrain_overlay.overlay_techniques import (
    Projector,
    apply_decal,
    build_decals,
    csg_mask,
    decal_uv,
    pps_lookup,
    projector_for_window,
)
from terrain_overlay.scene_raster import LAYER_OBJECT, Camera, cone, flat_heightfield, rasterize_scene
from terrain_overlay.shape_bake import extrude_roi_set, rasterize_roi


def region(ext, rid=1):
    return RoiPolygon(normalize_ring(np.asarray(ext, dtype=float), hole=False), (), rid)


SQUARE = region([[3, 3], [7, 3], [7, 7], [3, 7], [3, 3]])


def flat_scene(w=64, h=64, objects=()):
    terrain = flat_heightfield(11, 11)
    cam = Camera.look_at((5, 30, 5), (5, 0, 5), up=(0, 0, -1), fov_y=25)
    return terrain, cam, rasterize_scene(terrain, list(objects), cam, w, h)


def shapely_mask(g, regs, t=IDENTITY):
    """Independent membership oracle on G-buffer world positions."""
    out = np.zeros((g.height, g.width), dtype=np.int32)
    sel = g.covered
    crs = t.crs_from_world(g.world[sel][:, [0, 2]])
    ids = np.zeros(len(crs), dtype=np.int32)
    for r in regs:
        ids[shapely.contains_xy(shapely.Polygon(r.exterior), crs[:, 0], crs[:, 1])] = r.region_id
    out[sel] = ids
    return out


def near_boundary(ref, px=1):
    edge = np.zeros_like(ref, dtype=bool)
    dx = ref[:, 1:] != ref[:, :-1]
    dy = ref[1:] != ref[:-1]
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    edge[1:] |= dy
    edge[:-1] |= dy
    grow = edge.copy()
    for _ in range(px - 1):
        g = grow.copy()
        g[1:] |= grow[:-1]
        g[:-1] |= grow[1:]
        g[:, 1:] |= grow[:, :-1]
        g[:, :-1] |= grow[:, 1:]
        grow = g
    return grow


def test_csg_matches_oracle_top_down(backend):
    _, cam, g = flat_scene()
    m = csg_mask(g, extrude_roi_set(make_roi_set([SQUARE]), IDENTITY, 5.0), cam)
    ref = shapely_mask(g, [SQUARE])
    far = ~near_boundary(ref)
    assert np.array_equal(m.region_id[far], ref[far])
    assert mask_iou(m, ref) > 0.97


def test_csg_outside_is_zero(backend):
    _, cam, g = flat_scene()
    far_away = region([[50, 50], [51, 50], [51, 51], [50, 50]])
    m = csg_mask(g, extrude_roi_set(make_roi_set([far_away]), IDENTITY, 5.0), cam)
    assert not m.covered.any()


def test_csg_last_region_wins(backend):
    _, cam, g = flat_scene()
    a = region([[2, 2], [6, 2], [6, 6], [2, 6], [2, 2]], 1)
    b = region([[4, 4], [8, 4], [8, 8], [4, 8], [4, 4]], 2)
    m = csg_mask(g, extrude_roi_set(make_roi_set([a, b]), IDENTITY, 5.0), cam)
    ref = shapely_mask(g, [a, b])
    far = ~near_boundary(ref)
    assert np.array_equal(m.region_id[far], ref[far])
    assert (m.region_id == 2).sum() > (m.region_id == 1).sum() // 2


def test_csg_covers_objects_inside_prism(backend):
    c = cone((5, 5), 0.0, 1.0, 3.0)
    _, cam, g = flat_scene(objects=[c])
    m = csg_mask(g, extrude_roi_set(make_roi_set([SQUARE]), IDENTITY, 5.0), cam)
    obj = g.layer == LAYER_OBJECT
    assert obj.any() and np.all(m.region_id[obj] == 1)


def test_csg_rejects_open_mesh():
    _, cam, g = flat_scene()
    (mesh,) = extrude_roi_set(make_roi_set([SQUARE]), IDENTITY, 5.0)
    broken = type(mesh)(mesh.vertices, mesh.triangles[:-1], mesh.region_id, mesh.half_height)
    with pytest.raises(OpenMesh):
        csg_mask(g, [broken], cam)


def test_csg_camera_inside_solid():
    _, _, g = flat_scene()
    cam = Camera.look_at((5, 2, 5), (5, 0, 4), fov_y=60)
    with pytest.raises(CameraInsideSolid):
        csg_mask(g, extrude_roi_set(make_roi_set([SQUARE]), IDENTITY, 5.0), cam)


def test_csg_threads_identical():
    _, cam, g = flat_scene(96, 80)
    meshes = extrude_roi_set(make_roi_set([SQUARE]), IDENTITY, 5.0)
    assert np.array_equal(csg_mask(g, meshes, cam, 1).region_id, csg_mask(g, meshes, cam, 4).region_id)


# --- decals -----------------------------------------------------------------------------


def test_decal_uv_ortho_center():
    proj = Projector((0.5, 10, 0.5), (0, -1, 0), (0, 0, -1), orthographic=True, half_extents=(0.5, 0.5), near=0.1, far=20)
    assert decal_uv(proj, (0.5, 0.0, 0.5)) == pytest.approx((0.5, 0.5))
    assert decal_uv(proj, (0.5, -15.0, 0.5)) is None
    assert decal_uv(proj, (2.0, 0.0, 0.5)) is None


def test_decal_uv_perspective_edge():
    proj = Projector((0, 1, 0), (0, -1, 0), (0, 0, -1), fov_y=90, near=0.1, far=10)
    u, v = decal_uv(proj, (1.0, 0.0, 0.0))
    assert u == pytest.approx(1.0) and v == pytest.approx(0.5)


def test_window_projector_maps_texture_layout():
    t = WorldCrsTransform.scale_translate(2.0, 100.0, 50.0)
    proj = projector_for_window(t, (100, 50, 120, 60), -1, 1)
    # CRS (u0, v0) is texture column 0, row 0; decal v runs down the image, i.e. along +row
    lo = t.world_from_crs(np.array([100.0, 50.0]))
    u, v = decal_uv(proj, (lo[0] + 1e-9, 0.0, lo[1] + 1e-9))
    assert u == pytest.approx(0.0, abs=1e-6) and v == pytest.approx(0.0, abs=1e-6)


def test_transparent_decal_leaves_mask_empty(backend):
    _, _, g = flat_scene()
    proj = projector_for_window(IDENTITY, (0, 0, 10, 10), -1, 1)
    m = apply_decal(g, proj, np.zeros((4, 4, 4), dtype=np.float32))
    assert not m.covered.any()


def test_decal_skips_objects_by_default(backend):
    c = cone((5, 5), 0.0, 1.0, 3.0)
    _, cam, g = flat_scene(objects=[c])
    tex = rasterize_roi(make_roi_set([SQUARE]), (0, 0, 10, 10), 100, 100)
    decals = build_decals(tex, IDENTITY, -1.0, 4.0)
    proj = decals[0]
    terrain_only = apply_decal(g, proj.projector, proj.texture, region_id=1)
    obj = g.layer == LAYER_OBJECT
    assert not terrain_only.covered[obj].any()
    everything = apply_decal(g, proj.projector, proj.texture, layers=("terrain", "object"), region_id=1)
    assert everything.covered[obj].all()


def test_decal_matches_texture_footprint(backend):
    _, cam, g = flat_scene()
    tex = rasterize_roi(make_roi_set([SQUARE]), (0, 0, 10, 10), 200, 200)
    (d,) = build_decals(tex, IDENTITY, -1.0, 1.0)
    m = apply_decal(g, d.projector, d.texture, region_id=1)
    ref = shapely_mask(g, [SQUARE])
    far = ~near_boundary(ref)
    assert np.array_equal(m.region_id[far], ref[far])


# --- pps ------------------------------------------------------------------------------


def test_pps_examples(backend):
    _, cam, g = flat_scene()
    unit = region([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])
    tex = rasterize_roi(make_roi_set([unit]), (0, 0, 1, 1), 4, 4)
    m = pps_lookup(g, IDENTITY, tex)
    inside = g.covered & (np.abs(g.world[..., 0] - 0.5) < 0.45) & (np.abs(g.world[..., 2] - 0.5) < 0.45)
    outside = g.covered & ((g.world[..., 0] > 1.01) | (g.world[..., 2] > 1.01))
    assert inside.any() and np.all(m.region_id[inside] == 1)
    assert np.all(m.region_id[outside] == 0)


def test_pps_one_fetch_per_pixel(backend):
    _, _, g = flat_scene(40, 30)
    for n in (1, 5):
        regs = [region([[k, 0], [k + 0.9, 0], [k + 0.9, 9], [k, 0]], k + 1) for k in range(n)]
        m = pps_lookup(g, IDENTITY, rasterize_roi(make_roi_set(regs), (0, 0, 10, 10), 64, 64))
        assert m.fetches == 40 * 30


def test_pps_nearest_texel_oracle(backend):
    _, _, g = flat_scene()
    t = WorldCrsTransform.from_six([2, 0, 0, 2, 100, 200])
    reg = region(t.crs_from_world(np.array([[3, 3], [7, 3.5], [5, 7], [3, 3]])))
    tex = rasterize_roi(make_roi_set([reg]), (104, 204, 116, 216), 37, 29)
    m = pps_lookup(g, t, tex)
    crs = t.crs_from_world(g.world[..., [0, 2]][g.covered])
    du, dv = tex.texel_size
    i = np.floor((crs[:, 0] - 104) / du).astype(int)
    j = np.floor((crs[:, 1] - 204) / dv).astype(int)
    ok = (i >= 0) & (i < 37) & (j >= 0) & (j < 29)
    expect = np.zeros(len(crs), dtype=np.int32)
    expect[ok] = tex.id_grid[j[ok], i[ok]]
    assert np.array_equal(m.region_id[g.covered], expect)
