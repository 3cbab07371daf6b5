"""Patterned region-of-interest overlays on a software-rendered terrain.

Three overlay techniques (image-space CSG parity, decal projection and
post-process world-space sampling) share one GeoJSON ingestion and baking
pipeline so their output and cost can be compared directly.
"""

from .errors import OverlayError
from .geo_ingest import RoiPolygon, RoiSet, WorldCrsTransform, crs_from_world, load_geojson, parse_geojson, world_from_crs
from .kernels import BACKEND
from .overlay_techniques import OverlayMask, Projector, apply_decal, csg_mask, decal_uv, pps_lookup
from .scene_raster import Camera, GBuffer, Heightfield, project, rasterize_scene, shade_base
from .shape_bake import RoiTexture, ShapeMesh, bake_style_texture, extrude_polygon, point_in_polygon, rasterize_roi, triangulate_cap
from .style_composite import OpacityPolicy, OverlayStyle, composite, effective_opacity, eval_pattern

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Camera", "GBuffer", "Heightfield", "OpacityPolicy", "OverlayError", "OverlayMask", "OverlayStyle",
    "Projector", "RoiPolygon", "RoiSet", "RoiTexture", "ShapeMesh", "WorldCrsTransform", "apply_decal",
    "bake_style_texture", "composite", "crs_from_world", "csg_mask", "decal_uv", "effective_opacity", "eval_pattern",
    "extrude_polygon", "load_geojson", "parse_geojson", "point_in_polygon", "pps_lookup", "project",
    "rasterize_roi", "rasterize_scene", "shade_base", "triangulate_cap", "world_from_crs",
]
