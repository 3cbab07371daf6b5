"""Glue between baking, the overlay techniques and compositing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingStyle
from .geo_ingest import RoiSet, WorldCrsTransform
from .overlay_techniques import (
    DEFAULT_DECAL_LAYERS,
    Decal,
    OverlayMask,
    PatternFrame,
    apply_decals,
    build_decals,
    csg_mask,
    polygons_by_id,
    pps_lookup,
)
from .scene_raster import Camera, GBuffer
from .shape_bake import RoiTexture, ShapeMesh, bake_style_texture, default_window, extrude_roi_set, rasterize_roi
from .style_composite import DEFAULT_POLICY, OpacityPolicy, OverlayStyle, composite, effective_opacity, pattern_scale

TECHNIQUES = ("csg", "decal", "pps")


def resolve_styles(roi: RoiSet, styles, policy: OpacityPolicy = DEFAULT_POLICY, *, clamp: bool = True,
                   warnings: list | None = None, default: OverlayStyle | None = None) -> dict[int, OverlayStyle]:
    """Per-region styles with the effective (possibly clamped) opacity applied.

    ``styles`` maps region id to OverlayStyle; ids without an entry use
    ``default`` when given.
    """
    out = {}
    for region in roi.regions:
        rid = region.region_id
        style = styles.get(rid, default) if hasattr(styles, "get") else styles[rid]
        if style is None:
            raise MissingStyle(f"no style for region id {rid}")
        if clamp:
            a = effective_opacity(style.opacity, policy, warnings, rid)
            style = OverlayStyle(style.pattern, style.density, style.outline, style.outline_width, style.color, a)
        out[rid] = style
    return out


@dataclass(eq=False)
class OverlayAssets:
    roi: RoiSet
    transform: WorldCrsTransform
    styles: dict[int, OverlayStyle]
    texture: RoiTexture
    meshes: list[ShapeMesh] = field(default_factory=list)
    style_rgba: np.ndarray | None = None
    decals: list[Decal] = field(default_factory=list)
    y_range: tuple[float, float] = (-1.0, 1.0)

    @property
    def frame(self) -> PatternFrame:
        return PatternFrame.of(self.texture, self.transform)

    @property
    def needs_pattern(self) -> bool:
        return any(s.pattern != "fill" or s.outline for s in self.styles.values())


def bake_assets(roi: RoiSet, transform: WorldCrsTransform, styles: dict[int, OverlayStyle], *,
                texture_size=(1024, 1024), half_height: float, y_range: tuple[float, float],
                window=None, threads: int = 1, techniques=TECHNIQUES) -> OverlayAssets:
    """Bake every asset the requested techniques need from one RoiSet.

    ``styles`` must already be resolved (see resolve_styles); opacity is not
    clamped again here.
    """
    window = default_window(roi) if window is None else window
    tw, th = texture_size
    texture = rasterize_roi(roi, window, tw, th, threads)
    assets = OverlayAssets(roi, transform, styles, texture, y_range=tuple(y_range))
    if "csg" in techniques:
        assets.meshes = extrude_roi_set(roi, transform, half_height)
    if "decal" in techniques:
        assets.style_rgba = bake_style_texture(texture, styles, clamp=False)
        assets.decals = build_decals(texture, transform, y_range[0], y_range[1], assets.style_rgba)
    return assets


def overlay_mask(technique: str, g: GBuffer, cam: Camera, assets: OverlayAssets, threads: int = 1,
                 decal_layers=DEFAULT_DECAL_LAYERS) -> OverlayMask:
    if technique == "csg":
        outline = {rid: p for rid, p in polygons_by_id(assets.roi).items() if assets.styles[rid].outline}
        frame = assets.frame if assets.needs_pattern else None
        return csg_mask(g, assets.meshes, cam, threads, frame=frame, outline_polygons=outline or None)
    if technique == "decal":
        return apply_decals(g, assets.decals, decal_layers, threads)
    if technique == "pps":
        return pps_lookup(g, assets.transform, assets.texture, threads)
    raise ValueError(f"unknown technique {technique!r}; expected one of {TECHNIQUES}")


def render_technique(technique: str, g: GBuffer, base: np.ndarray, cam: Camera, assets: OverlayAssets,
                     threads: int = 1, decal_layers=DEFAULT_DECAL_LAYERS):
    """Overlay phase for one frame: mask computation followed by compositing."""
    mask = overlay_mask(technique, g, cam, assets, threads, decal_layers)
    img = composite(base, mask, assets.styles, clamp=False, pattern_scale=pattern_scale(assets.texture.width))
    return img, mask


def footprint_mask(technique: str, g: GBuffer, cam: Camera, assets: OverlayAssets, threads: int = 1,
                   decal_layers=DEFAULT_DECAL_LAYERS) -> OverlayMask:
    """Region membership ignoring patterns (decals sample bare footprints)."""
    if technique == "decal":
        decals = build_decals(assets.texture, assets.transform, *assets.y_range)
        return apply_decals(g, decals, decal_layers, threads)
    return overlay_mask(technique, g, cam, assets, threads, decal_layers)


@dataclass
class RenderResult:
    image: np.ndarray
    mask: OverlayMask
    gbuffer: GBuffer
    assets: OverlayAssets
    warnings: list
    timings_ms: dict


def scene_assets(cfg, techniques=TECHNIQUES, *, clamp: bool | None = None, threads: int = 1,
                 warnings: list | None = None) -> OverlayAssets:
    """Resolve every overlay file's styles under its own policy and bake once."""
    clamp = cfg.clamp if clamp is None else clamp
    styles = {}
    for src in cfg.overlays:
        styles.update(resolve_styles(src.roi, src.styles, src.policy, clamp=clamp, warnings=warnings))
    roi = cfg.roi
    tw, th = cfg.texture_resolution
    return bake_assets(
        roi, cfg.transform, styles, texture_size=(tw, th), half_height=cfg.effective_half_height(),
        y_range=cfg.y_range(), window=cfg.texture_window, threads=threads, techniques=techniques,
    )


def render_config(cfg, technique: str, *, clamp: bool | None = None, threads: int = 1) -> RenderResult:
    """Full pipeline for one technique: bake, rasterize, overlay, composite."""
    from time import perf_counter

    from .scene_raster import rasterize_scene, shade_base

    if technique not in TECHNIQUES:
        raise ValueError(f"unknown technique {technique!r}; expected one of {TECHNIQUES}")
    warnings: list = []
    t0 = perf_counter()
    assets = scene_assets(cfg, (technique,), clamp=clamp, threads=threads, warnings=warnings)
    t1 = perf_counter()
    w, h = cfg.resolution
    g = rasterize_scene(cfg.terrain, cfg.objects, cfg.camera, w, h, threads)
    base = shade_base(g, cfg.sun_direction, cfg.sun_intensity, cfg.ambient)
    t2 = perf_counter()
    mask = overlay_mask(technique, g, cfg.camera, assets, threads, cfg.decal_layers)
    t3 = perf_counter()
    img = composite(base, mask, assets.styles, clamp=False, pattern_scale=pattern_scale(assets.texture.width))
    t4 = perf_counter()
    timings = {"bake": (t1 - t0) * 1e3, "raster": (t2 - t1) * 1e3, "overlay": (t3 - t2) * 1e3, "composite": (t4 - t3) * 1e3}
    return RenderResult(img, mask, g, assets, warnings, timings)
