"""Overlay style vocabulary, procedural patterns and alpha compositing.

Pattern geometry is expressed in baked-texture pixels at a 1920-pixel
reference width: stripes are 240 px wide at low density and 120 px at high
density with a 50 % duty cycle; dots have a 240 / 120 px diameter on a square
lattice whose pitch is twice the diameter.  Callers scale the geometry with
``pattern_scale(texture_width)`` when the baked texture has another width.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, MissingStyle

log = logging.getLogger(__name__)

REFERENCE_WIDTH = 1920
FEATURE_SIZE = {"low": 240.0, "high": 120.0}
PATTERNS = ("fill", "stripes", "dots")
_PATTERN_CODE = {name: k for k, name in enumerate(PATTERNS)}


def pattern_scale(texture_width: int) -> float:
    return texture_width / REFERENCE_WIDTH


@dataclass(frozen=True)
class OverlayStyle:
    pattern: str = "fill"
    density: str = "low"
    outline: bool = False
    outline_width: float = 12.0
    color: tuple[float, float, float] = (1.0, 0.85, 0.0)
    opacity: float = 0.45

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.density not in FEATURE_SIZE:
            raise ValueError(f"density must be 'low' or 'high', got {self.density!r}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must lie in [0, 1], got {self.opacity}")
        if self.outline_width < 0:
            raise ValueError("outline_width must be non-negative")
        if len(self.color) != 3 or not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError(f"color must be three fractions in [0, 1], got {self.color!r}")
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    @property
    def feature_size(self) -> float:
        """Stripe width or dot diameter in reference pixels."""
        return FEATURE_SIZE[self.density]

    @classmethod
    def from_dict(cls, d: dict) -> "OverlayStyle":
        known = {"pattern", "density", "outline", "outline_width", "color", "opacity"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown style keys: {sorted(extra)}")
        kw = dict(d)
        if "color" in kw:
            kw["color"] = tuple(kw["color"])
        return cls(**kw)


@dataclass(frozen=True)
class OpacityPolicy:
    min: float = 0.20
    max: float = 0.70
    default: float = 0.45

    def __post_init__(self):
        if not (0.0 <= self.min < self.max <= 1.0):
            raise ValueError(f"need 0 <= min < max <= 1, got [{self.min}, {self.max}]")
        if not (self.min <= self.default <= self.max):
            raise ValueError("default opacity must lie within [min, max]")


DEFAULT_POLICY = OpacityPolicy()


@dataclass(frozen=True)
class ClampWarning:
    requested: float
    applied: float
    region_id: int | None = None

    def __str__(self):
        where = f"region {self.region_id}: " if self.region_id is not None else ""
        return f"{where}opacity {self.requested:g} clamped to {self.applied:g}"


def effective_opacity(requested: float, policy: OpacityPolicy = DEFAULT_POLICY,
                      warnings: list | None = None, region_id: int | None = None) -> float:
    """Clamp ``requested`` into the policy range, recording a ClampWarning if it moved."""
    if not 0.0 <= requested <= 1.0:
        raise ValueError(f"requested opacity must lie in [0, 1], got {requested}")
    applied = min(max(requested, policy.min), policy.max)
    if applied != requested:
        w = ClampWarning(requested, applied, region_id)
        log.warning("%s", w)
        if warnings is not None:
            warnings.append(w)
    return applied


def eval_pattern(style: OverlayStyle, x, y, dist=None, scale: float = 1.0):
    """Pattern coverage (0/1) at texture-pixel coordinates ``(x, y)``.

    ``dist`` is the signed boundary distance in texture pixels (negative
    inside); it only matters when the style has an outline.  Works on scalars
    and arrays alike.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    size = style.feature_size * scale
    if style.pattern == "fill":
        cov = np.ones(np.broadcast(x, y).shape, dtype=bool)
    elif style.pattern == "stripes":
        cov = np.floor(x / size) % 2 == 0
        cov = np.broadcast_to(cov, np.broadcast(x, y).shape)
    else:
        pitch = 2.0 * size
        dx = x - np.round(x / pitch) * pitch
        dy = y - np.round(y / pitch) * pitch
        cov = np.hypot(dx, dy) <= size / 2.0
    if style.outline and dist is not None:
        dist = np.asarray(dist, dtype=np.float64)
        cov = cov | ((dist <= 0) & (np.abs(dist) <= style.outline_width / 2.0))
    if cov.ndim == 0:
        return int(cov)
    return np.asarray(cov, dtype=np.uint8)


def _lookup_tables(styles, max_id: int, present: np.ndarray, policy, clamp, warnings):
    n = max_id + 1
    opacity = np.zeros(n)
    color = np.zeros((n, 3))
    code = np.zeros(n, dtype=np.int64)
    size = np.ones(n)
    outline = np.zeros(n, dtype=bool)
    half_w = np.zeros(n)
    for rid in np.flatnonzero(present):
        if rid == 0:
            continue
        style = _style_for(styles, int(rid))
        a = effective_opacity(style.opacity, policy, warnings, int(rid)) if clamp else style.opacity
        opacity[rid] = a
        color[rid] = style.color
        code[rid] = _PATTERN_CODE[style.pattern]
        size[rid] = style.feature_size
        outline[rid] = style.outline
        half_w[rid] = style.outline_width / 2.0
    return opacity, color, code, size, outline, half_w


def _style_for(styles, rid: int) -> OverlayStyle:
    try:
        return styles[rid]
    except (KeyError, IndexError):
        raise MissingStyle(f"no style for region id {rid}") from None


def coverage_lut(region_id, pattern_xy, dist, code, size, outline, half_w, scale):
    """Vectorized eval_pattern over a whole id image using per-id tables."""
    c = code[region_id]
    cov = c == _PATTERN_CODE["fill"]
    if pattern_xy is not None and (c != 0).any():
        x = pattern_xy[..., 0]
        y = pattern_xy[..., 1]
        s = size[region_id] * scale
        stripes = np.floor(x / s) % 2 == 0
        pitch = 2.0 * s
        dx = x - np.round(x / pitch) * pitch
        dy = y - np.round(y / pitch) * pitch
        dots = np.hypot(dx, dy) <= s / 2.0
        cov = cov | ((c == 1) & stripes) | ((c == 2) & dots)
    if dist is not None:
        ol = outline[region_id]
        if ol.any():
            with np.errstate(invalid="ignore"):
                cov = cov | (ol & (dist <= 0) & (np.abs(dist) <= half_w[region_id]))
    return cov & (region_id > 0)


def composite(base, mask, styles, policy: OpacityPolicy = DEFAULT_POLICY, *, clamp: bool = True,
              warnings: list | None = None, pattern_scale: float = 1.0):
    """Blend overlay samples onto ``base``: out = (1 - a) * base + a * color.

    Masks carrying baked RGBA samples (decals) use the sampled color and
    alpha directly; otherwise coverage comes from the style's pattern.  Pixels
    with region id 0 or zero coverage are copied unchanged.
    """
    base = np.asarray(base, dtype=np.float64)
    rid = mask.region_id
    if base.shape[:2] != rid.shape:
        raise DimensionMismatch(f"base {base.shape[:2]} vs mask {rid.shape}")
    max_id = int(rid.max()) if rid.size else 0
    if max_id == 0:
        return base.copy()
    present = np.bincount(rid.ravel(), minlength=max_id + 1) > 0
    # work only on pixels that carry an id; the rest are copied untouched
    sel = np.flatnonzero(rid.ravel() > 0)
    ids = rid.ravel()[sel]
    if mask.rgba is not None:
        # alpha was baked (and clamped) into the texture
        for r in np.flatnonzero(present[1:]) + 1:
            _style_for(styles, int(r))
        rgba = mask.rgba.reshape(-1, 4)[sel].astype(np.float64)
        cov = np.flatnonzero(rgba[:, 3] > 0)
        alpha = rgba[cov, 3]
        color = np.ascontiguousarray(rgba[:, :3])
        cidx = cov
    else:
        opacity, color, code, size, outline, half_w = _lookup_tables(
            styles, max_id, present, policy, clamp, warnings
        )
        # gathering pattern coordinates only pays off when some style is patterned
        pxy = None
        if mask.pattern_xy is not None and code.any():
            pxy = mask.pattern_xy.reshape(-1, 2)[sel]
        dist = None if mask.dist is None else mask.dist.ravel()[sel]
        cov = np.flatnonzero(coverage_lut(ids, pxy, dist, code, size, outline, half_w, pattern_scale))
        cidx = ids[cov].astype(np.int64)
        alpha = opacity[cidx]
    out = base.copy()
    kernels.blend(out.reshape(-1, base.shape[-1]), sel[cov], alpha, color, cidx)
    return out
