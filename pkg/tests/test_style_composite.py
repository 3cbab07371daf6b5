import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrain_overlay.errors import DimensionMismatch, MissingStyle
from terrain_overlay.overlay_techniques import OverlayMask
from terrain_overlay.style_composite import (
    DEFAULT_POLICY,
    ClampWarning,
    OpacityPolicy,
    OverlayStyle,
    composite,
    effective_opacity,
    eval_pattern,
    pattern_scale,
)


def full_mask(h, w, rid=1):
    return OverlayMask(w, h, np.full((h, w), rid, dtype=np.int32))


def test_opacity_policy_defaults():
    assert (DEFAULT_POLICY.min, DEFAULT_POLICY.max) == (0.20, 0.70)


@pytest.mark.parametrize("req,applied,warned", [(0.45, 0.45, False), (0.05, 0.20, True), (0.90, 0.70, True),
                                                (0.20, 0.20, False), (0.70, 0.70, False)])
def test_effective_opacity(req, applied, warned):
    w = []
    assert effective_opacity(req, warnings=w) == applied
    assert bool(w) == warned
    if warned:
        assert isinstance(w[0], ClampWarning) and w[0].applied == applied


def test_effective_opacity_rejects_out_of_range():
    with pytest.raises(ValueError):
        effective_opacity(1.5)


def test_bad_policy():
    with pytest.raises(ValueError):
        OpacityPolicy(0.8, 0.3)


@pytest.mark.parametrize("kw", [{"pattern": "zigzag"}, {"density": "medium"}, {"opacity": 1.2}, {"color": (2, 0, 0)}])
def test_bad_style(kw):
    with pytest.raises(ValueError):
        OverlayStyle(**kw)


def test_fill_pattern():
    s = OverlayStyle("fill")
    assert eval_pattern(s, 12345.6, -7.0) == 1


def test_stripes_high_density():
    s = OverlayStyle("stripes", density="high")
    assert eval_pattern(s, 60, 0) == 1
    assert eval_pattern(s, 180, 0) == 0


def test_dots_low_density():
    s = OverlayStyle("dots", density="low")
    assert eval_pattern(s, 480, 960) == 1
    assert eval_pattern(s, 240, 240) == 0  # cell corner, 339 px from the nearest center
    assert eval_pattern(s, 480 + 119, 960) == 1
    assert eval_pattern(s, 480 + 121, 960) == 0


def test_pattern_scale_stretches_features():
    s = OverlayStyle("stripes", density="low")
    k = pattern_scale(3840)
    assert k == 2.0
    assert eval_pattern(s, 479, 0, scale=k) == 1
    assert eval_pattern(s, 481, 0, scale=k) == 0


def test_outline_inside_only():
    s = OverlayStyle("stripes", density="low", outline=True, outline_width=12.0)
    x = np.full(4, 300.0)  # stripe gap
    d = np.array([-0.5, -6.0, -6.5, 0.5])
    assert eval_pattern(s, x, 0 * x, d).tolist() == [1, 1, 0, 0]


def _coverage_fraction(style, n, scale):
    c = np.arange(n) + 0.5
    x, y = np.meshgrid(c, c)
    return eval_pattern(style, x, y, scale=scale).mean()


@pytest.mark.parametrize("density", ["low", "high"])
def test_coverage_fractions(density):
    k = pattern_scale(4096)
    assert abs(_coverage_fraction(OverlayStyle("stripes", density=density), 4096, k) - 0.5) <= 0.01 * 0.5
    assert abs(_coverage_fraction(OverlayStyle("dots", density=density), 4096, k) - math.pi / 16) <= 0.01 * math.pi / 16


def test_composite_example():
    base = np.full((2, 2, 3), 0.2)
    out = composite(base, full_mask(2, 2), {1: OverlayStyle("fill", color=(1, 0, 0), opacity=0.5)}, clamp=False)
    assert np.allclose(out, (0.6, 0.1, 0.1), rtol=0, atol=1e-15)


def test_composite_identities():
    rng = np.random.default_rng(1)
    base = rng.uniform(size=(16, 16, 3))
    mask = full_mask(16, 16)
    zero = composite(base, mask, {1: OverlayStyle(color=(0.3, 0.6, 0.9), opacity=0.0)}, clamp=False)
    assert np.array_equal(zero, base)
    one = composite(base, mask, {1: OverlayStyle(color=(0.3, 0.6, 0.9), opacity=1.0)}, clamp=False)
    assert np.array_equal(one, np.broadcast_to((0.3, 0.6, 0.9), base.shape))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=3, max_size=3),
    st.lists(st.floats(0, 1), min_size=3, max_size=3),
    st.floats(0, 1),
)
def test_composite_is_convex(b, c, a):
    base = np.array(b, dtype=np.float64).reshape(1, 1, 3)
    out = composite(base, full_mask(1, 1), {1: OverlayStyle(color=tuple(c), opacity=a)}, clamp=False)[0, 0]
    lo = np.minimum(b, c)
    hi = np.maximum(b, c)
    ulp = np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
    assert np.all(out >= lo - ulp) and np.all(out <= hi + ulp)


def test_uncovered_pixels_untouched():
    rng = np.random.default_rng(2)
    base = rng.uniform(size=(8, 8, 3))
    rid = np.zeros((8, 8), dtype=np.int32)
    rid[2:5, 3:6] = 1
    out = composite(base, OverlayMask(8, 8, rid), {1: OverlayStyle()})
    assert np.array_equal(out[rid == 0], base[rid == 0])
    assert not np.array_equal(out[rid == 1], base[rid == 1])


def test_composite_clamps_by_default():
    base = np.zeros((1, 1, 3))
    warnings = []
    out = composite(base, full_mask(1, 1), {1: OverlayStyle(color=(1, 1, 1), opacity=1.0)}, warnings=warnings)
    assert np.allclose(out, 0.7)
    assert len(warnings) == 1


def test_composite_uses_decal_samples():
    base = np.full((1, 2, 3), 0.5)
    rgba = np.array([[[1, 0, 0, 0.5], [0, 0, 0, 0]]], dtype=np.float32)
    mask = OverlayMask(2, 1, np.array([[1, 0]], dtype=np.int32), rgba=rgba)
    out = composite(base, mask, {1: OverlayStyle()})
    assert np.allclose(out[0, 0], (0.75, 0.25, 0.25))
    assert np.array_equal(out[0, 1], base[0, 1])


def test_composite_errors():
    with pytest.raises(DimensionMismatch):
        composite(np.zeros((3, 3, 3)), full_mask(2, 2), {1: OverlayStyle()})
    with pytest.raises(MissingStyle):
        composite(np.zeros((2, 2, 3)), full_mask(2, 2, rid=4), {1: OverlayStyle()})


def test_pattern_in_composite_uses_mask_coordinates():
    base = np.zeros((1, 2, 3))
    mask = full_mask(1, 2)
    mask.pattern_xy = np.array([[[60.0, 0.0], [180.0, 0.0]]])
    out = composite(base, mask, {1: OverlayStyle("stripes", density="high", color=(1, 1, 1), opacity=0.5)})
    assert np.allclose(out[0, 0], 0.5) and np.all(out[0, 1] == 0)
