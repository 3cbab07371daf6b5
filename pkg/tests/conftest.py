import json

import numpy as np
import pytest

from terrain_overlay import kernels

KERNEL_NAMES = ("scanline_fill", "edt_sq", "raster_triangles", "csg_parity", "decal_pass", "pps_fetch", "blend")


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    mod = kernels.available_backends()[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    monkeypatch.setattr(kernels, "BACKEND", mod.BACKEND)
    return request.param


def star_polygon(rng, center=(0.5, 0.5), radius=0.35, n=16):
    """Closed ring of a random star-shaped (hence simple) polygon."""
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        ang = ang[np.concatenate([[True], np.diff(ang) > 1e-3])]
        # a gap of half a turn or more leaves the center outside and the ring can cross itself
        if len(ang) >= 3 and np.diff(ang, append=ang[0] + 2 * np.pi).max() < np.pi:
            break
    r = radius * rng.uniform(0.35, 1.0, len(ang))
    pts = np.column_stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)])
    return np.vstack([pts, pts[:1]])


def polygon_doc(*rings_list):
    """FeatureCollection text, one Polygon feature per ring list."""
    feats = [
        {"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [np.asarray(r).tolist() for r in rings]}}
        for rings in rings_list
    ]
    return json.dumps({"type": "FeatureCollection", "features": feats})


SQUARE = [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]
