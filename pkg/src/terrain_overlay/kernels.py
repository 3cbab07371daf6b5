"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise the numpy
implementations in ``_pykernels`` are used.  Setting ``OVERLAY_PURE_PYTHON=1``
forces the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("OVERLAY_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.BACKEND

scanline_fill = _impl.scanline_fill
edt_sq = _impl.edt_sq
raster_triangles = _impl.raster_triangles
csg_parity = _impl.csg_parity
decal_pass = _impl.decal_pass
pps_fetch = _impl.pps_fetch
blend = _impl.blend


def available_backends() -> dict:
    """Map backend name to kernel module for every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
