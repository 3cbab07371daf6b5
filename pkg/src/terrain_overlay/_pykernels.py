"""Pure-Python/numpy implementations of the hot kernels.

Each function mirrors the compiled version in ``_ckernels.pyx`` operation by
operation so both backends produce bit-identical integer outputs and, barring
compiler reassociation, identical floating point results.  ``threads`` is
accepted for signature compatibility and ignored.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

BACKEND = "python"

_EPS_REL = 1e-7


def scanline_fill(id_grid, edges, u0, v0, du, dv, rid, threads=1):
    """Write ``rid`` into every pixel whose center is inside the edge set.

    Even-odd rule with the half-open convention: an edge crosses row ``y`` when
    ``(ay > y) != (by > y)`` and a pixel center ``x`` is inside when an odd
    number of crossings lie strictly to its right.
    """
    height, width = id_grid.shape
    if len(edges) == 0:
        return
    ax, ay, bx, by = edges[:, 0], edges[:, 1], edges[:, 2], edges[:, 3]
    cols = np.arange(width, dtype=np.float64)
    xs = u0 + (cols + 0.5) * du
    ylo = np.minimum(ay, by)
    yhi = np.maximum(ay, by)
    for j in range(height):
        y = v0 + (j + 0.5) * dv
        live = (ylo <= y) & (yhi > y)
        sel = live & ((ay > y) != (by > y))
        if not sel.any():
            continue
        a_x, a_y, b_x, b_y = ax[sel], ay[sel], bx[sel], by[sel]
        xint = a_x + (y - a_y) * (b_x - a_x) / (b_y - a_y)
        xint.sort()
        for k in range(0, len(xint) - 1, 2):
            inside = (xs >= xint[k]) & (xs < xint[k + 1])
            id_grid[j, inside] = rid


def edt_sq(sites, threads=1):
    """Squared Euclidean distance from each pixel to the nearest True pixel."""
    sites = np.asarray(sites, dtype=bool)
    if not sites.any():
        return np.full(sites.shape, np.inf)
    d = ndimage.distance_transform_edt(~sites, return_distances=True, return_indices=True)[1]
    jj, ii = np.indices(sites.shape)
    return ((d[0] - jj) ** 2 + (d[1] - ii) ** 2).astype(np.float64)


def _edge(ax, ay, bx, by, px, py):
    """Edge function of a->b, exactly antisymmetric in the endpoints."""
    if ax < bx or (ax == bx and ay < by):
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    return -((ax - bx) * (py - by) - (ay - by) * (px - bx))


def _owned(dx, dy):
    return (dy < 0) | ((dy == 0) & (dx > 0))


def _setup(sx, sy, tris, width, height):
    """Per-triangle screen setup shared by the raster and parity kernels."""
    i0, i1, i2 = tris[:, 0], tris[:, 1], tris[:, 2]
    x0, y0, x1, y1, x2, y2 = sx[i0], sy[i0], sx[i1], sy[i1], sx[i2], sy[i2]
    with np.errstate(invalid="ignore", over="ignore"):
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    swap = area < 0
    lo_x = np.minimum(np.minimum(x0, x1), x2)
    hi_x = np.maximum(np.maximum(x0, x1), x2)
    lo_y = np.minimum(np.minimum(y0, y1), y2)
    hi_y = np.maximum(np.maximum(y0, y1), y2)
    with np.errstate(invalid="ignore"):
        ilo = np.clip(np.floor(lo_x - 0.5), -1, width).astype(np.int64)
        ihi = np.clip(np.ceil(hi_x - 0.5), -1, width).astype(np.int64)
        jlo = np.clip(np.floor(lo_y - 0.5), -1, height).astype(np.int64)
        jhi = np.clip(np.ceil(hi_y - 0.5), -1, height).astype(np.int64)
    ilo = np.maximum(ilo, 0)
    jlo = np.maximum(jlo, 0)
    ihi = np.minimum(ihi, width - 1)
    jhi = np.minimum(jhi, height - 1)
    ok = np.isfinite(area) & (area != 0) & (ilo <= ihi) & (jlo <= jhi)
    return area, swap, ilo, ihi, jlo, jhi, ok


def _coverage(sx, sy, sz, tri, swap, area, ilo, ihi, jlo, jhi):
    """Edge tests and perspective-correct depth over a triangle's pixel box."""
    a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
    if swap:
        b, c = c, b
        area = -area
    xa, ya, xb, yb, xc, yc = sx[a], sy[a], sx[b], sy[b], sx[c], sy[c]
    px = np.arange(ilo, ihi + 1, dtype=np.float64)[None, :] + 0.5
    py = np.arange(jlo, jhi + 1, dtype=np.float64)[:, None] + 0.5
    w0 = _edge(xb, yb, xc, yc, px, py)
    w1 = _edge(xc, yc, xa, ya, px, py)
    w2 = _edge(xa, ya, xb, yb, px, py)
    inside = (
        ((w0 > 0) | ((w0 == 0) & _owned(xc - xb, yc - yb)))
        & ((w1 > 0) | ((w1 == 0) & _owned(xa - xc, ya - yc)))
        & ((w2 > 0) | ((w2 == 0) & _owned(xb - xa, yb - ya)))
    )
    l0 = w0 / area
    l1 = w1 / area
    l2 = w2 / area
    q0 = l0 / sz[a]
    q1 = l1 / sz[b]
    q2 = l2 / sz[c]
    invz = q0 + q1 + q2
    with np.errstate(divide="ignore"):
        depth = 1.0 / invz
    return inside, depth, (q0, q1, q2), (a, b, c)


def raster_triangles(sx, sy, sz, tris, near, far, width, height, threads=1):
    """Depth-buffered rasterization of screen-space triangles.

    Returns ``(tri_index, bary, depth)``; ``tri_index`` is -1 where nothing was
    drawn, ``bary`` holds perspective-correct weights in the triangle's own
    vertex order and ``depth`` is +inf on empty pixels.
    """
    tri_index = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), np.inf)
    if len(tris) == 0:
        return tri_index, bary, zbuf
    area, swap, ilo, ihi, jlo, jhi, ok = _setup(sx, sy, tris, width, height)
    for t in np.flatnonzero(ok):
        inside, depth, q, order = _coverage(
            sx, sy, sz, tris[t], swap[t], area[t], ilo[t], ihi[t], jlo[t], jhi[t]
        )
        win = (slice(jlo[t], jhi[t] + 1), slice(ilo[t], ihi[t] + 1))
        zb = zbuf[win]
        take = inside & (depth < zb) & (depth >= near) & (depth <= far)
        if not take.any():
            continue
        zb[take] = depth[take]
        tri_index[win][take] = t
        # weights stored in the triangle's original vertex slots
        slot = {int(tris[t, k]): k for k in range(3)} if swap[t] else None
        bb = bary[win]
        for k, vid in enumerate(order):
            dst = slot[vid] if slot is not None else k
            bb[..., dst][take] = (q[k] * depth)[take]
    return tri_index, bary, zbuf


def csg_parity(sx, sy, sz, tris, offsets, rids, frag_depth, mask, threads=1):
    """Parity count of shape-mesh triangles in front of each fragment.

    Triangles ``offsets[m]:offsets[m + 1]`` belong to mesh ``m``.  Meshes are
    applied in order; pixels with odd parity for mesh ``m`` receive
    ``rids[m]`` in ``mask`` (in place), so the last odd mesh wins.
    """
    height, width = frag_depth.shape
    for m in range(len(rids)):
        lo, hi = int(offsets[m]), int(offsets[m + 1])
        if hi > lo:
            _mesh_parity(sx, sy, sz, tris[lo:hi], frag_depth, mask, int(rids[m]), width, height)


def _mesh_parity(sx, sy, sz, tris, frag_depth, mask, rid, width, height):
    area, swap, ilo, ihi, jlo, jhi, ok = _setup(sx, sy, tris, width, height)
    if not ok.any():
        return
    bj0, bj1 = jlo[ok].min(), jhi[ok].max()
    bi0, bi1 = ilo[ok].min(), ihi[ok].max()
    parity = np.zeros((bj1 - bj0 + 1, bi1 - bi0 + 1), dtype=np.uint8)
    for t in np.flatnonzero(ok):
        inside, depth, _, _ = _coverage(
            sx, sy, sz, tris[t], swap[t], area[t], ilo[t], ihi[t], jlo[t], jhi[t]
        )
        win = (slice(jlo[t], jhi[t] + 1), slice(ilo[t], ihi[t] + 1))
        frag = frag_depth[win]
        hit = inside & (depth > 0) & np.isfinite(frag) & (depth <= frag * (1.0 + _EPS_REL))
        pw = (slice(jlo[t] - bj0, jhi[t] - bj0 + 1), slice(ilo[t] - bi0, ihi[t] - bi0 + 1))
        parity[pw] ^= hit.astype(np.uint8)
    sub = mask[bj0 : bj1 + 1, bi0 : bi1 + 1]
    sub[parity == 1] = rid


def decal_pass(world, eligible, basis, ortho, p0, p1, near, far, tex, rid, out_id, out_rgba, threads=1):
    """One full-screen projector pass; later calls overwrite earlier samples.

    ``basis`` is a (4, 3) array of position, right, up and forward.  For a
    perspective projector ``p0``/``p1`` are the horizontal/vertical tangent
    half-extents; for orthographic ones they are world half-extents.
    """
    th, tw = tex.shape[:2]
    d = world - basis[0]
    xp = d[..., 0] * basis[1, 0] + d[..., 1] * basis[1, 1] + d[..., 2] * basis[1, 2]
    yp = d[..., 0] * basis[2, 0] + d[..., 1] * basis[2, 1] + d[..., 2] * basis[2, 2]
    zp = d[..., 0] * basis[3, 0] + d[..., 1] * basis[3, 1] + d[..., 2] * basis[3, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        if ortho:
            xn = xp / p0
            yn = yp / p1
        else:
            xn = xp / (zp * p0)
            yn = yp / (zp * p1)
    ok = eligible & (zp >= near) & (zp <= far) & (np.abs(xn) <= 1.0) & (np.abs(yn) <= 1.0)
    u = (1.0 + np.where(ok, xn, 0.0)) * 0.5
    v = (1.0 - np.where(ok, yn, 0.0)) * 0.5
    col = np.minimum((u * tw).astype(np.int64), tw - 1)
    row = np.minimum((v * th).astype(np.int64), th - 1)
    sample = tex[row, col]
    hit = ok & (sample[..., 3] > 0)
    out_id[hit] = rid
    out_rgba[hit] = sample[hit]


def pps_fetch(world, valid, affine, window, texels, out_id, out_texel, out_dist, threads=1):
    """Map world (x, z) to CRS and fetch the containing texel; returns fetch count.

    ``texels`` is the (th, tw, 2) packed (id, distance) texture.
    """
    a, b, c, d, tx, ty = affine
    u0, v0, u1, v1 = window
    th, tw = texels.shape[:2]
    x = world[..., 0]
    z = world[..., 2]
    u = a * x + b * z + tx
    v = c * x + d * z + ty
    fu = (u - u0) / (u1 - u0) * tw
    fv = (v - v0) / (v1 - v0) * th
    inside = valid & (fu >= 0) & (fu < tw) & (fv >= 0) & (fv < th)
    col = np.where(inside, np.floor(np.where(inside, fu, 0.0)), 0).astype(np.int64)
    row = np.where(inside, np.floor(np.where(inside, fv, 0.0)), 0).astype(np.int64)
    col = np.minimum(col, tw - 1)
    row = np.minimum(row, th - 1)
    sample = texels[row, col]
    out_id[...] = np.where(inside, sample[..., 0], 0).astype(np.int32)
    out_texel[..., 0] = np.where(inside, col, -1)
    out_texel[..., 1] = np.where(inside, row, -1)
    out_dist[...] = np.where(inside, sample[..., 1], np.inf)
    return int(world.shape[0] * world.shape[1])


def blend(out, pix, alpha, color, cidx, threads=1):
    """In place ``out[p] = (1 - a) * out[p] + a * color[c]`` over listed pixels.

    ``out`` is the (N, C) flattened image; ``pix``, ``alpha`` and ``cidx`` run in
    parallel, ``cidx`` indexing rows of ``color``.
    """
    a = alpha[:, None]
    out[pix] = (1.0 - a) * out[pix] + a * color[cidx]
