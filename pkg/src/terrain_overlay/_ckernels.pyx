# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel
from libc.math cimport floor, fabs, INFINITY, isfinite
from libc.stdlib cimport malloc, free, qsort

from ._pykernels import _setup

cnp.import_array()

BACKEND = "cython"

cdef double EPS_REL = 1e-7


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    if x < y:
        return -1
    if x > y:
        return 1
    return 0


def scanline_fill(int[:, ::1] id_grid, double[:, ::1] edges, double u0, double v0,
                  double du, double dv, int rid, int threads=1):
    cdef Py_ssize_t height = id_grid.shape[0]
    cdef Py_ssize_t width = id_grid.shape[1]
    cdef Py_ssize_t n_edges = edges.shape[0]
    cdef Py_ssize_t j, i, e, k, n, ptr
    cdef double y, ax, ay, bx, by, x
    cdef double* buf
    if n_edges == 0:
        return
    with nogil, parallel(num_threads=threads):
        buf = <double*>malloc(n_edges * sizeof(double))
        for j in prange(height, schedule="static"):
            y = v0 + (j + 0.5) * dv
            n = 0
            for e in range(n_edges):
                ax = edges[e, 0]
                ay = edges[e, 1]
                bx = edges[e, 2]
                by = edges[e, 3]
                if (ay > y) != (by > y):
                    buf[n] = ax + (y - ay) * (bx - ax) / (by - ay)
                    n = n + 1
            if n == 0:
                continue
            qsort(buf, n, sizeof(double), _cmp_double)
            ptr = 0
            for i in range(width):
                x = u0 + (i + 0.5) * du
                while ptr < n and buf[ptr] <= x:
                    ptr = ptr + 1
                if ptr % 2 == 1:
                    id_grid[j, i] = rid
        free(buf)


cdef void _edt_1d(double* f, double* d, Py_ssize_t n, Py_ssize_t* v, double* z) noexcept nogil:
    cdef Py_ssize_t q, k = -1
    cdef double s
    for q in range(n):
        if f[q] == INFINITY:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        s = ((f[q] + <double>(q * q)) - (f[v[k]] + <double>(v[k] * v[k]))) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k = k - 1
            s = ((f[q] + <double>(q * q)) - (f[v[k]] + <double>(v[k] * v[k]))) / (2.0 * q - 2.0 * v[k])
        k = k + 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            d[q] = INFINITY
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k = k + 1
        d[q] = <double>((q - v[k]) * (q - v[k])) + f[v[k]]


def edt_sq(sites, int threads=1):
    cdef cnp.uint8_t[:, ::1] s = np.ascontiguousarray(sites, dtype=np.uint8)
    cdef Py_ssize_t h = s.shape[0]
    cdef Py_ssize_t w = s.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] g = np.empty((h, w), dtype=np.float64)
    cdef Py_ssize_t m = h if h > w else w
    cdef Py_ssize_t i, j
    cdef double* f
    cdef double* d
    cdef double* z
    cdef Py_ssize_t* v
    with nogil, parallel(num_threads=threads):
        f = <double*>malloc(m * sizeof(double))
        d = <double*>malloc(m * sizeof(double))
        z = <double*>malloc((m + 1) * sizeof(double))
        v = <Py_ssize_t*>malloc(m * sizeof(Py_ssize_t))
        for i in prange(w, schedule="static"):
            for j in range(h):
                f[j] = 0.0 if s[j, i] else INFINITY
            _edt_1d(f, d, h, v, z)
            for j in range(h):
                g[j, i] = d[j]
        free(f)
        free(d)
        free(z)
        free(v)
    with nogil, parallel(num_threads=threads):
        f = <double*>malloc(m * sizeof(double))
        d = <double*>malloc(m * sizeof(double))
        z = <double*>malloc((m + 1) * sizeof(double))
        v = <Py_ssize_t*>malloc(m * sizeof(Py_ssize_t))
        for j in prange(h, schedule="static"):
            for i in range(w):
                f[i] = g[j, i]
            _edt_1d(f, d, w, v, z)
            for i in range(w):
                out[j, i] = d[i]
        free(f)
        free(d)
        free(z)
        free(v)
    return out_arr


cdef inline double _edge(double ax, double ay, double bx, double by, double px, double py) noexcept nogil:
    # evaluated from the lexicographically smaller endpoint so that the two
    # triangles sharing an edge get exact negations of the same value
    if ax < bx or (ax == bx and ay < by):
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    return -((ax - bx) * (py - by) - (ay - by) * (px - bx))


cdef inline bint _owned(double dx, double dy) noexcept nogil:
    return dy < 0 or (dy == 0 and dx > 0)


cdef inline void _edge_span(double ax, double ay, double bx, double by, double py,
                            double* lo, double* hi) noexcept nogil:
    cdef double x
    if (ay <= py and by >= py) or (by <= py and ay >= py):
        if ay == by:
            x = ax if ax < bx else bx
            if x < lo[0]:
                lo[0] = x
            x = ax if ax > bx else bx
            if x > hi[0]:
                hi[0] = x
        else:
            x = ax + (py - ay) * (bx - ax) / (by - ay)
            if x < lo[0]:
                lo[0] = x
            if x > hi[0]:
                hi[0] = x


cdef inline bint _row_span(double xa, double ya, double xb, double yb, double xc, double yc,
                           double py, Py_ssize_t ilo, Py_ssize_t ihi,
                           Py_ssize_t* i0, Py_ssize_t* i1) noexcept nogil:
    """Pixel columns that can contain row ``py`` of the triangle, padded by one.

    The padding keeps the span conservative so the exact edge tests, not the
    span, decide coverage; results match a full bounding-box scan.
    """
    cdef double lo = INFINITY
    cdef double hi = -INFINITY
    _edge_span(xa, ya, xb, yb, py, &lo, &hi)
    _edge_span(xb, yb, xc, yc, py, &lo, &hi)
    _edge_span(xc, yc, xa, ya, py, &lo, &hi)
    if lo > hi:
        return False
    i0[0] = <Py_ssize_t>floor(lo - 0.5) - 1
    i1[0] = <Py_ssize_t>floor(hi - 0.5) + 2
    if i0[0] < ilo:
        i0[0] = ilo
    if i1[0] > ihi:
        i1[0] = ihi
    return i0[0] <= i1[0]


def _prepare(sx, sy, sz, tris, width, height):
    area, swap, ilo, ihi, jlo, jhi, ok = _setup(sx, sy, tris, width, height)
    a = tris[:, 0].astype(np.int64)
    b = np.where(swap, tris[:, 2], tris[:, 1]).astype(np.int64)
    c = np.where(swap, tris[:, 1], tris[:, 2]).astype(np.int64)
    # original vertex slot of each (a, b, c) after the winding fix
    slot_b = np.where(swap, 2, 1).astype(np.int64)
    slot_c = np.where(swap, 1, 2).astype(np.int64)
    fixed_area = np.where(swap, -area, area)
    tri = np.ascontiguousarray(np.stack([a, b, c, slot_b, slot_c, ilo, ihi, jlo, jhi, ok.astype(np.int64)], axis=1))
    geo = np.ascontiguousarray(
        np.stack([sx[a], sy[a], sz[a], sx[b], sy[b], sz[b], sx[c], sy[c], sz[c], fixed_area], axis=1),
        dtype=np.float64,
    )
    return tri, geo


def raster_triangles(sx, sy, sz, tris, double near, double far, int width, int height, int threads=1):
    tri_index_arr = np.full((height, width), -1, dtype=np.int32)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    zbuf_arr = np.full((height, width), np.inf)
    if len(tris) == 0:
        return tri_index_arr, bary_arr, zbuf_arr
    tri_np, geo_np = _prepare(sx, sy, sz, tris, width, height)
    cdef cnp.int64_t[:, ::1] tri = tri_np
    cdef double[:, ::1] geo = geo_np
    cdef int[:, ::1] tri_index = tri_index_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef Py_ssize_t n_tri = tri.shape[0]
    cdef Py_ssize_t j, i, t, s0, s1
    cdef double px, py, xa, ya, za, xb, yb, zb, xc, yc, zc, area
    cdef double w0, w1, w2, q0, q1, q2, invz, depth
    cdef bint in0, in1, in2
    with nogil:
        for j in prange(height, schedule="static", num_threads=threads):
            py = j + 0.5
            for t in range(n_tri):
                if tri[t, 9] == 0 or j < tri[t, 7] or j > tri[t, 8]:
                    continue
                xa = geo[t, 0]
                ya = geo[t, 1]
                za = geo[t, 2]
                xb = geo[t, 3]
                yb = geo[t, 4]
                zb = geo[t, 5]
                xc = geo[t, 6]
                yc = geo[t, 7]
                zc = geo[t, 8]
                area = geo[t, 9]
                # direct assignment makes the span private to each prange thread
                s0 = 0
                s1 = -1
                if not _row_span(xa, ya, xb, yb, xc, yc, py, tri[t, 5], tri[t, 6], &s0, &s1):
                    continue
                for i in range(s0, s1 + 1):
                    px = i + 0.5
                    w0 = _edge(xb, yb, xc, yc, px, py)
                    w1 = _edge(xc, yc, xa, ya, px, py)
                    w2 = _edge(xa, ya, xb, yb, px, py)
                    in0 = w0 > 0 or (w0 == 0 and _owned(xc - xb, yc - yb))
                    in1 = w1 > 0 or (w1 == 0 and _owned(xa - xc, ya - yc))
                    in2 = w2 > 0 or (w2 == 0 and _owned(xb - xa, yb - ya))
                    if not (in0 and in1 and in2):
                        continue
                    q0 = (w0 / area) / za
                    q1 = (w1 / area) / zb
                    q2 = (w2 / area) / zc
                    invz = q0 + q1 + q2
                    depth = 1.0 / invz
                    if depth < zbuf[j, i] and depth >= near and depth <= far:
                        zbuf[j, i] = depth
                        tri_index[j, i] = <int>t
                        bary[j, i, 0] = q0 * depth
                        bary[j, i, tri[t, 3]] = q1 * depth
                        bary[j, i, tri[t, 4]] = q2 * depth
    return tri_index_arr, bary_arr, zbuf_arr


def csg_parity(sx, sy, sz, tris, offsets, rids, frag_depth_arr, mask_arr, int threads=1):
    height, width = frag_depth_arr.shape
    n_mesh_py = len(rids)
    if len(tris) == 0 or n_mesh_py == 0:
        return
    tri_np, geo_np = _prepare(sx, sy, sz, tris, width, height)
    offsets_np = np.ascontiguousarray(offsets, dtype=np.int64)
    # per-mesh pixel box over drawable triangles: j0, j1, i0, i1 (empty if j0 > j1)
    box_np = np.empty((n_mesh_py, 4), dtype=np.int64)
    box_np[:, 0] = height
    box_np[:, 1] = -1
    box_np[:, 2] = width
    box_np[:, 3] = -1
    for k in range(n_mesh_py):
        sel = tri_np[offsets_np[k]:offsets_np[k + 1]]
        sel = sel[sel[:, 9] == 1]
        if len(sel):
            box_np[k] = (sel[:, 7].min(), sel[:, 8].max(), sel[:, 5].min(), sel[:, 6].max())
    cdef cnp.int64_t[:, ::1] tri = tri_np
    cdef double[:, ::1] geo = geo_np
    cdef cnp.int64_t[::1] off = offsets_np
    cdef cnp.int64_t[:, ::1] box = box_np
    cdef int[::1] rid = np.ascontiguousarray(rids, dtype=np.int32)
    cdef double[:, ::1] frag = frag_depth_arr
    cdef int[:, ::1] mask = mask_arr
    cdef Py_ssize_t n_mesh = n_mesh_py
    cdef Py_ssize_t n_rows = height
    cdef Py_ssize_t n_cols = width
    cdef Py_ssize_t j, i, t, m, s0, s1
    cdef double px, py, xa, ya, za, xb, yb, zb, xc, yc, zc, area
    cdef double w0, w1, w2, q0, q1, q2, depth, fd
    cdef bint in0, in1, in2
    cdef unsigned char* row
    with nogil, parallel(num_threads=threads):
        row = <unsigned char*>malloc(n_cols * sizeof(unsigned char))
        for j in prange(n_rows, schedule="static"):
            py = j + 0.5
            for m in range(n_mesh):
                if j < box[m, 0] or j > box[m, 1]:
                    continue
                for i in range(box[m, 2], box[m, 3] + 1):
                    row[i] = 0
                for t in range(off[m], off[m + 1]):
                    if tri[t, 9] == 0 or j < tri[t, 7] or j > tri[t, 8]:
                        continue
                    xa = geo[t, 0]
                    ya = geo[t, 1]
                    za = geo[t, 2]
                    xb = geo[t, 3]
                    yb = geo[t, 4]
                    zb = geo[t, 5]
                    xc = geo[t, 6]
                    yc = geo[t, 7]
                    zc = geo[t, 8]
                    area = geo[t, 9]
                    s0 = 0
                    s1 = -1
                    if not _row_span(xa, ya, xb, yb, xc, yc, py, tri[t, 5], tri[t, 6], &s0, &s1):
                        continue
                    for i in range(s0, s1 + 1):
                        fd = frag[j, i]
                        if not isfinite(fd):
                            continue
                        px = i + 0.5
                        w0 = _edge(xb, yb, xc, yc, px, py)
                        w1 = _edge(xc, yc, xa, ya, px, py)
                        w2 = _edge(xa, ya, xb, yb, px, py)
                        in0 = w0 > 0 or (w0 == 0 and _owned(xc - xb, yc - yb))
                        in1 = w1 > 0 or (w1 == 0 and _owned(xa - xc, ya - yc))
                        in2 = w2 > 0 or (w2 == 0 and _owned(xb - xa, yb - ya))
                        if not (in0 and in1 and in2):
                            continue
                        q0 = (w0 / area) / za
                        q1 = (w1 / area) / zb
                        q2 = (w2 / area) / zc
                        depth = 1.0 / (q0 + q1 + q2)
                        if depth > 0 and depth <= fd * (1.0 + EPS_REL):
                            row[i] ^= 1
                for i in range(box[m, 2], box[m, 3] + 1):
                    if row[i] == 1:
                        mask[j, i] = rid[m]
        free(row)


def decal_pass(world_arr, eligible_arr, basis_arr, bint ortho, double p0, double p1, double near,
               double far, tex_arr, int rid, out_id_arr, out_rgba_arr, int threads=1):
    cdef double[:, :, ::1] world = world_arr
    cdef cnp.uint8_t[:, ::1] eligible = eligible_arr.view(np.uint8)
    cdef double[:, ::1] basis = np.ascontiguousarray(basis_arr, dtype=np.float64)
    cdef float[:, :, ::1] tex = tex_arr
    cdef int[:, ::1] out_id = out_id_arr
    cdef float[:, :, ::1] out_rgba = out_rgba_arr
    cdef Py_ssize_t h = world.shape[0]
    cdef Py_ssize_t w = world.shape[1]
    cdef Py_ssize_t th = tex.shape[0]
    cdef Py_ssize_t tw = tex.shape[1]
    cdef Py_ssize_t j, i, row, col
    cdef double dx, dy, dz, xp, yp, zp, xn, yn, u, v
    with nogil:
        for j in prange(h, schedule="static", num_threads=threads):
            for i in range(w):
                if not eligible[j, i]:
                    continue
                dx = world[j, i, 0] - basis[0, 0]
                dy = world[j, i, 1] - basis[0, 1]
                dz = world[j, i, 2] - basis[0, 2]
                xp = dx * basis[1, 0] + dy * basis[1, 1] + dz * basis[1, 2]
                yp = dx * basis[2, 0] + dy * basis[2, 1] + dz * basis[2, 2]
                zp = dx * basis[3, 0] + dy * basis[3, 1] + dz * basis[3, 2]
                if not (zp >= near and zp <= far):
                    continue
                if ortho:
                    xn = xp / p0
                    yn = yp / p1
                else:
                    xn = xp / (zp * p0)
                    yn = yp / (zp * p1)
                if not (fabs(xn) <= 1.0 and fabs(yn) <= 1.0):
                    continue
                u = (1.0 + xn) * 0.5
                v = (1.0 - yn) * 0.5
                col = <Py_ssize_t>(u * tw)
                row = <Py_ssize_t>(v * th)
                if col > tw - 1:
                    col = tw - 1
                if row > th - 1:
                    row = th - 1
                if tex[row, col, 3] > 0:
                    out_id[j, i] = rid
                    out_rgba[j, i, 0] = tex[row, col, 0]
                    out_rgba[j, i, 1] = tex[row, col, 1]
                    out_rgba[j, i, 2] = tex[row, col, 2]
                    out_rgba[j, i, 3] = tex[row, col, 3]


cdef void _pps_row(const double* world, const cnp.uint8_t* valid, const double* texels, Py_ssize_t w,
                   Py_ssize_t tw, Py_ssize_t th, double a, double b, double c, double d, double tx, double ty,
                   double u0, double v0, double u1, double v1,
                   int* out_id, int* out_texel, double* out_dist) noexcept nogil:
    # texel coordinates for the whole row first, then the fetches, so the
    # independent texture loads are not held up behind the divisions
    cdef Py_ssize_t i, row, col
    cdef double x, z, u, v, fu, fv
    for i in range(w):
        x = world[3 * i]
        z = world[3 * i + 2]
        u = a * x + b * z + tx
        v = c * x + d * z + ty
        fu = (u - u0) / (u1 - u0) * tw
        fv = (v - v0) / (v1 - v0) * th
        if valid[i] and fu >= 0 and fu < tw and fv >= 0 and fv < th:
            col = <Py_ssize_t>floor(fu)
            row = <Py_ssize_t>floor(fv)
            if col > tw - 1:
                col = tw - 1
            if row > th - 1:
                row = th - 1
            out_texel[2 * i] = <int>col
            out_texel[2 * i + 1] = <int>row
        else:
            out_texel[2 * i] = -1
            out_texel[2 * i + 1] = -1
    for i in range(w):
        col = out_texel[2 * i]
        if col >= 0:
            row = out_texel[2 * i + 1]
            out_id[i] = <int>texels[2 * (row * tw + col)]
            out_dist[i] = texels[2 * (row * tw + col) + 1]
        else:
            out_id[i] = 0
            out_dist[i] = INFINITY


def pps_fetch(world_arr, valid_arr, affine, window, texels_arr,
              out_id_arr, out_texel_arr, out_dist_arr, int threads=1):
    cdef double[:, :, ::1] world = world_arr
    cdef cnp.uint8_t[:, ::1] valid = valid_arr.view(np.uint8)
    cdef double[:, :, ::1] texels = texels_arr
    cdef int[:, ::1] out_id = out_id_arr
    cdef int[:, :, ::1] out_texel = out_texel_arr
    cdef double[:, ::1] out_dist = out_dist_arr
    cdef double a = affine[0], b = affine[1], c = affine[2], d = affine[3]
    cdef double tx = affine[4], ty = affine[5]
    cdef double u0 = window[0], v0 = window[1], u1 = window[2], v1 = window[3]
    cdef Py_ssize_t h = world.shape[0]
    cdef Py_ssize_t w = world.shape[1]
    cdef Py_ssize_t th = texels.shape[0]
    cdef Py_ssize_t tw = texels.shape[1]
    cdef Py_ssize_t j
    if h == 0 or w == 0:
        return 0
    with nogil:
        for j in prange(h, schedule="static", num_threads=threads):
            _pps_row(&world[j, 0, 0], &valid[j, 0], &texels[0, 0, 0], w, tw, th, a, b, c, d, tx, ty,
                     u0, v0, u1, v1, &out_id[j, 0], &out_texel[j, 0, 0], &out_dist[j, 0])
    return int(h * w)


def blend(out_arr, pix_arr, alpha_arr, color_arr, cidx_arr, int threads=1):
    cdef double[:, ::1] out = out_arr
    cdef const long long[::1] pix = pix_arr
    cdef const double[::1] alpha = alpha_arr
    cdef const double[:, ::1] color = color_arr
    cdef const long long[::1] cidx = cidx_arr
    cdef Py_ssize_t m = pix.shape[0]
    cdef Py_ssize_t nc = color.shape[1]
    cdef Py_ssize_t k, ch, p, ci
    cdef double a
    with nogil:
        for k in prange(m, schedule="static", num_threads=threads):
            p = pix[k]
            ci = cidx[k]
            a = alpha[k]
            for ch in range(nc):
                out[p, ch] = (1.0 - a) * out[p, ch] + a * color[ci, ch]
