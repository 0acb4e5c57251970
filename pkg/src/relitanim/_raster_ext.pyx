# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled triangle-fill kernel. Must stay bit-identical to _raster_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef long long i64


cdef inline i64 floordiv(i64 a, i64 b) nogil:
    cdef i64 q = a / b
    if (a % b != 0) and ((a < 0) != (b < 0)):
        q -= 1
    return q


cdef inline i64 ceildiv(i64 a, i64 b) nogil:
    return -floordiv(-a, b)


cdef inline bint top_left(i64 dx, i64 dy) nogil:
    return (dy == 0 and dx > 0) or dy < 0


def rasterize(
    const i64[::1] xs,
    const i64[::1] ys,
    const double[::1] depth,
    const i64[:, ::1] faces,
    int height,
    int width,
    int subpixel,
):
    cdef Py_ssize_t n_faces = faces.shape[0]
    zbuf_a = np.full((height, width), np.inf)
    tri_a = np.full((height, width), -1, dtype=np.int64)
    w_a = np.zeros((height, width, 3))
    cdef double[:, ::1] zbuf = zbuf_a
    cdef i64[:, ::1] tri = tri_a
    cdef double[:, :, ::1] wts = w_a

    cdef Py_ssize_t f, r, c
    cdef i64 i0, i1, i2, x0, y0, x1, y1, x2, y2, area
    cdef i64 minx, maxx, miny, maxy, half = subpixel // 2
    cdef i64 c_lo, c_hi, r_lo, r_hi, px, py
    cdef i64 e0, e1, e2
    cdef bint tl0, tl1, tl2
    cdef double b0, b1, b2, d, fa

    with nogil:
        for f in range(n_faces):
            i0 = faces[f, 0]
            i1 = faces[f, 1]
            i2 = faces[f, 2]
            x0 = xs[i0]; y0 = ys[i0]
            x1 = xs[i1]; y1 = ys[i1]
            x2 = xs[i2]; y2 = ys[i2]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if area <= 0:
                continue  # back-facing or degenerate
            minx = min(x0, min(x1, x2)); maxx = max(x0, max(x1, x2))
            miny = min(y0, min(y1, y2)); maxy = max(y0, max(y1, y2))
            c_lo = max(ceildiv(minx - half, subpixel), 0)
            c_hi = min(floordiv(maxx - half, subpixel), width - 1)
            r_lo = max(ceildiv(miny - half, subpixel), 0)
            r_hi = min(floordiv(maxy - half, subpixel), height - 1)
            if c_lo > c_hi or r_lo > r_hi:
                continue
            tl0 = top_left(x2 - x1, y2 - y1)
            tl1 = top_left(x0 - x2, y0 - y2)
            tl2 = top_left(x1 - x0, y1 - y0)
            fa = <double>area
            for r in range(r_lo, r_hi + 1):
                py = r * subpixel + half
                for c in range(c_lo, c_hi + 1):
                    px = c * subpixel + half
                    e0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                    if e0 < 0 or (e0 == 0 and not tl0):
                        continue
                    e1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                    if e1 < 0 or (e1 == 0 and not tl1):
                        continue
                    e2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                    if e2 < 0 or (e2 == 0 and not tl2):
                        continue
                    b0 = <double>e0 / fa
                    b1 = <double>e1 / fa
                    b2 = <double>e2 / fa
                    d = b0 * depth[i0] + b1 * depth[i1]
                    d = d + b2 * depth[i2]
                    if d < zbuf[r, c] or (d == zbuf[r, c] and f < tri[r, c]):
                        zbuf[r, c] = d
                        tri[r, c] = f
                        wts[r, c, 0] = b0
                        wts[r, c, 1] = b1
                        wts[r, c, 2] = b2
    return zbuf_a, tri_a, w_a
