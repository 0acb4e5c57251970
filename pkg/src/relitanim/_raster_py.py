"""Pure numpy triangle-fill kernel; reference twin of ``_raster_ext``.

Coverage uses exact int64 edge functions on fixed-point coordinates, and the
floating-point steps mirror the compiled kernel operation for operation, so
both backends produce bit-identical buffers.
"""

import numpy as np


def _top_left(dx: int, dy: int) -> bool:
    return (dy == 0 and dx > 0) or dy < 0


def _inside(e: np.ndarray, top_left: bool) -> np.ndarray:
    return (e > 0) | (e == 0) if top_left else e > 0


def rasterize(xs, ys, depth, faces, height, width, subpixel):
    zbuf = np.full((height, width), np.inf)
    tri = np.full((height, width), -1, dtype=np.int64)
    wts = np.zeros((height, width, 3))
    half = subpixel // 2
    for f, (i0, i1, i2) in enumerate(faces.tolist()):
        x0, y0 = int(xs[i0]), int(ys[i0])
        x1, y1 = int(xs[i1]), int(ys[i1])
        x2, y2 = int(xs[i2]), int(ys[i2])
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area <= 0:
            continue
        c_lo = max(-((half - min(x0, x1, x2)) // subpixel), 0)
        c_hi = min((max(x0, x1, x2) - half) // subpixel, width - 1)
        r_lo = max(-((half - min(y0, y1, y2)) // subpixel), 0)
        r_hi = min((max(y0, y1, y2) - half) // subpixel, height - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue
        py = (np.arange(r_lo, r_hi + 1, dtype=np.int64) * subpixel + half)[:, None]
        px = (np.arange(c_lo, c_hi + 1, dtype=np.int64) * subpixel + half)[None, :]
        e0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        e1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        e2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = (
            _inside(e0, _top_left(x2 - x1, y2 - y1))
            & _inside(e1, _top_left(x0 - x2, y0 - y2))
            & _inside(e2, _top_left(x1 - x0, y1 - y0))
        )
        if not inside.any():
            continue
        rr, cc = np.nonzero(inside)
        fa = float(area)
        b0 = e0[rr, cc].astype(np.float64) / fa
        b1 = e1[rr, cc].astype(np.float64) / fa
        b2 = e2[rr, cc].astype(np.float64) / fa
        d = b0 * depth[i0] + b1 * depth[i1]
        d = d + b2 * depth[i2]
        rr = rr + r_lo
        cc = cc + c_lo
        cur_z = zbuf[rr, cc]
        win = (d < cur_z) | ((d == cur_z) & (f < tri[rr, cc]))
        rr, cc = rr[win], cc[win]
        zbuf[rr, cc] = d[win]
        tri[rr, cc] = f
        wts[rr, cc, 0] = b0[win]
        wts[rr, cc, 1] = b1[win]
        wts[rr, cc, 2] = b2[win]
    return zbuf, tri, wts
