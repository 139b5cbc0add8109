"""Pure-numpy z-buffer kernels, the fallback backend.

Formulas and operation order mirror ``_zbuffer_cy.pyx`` exactly so both
backends produce bit-identical buffers (the extension is compiled with
FP contraction disabled for the same reason).
"""

import numpy as np


def rasterize_triangles(u, v, invz, width, height, zbuf):
    """Min-z rasterization of screen-space triangles into ``zbuf`` (in place).

    u, v: (T, 3) pixel coordinates of triangle vertices, pixel centers at
    integer positions. invz: (T, 3) inverse z-depth per vertex (all > 0,
    i.e. triangles are already near-clipped). zbuf: (H, W) float64,
    initialized to +inf where empty. Coverage uses the center-inside rule
    with top-left tie breaking; depth is interpolated as 1 / lerp(1/z).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    invz = np.asarray(invz, dtype=np.float64)

    for t in range(len(u)):
        x0, x1, x2 = u[t]
        y0, y1, y2 = v[t]
        z0, z1, z2 = invz[t]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            x1, x2 = x2, x1
            y1, y2 = y2, y1
            z1, z2 = z2, z1
            area2 = -area2

        xmin = int(np.ceil(min(x0, x1, x2)))
        xmax = int(np.floor(max(x0, x1, x2)))
        ymin = int(np.ceil(min(y0, y1, y2)))
        ymax = int(np.floor(max(y0, y1, y2)))
        if xmin < 0:
            xmin = 0
        if ymin < 0:
            ymin = 0
        if xmax > width - 1:
            xmax = width - 1
        if ymax > height - 1:
            ymax = height - 1
        if xmin > xmax or ymin > ymax:
            continue

        dx0 = x2 - x1
        dy0 = y2 - y1
        dx1 = x0 - x2
        dy1 = y0 - y2
        dx2 = x1 - x0
        dy2 = y1 - y0
        # top-left rule: a boundary pixel belongs to the triangle whose
        # zero-crossing edge is horizontal-going-right or goes upward
        tl0 = (dy0 == 0.0 and dx0 > 0.0) or dy0 < 0.0
        tl1 = (dy1 == 0.0 and dx1 > 0.0) or dy1 < 0.0
        tl2 = (dy2 == 0.0 and dx2 > 0.0) or dy2 < 0.0

        px = np.arange(xmin, xmax + 1, dtype=np.float64)[None, :]
        py = np.arange(ymin, ymax + 1, dtype=np.float64)[:, None]
        w0 = dx0 * (py - y1) - dy0 * (px - x1)
        w1 = dx1 * (py - y2) - dy1 * (px - x2)
        w2 = dx2 * (py - y0) - dy2 * (px - x0)
        covered = ((w0 > 0.0) | ((w0 == 0.0) & tl0)) \
            & ((w1 > 0.0) | ((w1 == 0.0) & tl1)) \
            & ((w2 > 0.0) | ((w2 == 0.0) & tl2))
        if not covered.any():
            continue
        iz = (w0 / area2) * z0 + (w1 / area2) * z1 + (w2 / area2) * z2
        covered &= iz > 0.0
        cand = np.where(covered, 1.0 / np.where(covered, iz, 1.0), np.inf)
        region = zbuf[ymin:ymax + 1, xmin:xmax + 1]
        np.minimum(region, cand, out=region)


def scatter_min(ix, iy, z, zbuf):
    """Per-pixel min of point depths into ``zbuf`` (in place).

    ix, iy: (N,) integer pixel coordinates, already bounds-checked.
    """
    np.minimum.at(zbuf, (np.asarray(iy), np.asarray(ix)), np.asarray(z, dtype=np.float64))
