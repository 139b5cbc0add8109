# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled z-buffer kernels. Semantics match _zbuffer_np exactly."""

from libc.math cimport ceil, floor, INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()


def rasterize_triangles(u, v, invz, int width, int height, cnp.float64_t[:, ::1] zbuf):
    cdef cnp.float64_t[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] zz = np.ascontiguousarray(invz, dtype=np.float64)
    cdef Py_ssize_t t, n = uu.shape[0]
    cdef double x0, x1, x2, y0, y1, y2, z0, z1, z2, area2, tmp
    cdef double dx0, dy0, dx1, dy1, dx2, dy2
    cdef double xminf, xmaxf, yminf, ymaxf
    cdef double w0, w1, w2, iz, zval, pxf, pyf
    cdef int xmin, xmax, ymin, ymax, px, py
    cdef bint tl0, tl1, tl2, cov

    for t in range(n):
        x0 = uu[t, 0]; x1 = uu[t, 1]; x2 = uu[t, 2]
        y0 = vv[t, 0]; y1 = vv[t, 1]; y2 = vv[t, 2]
        z0 = zz[t, 0]; z1 = zz[t, 1]; z2 = zz[t, 2]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            tmp = x1; x1 = x2; x2 = tmp
            tmp = y1; y1 = y2; y2 = tmp
            tmp = z1; z1 = z2; z2 = tmp
            area2 = -area2

        # clamp in double space before casting: raw bounds may exceed int range
        xminf = ceil(min3(x0, x1, x2))
        xmaxf = floor(max3(x0, x1, x2))
        yminf = ceil(min3(y0, y1, y2))
        ymaxf = floor(max3(y0, y1, y2))
        if xminf < 0.0:
            xminf = 0.0
        if yminf < 0.0:
            yminf = 0.0
        if xmaxf > width - 1.0:
            xmaxf = width - 1.0
        if ymaxf > height - 1.0:
            ymaxf = height - 1.0
        if not (xminf <= xmaxf and yminf <= ymaxf):
            continue
        xmin = <int>xminf
        xmax = <int>xmaxf
        ymin = <int>yminf
        ymax = <int>ymaxf

        dx0 = x2 - x1; dy0 = y2 - y1
        dx1 = x0 - x2; dy1 = y0 - y2
        dx2 = x1 - x0; dy2 = y1 - y0
        tl0 = (dy0 == 0.0 and dx0 > 0.0) or dy0 < 0.0
        tl1 = (dy1 == 0.0 and dx1 > 0.0) or dy1 < 0.0
        tl2 = (dy2 == 0.0 and dx2 > 0.0) or dy2 < 0.0

        for py in range(ymin, ymax + 1):
            pyf = <double>py
            for px in range(xmin, xmax + 1):
                pxf = <double>px
                w0 = dx0 * (pyf - y1) - dy0 * (pxf - x1)
                w1 = dx1 * (pyf - y2) - dy1 * (pxf - x2)
                w2 = dx2 * (pyf - y0) - dy2 * (pxf - x0)
                cov = ((w0 > 0.0) or (w0 == 0.0 and tl0)) \
                    and ((w1 > 0.0) or (w1 == 0.0 and tl1)) \
                    and ((w2 > 0.0) or (w2 == 0.0 and tl2))
                if not cov:
                    continue
                iz = (w0 / area2) * z0 + (w1 / area2) * z1 + (w2 / area2) * z2
                if iz <= 0.0:
                    continue
                zval = 1.0 / iz
                if zval < zbuf[py, px]:
                    zbuf[py, px] = zval


cdef inline double min3(double a, double b, double c) noexcept nogil:
    cdef double m = a
    if b < m:
        m = b
    if c < m:
        m = c
    return m


cdef inline double max3(double a, double b, double c) noexcept nogil:
    cdef double m = a
    if b > m:
        m = b
    if c > m:
        m = c
    return m


def scatter_min(ix, iy, z, cnp.float64_t[:, ::1] zbuf):
    cdef cnp.int64_t[::1] xi = np.ascontiguousarray(ix, dtype=np.int64)
    cdef cnp.int64_t[::1] yi = np.ascontiguousarray(iy, dtype=np.int64)
    cdef cnp.float64_t[::1] zi = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t i, n = xi.shape[0]
    for i in range(n):
        if zi[i] < zbuf[yi[i], xi[i]]:
            zbuf[yi[i], xi[i]] = zi[i]
