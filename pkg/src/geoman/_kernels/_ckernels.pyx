# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels. Semantics must match ``_pykernels`` exactly."""
import numpy as np

from libc.math cimport sqrt, floor

DEF T_MIN = 1e-9


cdef inline double _sphere_hit(double ox, double oy, double oz,
                               double dx, double dy, double dz,
                               double cx, double cy, double cz, double r) nogil:
    cdef double px = ox - cx, py = oy - cy, pz = oz - cz
    cdef double a = dx * dx + dy * dy + dz * dz
    cdef double b = px * dx + py * dy + pz * dz
    cdef double c = px * px + py * py + pz * pz - r * r
    cdef double h = b * b - a * c
    if h < 0.0:
        return -1.0
    return (-b - sqrt(h)) / a


def raycast(double[::1] origin, double[:, ::1] dirs, long[::1] kinds, double[:, ::1] params):
    cdef Py_ssize_t n = dirs.shape[0]
    cdef Py_ssize_t n_prim = kinds.shape[0]
    depth_arr = np.full(n, np.inf)
    index_arr = np.full(n, -1, dtype=np.int64)
    normal_arr = np.zeros((n, 3))
    cdef double[::1] depth = depth_arr
    cdef long[::1] index = index_arr
    cdef double[:, ::1] normal = normal_arr

    cdef Py_ssize_t i, k
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double dx, dy, dz, t, best, hx, hy, hz
    cdef double lox, loy, loz, ldx, ldy, ldz, a, b, c, h, nx, ny, nz, nrm
    cdef double ax, ay, az, ux, uy, uz, length, r, y, dpx, dpy, dpz, opx, opy, opz, dn, on
    cdef double[:, ::1] p = params

    with nogil:
        for i in range(n):
            dx = dirs[i, 0]
            dy = dirs[i, 1]
            dz = dirs[i, 2]
            best = 1e300
            for k in range(n_prim):
                if kinds[k] == 0:
                    # ellipsoid: center, world_from_local rotation (row-major), radii
                    lox = ((ox - p[k, 0]) * p[k, 3] + (oy - p[k, 1]) * p[k, 6] + (oz - p[k, 2]) * p[k, 9]) / p[k, 12]
                    loy = ((ox - p[k, 0]) * p[k, 4] + (oy - p[k, 1]) * p[k, 7] + (oz - p[k, 2]) * p[k, 10]) / p[k, 13]
                    loz = ((ox - p[k, 0]) * p[k, 5] + (oy - p[k, 1]) * p[k, 8] + (oz - p[k, 2]) * p[k, 11]) / p[k, 14]
                    ldx = (dx * p[k, 3] + dy * p[k, 6] + dz * p[k, 9]) / p[k, 12]
                    ldy = (dx * p[k, 4] + dy * p[k, 7] + dz * p[k, 10]) / p[k, 13]
                    ldz = (dx * p[k, 5] + dy * p[k, 8] + dz * p[k, 11]) / p[k, 14]
                    t = _sphere_hit(lox, loy, loz, ldx, ldy, ldz, 0.0, 0.0, 0.0, 1.0)
                    if t > T_MIN and t < best:
                        best = t
                        hx = (lox + t * ldx) / p[k, 12]
                        hy = (loy + t * ldy) / p[k, 13]
                        hz = (loz + t * ldz) / p[k, 14]
                        nx = p[k, 3] * hx + p[k, 4] * hy + p[k, 5] * hz
                        ny = p[k, 6] * hx + p[k, 7] * hy + p[k, 8] * hz
                        nz = p[k, 9] * hx + p[k, 10] * hy + p[k, 11] * hz
                        nrm = sqrt(nx * nx + ny * ny + nz * nz)
                        depth[i] = t
                        index[i] = k
                        normal[i, 0] = nx / nrm
                        normal[i, 1] = ny / nrm
                        normal[i, 2] = nz / nrm
                else:
                    # capsule: segment a-b, radius r
                    ax = p[k, 0]
                    ay = p[k, 1]
                    az = p[k, 2]
                    ux = p[k, 3] - ax
                    uy = p[k, 4] - ay
                    uz = p[k, 5] - az
                    r = p[k, 6]
                    length = sqrt(ux * ux + uy * uy + uz * uz)
                    ux = ux / length
                    uy = uy / length
                    uz = uz / length
                    t = 1e300
                    dn = dx * ux + dy * uy + dz * uz
                    on = (ox - ax) * ux + (oy - ay) * uy + (oz - az) * uz
                    dpx = dx - dn * ux
                    dpy = dy - dn * uy
                    dpz = dz - dn * uz
                    opx = (ox - ax) - on * ux
                    opy = (oy - ay) - on * uy
                    opz = (oz - az) - on * uz
                    a = dpx * dpx + dpy * dpy + dpz * dpz
                    b = opx * dpx + opy * dpy + opz * dpz
                    c = opx * opx + opy * opy + opz * opz - r * r
                    h = b * b - a * c
                    if a > 1e-18 and h >= 0.0:
                        h = (-b - sqrt(h)) / a
                        y = on + h * dn
                        if h > T_MIN and y >= 0.0 and y <= length:
                            t = h
                    h = _sphere_hit(ox, oy, oz, dx, dy, dz, ax, ay, az, r)
                    if h > T_MIN and h < t:
                        t = h
                    h = _sphere_hit(ox, oy, oz, dx, dy, dz, ax + length * ux, ay + length * uy, az + length * uz, r)
                    if h > T_MIN and h < t:
                        t = h
                    if t < best:
                        best = t
                        hx = ox + t * dx - ax
                        hy = oy + t * dy - ay
                        hz = oz + t * dz - az
                        y = hx * ux + hy * uy + hz * uz
                        if y < 0.0:
                            y = 0.0
                        elif y > length:
                            y = length
                        nx = hx - y * ux
                        ny = hy - y * uy
                        nz = hz - y * uz
                        nrm = sqrt(nx * nx + ny * ny + nz * nz)
                        depth[i] = t
                        index[i] = k
                        normal[i, 0] = nx / nrm
                        normal[i, 1] = ny / nrm
                        normal[i, 2] = nz / nrm
    return depth_arr, index_arr, normal_arr


def bilinear_sample(double[:, :, ::1] img, double[:, ::1] xs, double[:, ::1] ys, unsigned char[:, ::1] mask):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1], C = img.shape[2]
    cdef Py_ssize_t Ho = xs.shape[0], Wo = xs.shape[1]
    out_arr = np.zeros((Ho, Wo, C))
    valid_arr = np.zeros((Ho, Wo), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[:, ::1] valid = valid_arr
    cdef Py_ssize_t i, j, c, x0, y0
    cdef double x, y, fx, fy, w00, w01, w10, w11
    with nogil:
        for i in range(Ho):
            for j in range(Wo):
                x = xs[i, j]
                y = ys[i, j]
                if not (x >= 0.0 and x <= W - 1 and y >= 0.0 and y <= H - 1):
                    continue
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                if x0 > W - 2:
                    x0 = W - 2
                if y0 > H - 2:
                    y0 = H - 2
                fx = x - x0
                fy = y - y0
                w00 = (1.0 - fx) * (1.0 - fy)
                w01 = fx * (1.0 - fy)
                w10 = (1.0 - fx) * fy
                w11 = fx * fy
                if (w00 > 0.0 and not mask[y0, x0]) or (w01 > 0.0 and not mask[y0, x0 + 1]) \
                        or (w10 > 0.0 and not mask[y0 + 1, x0]) or (w11 > 0.0 and not mask[y0 + 1, x0 + 1]):
                    continue
                valid[i, j] = 1
                for c in range(C):
                    out[i, j, c] = (w00 * img[y0, x0, c] + w01 * img[y0, x0 + 1, c]
                                    + w10 * img[y0 + 1, x0, c] + w11 * img[y0 + 1, x0 + 1, c])
    return out_arr, valid_arr.astype(bool)
