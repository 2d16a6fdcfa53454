# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray/triangle kernels. Mirrors ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

# Parity-test direction; irrational-ish components avoid grazing mesh edges
# of axis-aligned geometry sampled on regular grids.
cdef double SKX = 0.9907264381, SKY = 0.1230476352, SKZ = 0.0572315671
cdef double DET_EPS = 1e-14


cdef inline double _hit(double ox, double oy, double oz,
                        double dx, double dy, double dz,
                        const double[:, ::1] v0, const double[:, ::1] e1,
                        const double[:, ::1] e2, Py_ssize_t i) nogil:
    """Moller-Trumbore; returns t or INFINITY on miss."""
    cdef double px, py, pz, det, inv, tx, ty, tz, u, v, qx, qy, qz
    px = dy * e2[i, 2] - dz * e2[i, 1]
    py = dz * e2[i, 0] - dx * e2[i, 2]
    pz = dx * e2[i, 1] - dy * e2[i, 0]
    det = e1[i, 0] * px + e1[i, 1] * py + e1[i, 2] * pz
    if fabs(det) < DET_EPS:
        return INFINITY
    inv = 1.0 / det
    tx = ox - v0[i, 0]
    ty = oy - v0[i, 1]
    tz = oz - v0[i, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return INFINITY
    qx = ty * e1[i, 2] - tz * e1[i, 1]
    qy = tz * e1[i, 0] - tx * e1[i, 2]
    qz = tx * e1[i, 1] - ty * e1[i, 0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return INFINITY
    return (e2[i, 0] * qx + e2[i, 1] * qy + e2[i, 2] * qz) * inv


cdef inline bint _slab(double o, double d, double lo, double hi,
                       double *tnear, double *tfar) nogil:
    cdef double t1, t2, tmp
    if d == 0.0:
        return lo <= o <= hi
    t1 = (lo - o) / d
    t2 = (hi - o) / d
    if t1 > t2:
        tmp = t1
        t1 = t2
        t2 = tmp
    if t1 > tnear[0]:
        tnear[0] = t1
    if t2 < tfar[0]:
        tfar[0] = t2
    return tnear[0] <= tfar[0]


def raycast(const double[:, ::1] origins, const double[:, ::1] dirs,
            const double[:, ::1] v0, const double[:, ::1] e1, const double[:, ::1] e2,
            const double[:, ::1] obj_lo, const double[:, ::1] obj_hi,
            const long[::1] tri_start, const long[::1] tri_count,
            const unsigned char[::1] obj_mask, double tmin):
    cdef Py_ssize_t nr = origins.shape[0], no = obj_lo.shape[0]
    cdef Py_ssize_t r, o, i
    cdef double ox, oy, oz, dx, dy, dz, best, t, tnear, tfar
    cdef long besti
    t_out = np.full(nr, np.inf)
    i_out = np.full(nr, -1, dtype=np.int64)
    cdef double[::1] tv = t_out
    cdef long[::1] iv = i_out
    with nogil:
        for r in range(nr):
            ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
            dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
            best = INFINITY
            besti = -1
            for o in range(no):
                if not obj_mask[o]:
                    continue
                tnear = tmin
                tfar = best
                if not _slab(ox, dx, obj_lo[o, 0], obj_hi[o, 0], &tnear, &tfar):
                    continue
                if not _slab(oy, dy, obj_lo[o, 1], obj_hi[o, 1], &tnear, &tfar):
                    continue
                if not _slab(oz, dz, obj_lo[o, 2], obj_hi[o, 2], &tnear, &tfar):
                    continue
                for i in range(tri_start[o], tri_start[o] + tri_count[o]):
                    t = _hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, i)
                    if t > tmin and t < best:
                        best = t
                        besti = i
            tv[r] = best
            iv[r] = besti
    return t_out, i_out


def points_inside(const double[:, ::1] points, const double[:, ::1] v0,
                  const double[:, ::1] e1, const double[:, ::1] e2):
    cdef Py_ssize_t n = points.shape[0], nt = v0.shape[0]
    cdef Py_ssize_t p, i
    cdef int count
    cdef double t
    out = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] ov = out
    with nogil:
        for p in range(n):
            count = 0
            for i in range(nt):
                t = _hit(points[p, 0], points[p, 1], points[p, 2], SKX, SKY, SKZ, v0, e1, e2, i)
                if t > 0.0 and t < INFINITY:
                    count += 1
            ov[p] = count & 1
    return out


cdef inline double _edge(double ax, double ay, double bx, double by,
                         double px, double py, double* dx, double* dy) nogil:
    """Edge function of a->b at p, evaluated in a canonical vertex order so a
    shared edge yields exactly opposite values in its two triangles."""
    cdef double s = 1.0, tx, ty
    if bx < ax or (bx == ax and by < ay):
        tx = ax; ty = ay
        ax = bx; ay = by
        bx = tx; by = ty
        s = -1.0
    dx[0] = s * (bx - ax)
    dy[0] = s * (by - ay)
    return s * ((bx - ax) * (py - ay) - (by - ay) * (px - ax))


cdef inline bint _covers(double e, double dx, double dy) nogil:
    # ties resolved as if p were nudged by (-d^2, d)
    return e > 0.0 or (e == 0.0 and (dx > 0.0 or (dx == 0.0 and dy > 0.0)))


def grid_inside(const double[:, :, ::1] tris, double x0, double sx, Py_ssize_t nx,
                double y0, double sy, Py_ssize_t ny, double z0, double sz, Py_ssize_t nz):
    cdef Py_ssize_t t, i, j, k, m, ilo, ihi, jlo, jhi
    cdef double ax, ay, bx, by, cx, cy, az, bz, cz, area, tmp, px, py
    cdef double eab, ebc, eca, zc, dx, dy
    cdef bint in_ab, in_bc, in_ca
    flips = np.zeros((nx, ny, nz + 1), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] fv = flips
    with nogil:
        for t in range(tris.shape[0]):
            ax = tris[t, 0, 0]; ay = tris[t, 0, 1]; az = tris[t, 0, 2]
            bx = tris[t, 1, 0]; by = tris[t, 1, 1]; bz = tris[t, 1, 2]
            cx = tris[t, 2, 0]; cy = tris[t, 2, 1]; cz = tris[t, 2, 2]
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if area == 0.0:
                continue
            if area < 0.0:
                tmp = bx; bx = cx; cx = tmp
                tmp = by; by = cy; cy = tmp
                tmp = bz; bz = cz; cz = tmp
                area = -area
            ilo = <Py_ssize_t>((min(ax, min(bx, cx)) - x0) / sx - 1.0)
            ihi = <Py_ssize_t>((max(ax, max(bx, cx)) - x0) / sx + 1.0)
            jlo = <Py_ssize_t>((min(ay, min(by, cy)) - y0) / sy - 1.0)
            jhi = <Py_ssize_t>((max(ay, max(by, cy)) - y0) / sy + 1.0)
            ilo = max(ilo, 0); jlo = max(jlo, 0)
            ihi = min(ihi, nx - 1); jhi = min(jhi, ny - 1)
            for i in range(ilo, ihi + 1):
                px = x0 + (i + 0.5) * sx
                for j in range(jlo, jhi + 1):
                    py = y0 + (j + 0.5) * sy
                    eab = _edge(ax, ay, bx, by, px, py, &dx, &dy)
                    in_ab = _covers(eab, dx, dy)
                    if not in_ab:
                        continue
                    ebc = _edge(bx, by, cx, cy, px, py, &dx, &dy)
                    in_bc = _covers(ebc, dx, dy)
                    if not in_bc:
                        continue
                    eca = _edge(cx, cy, ax, ay, px, py, &dx, &dy)
                    in_ca = _covers(eca, dx, dy)
                    if not in_ca:
                        continue
                    zc = (ebc * az + eca * bz + eab * cz) / area
                    # first sample strictly above the crossing
                    m = <Py_ssize_t>((zc - z0) / sz + 0.5)
                    if m < 0:
                        m = 0
                    if m > nz:
                        m = nz
                    while m > 0 and z0 + (m - 0.5) * sz > zc:
                        m -= 1
                    while m < nz and z0 + (m + 0.5) * sz <= zc:
                        m += 1
                    fv[i, j, m] ^= 1
        for i in range(nx):
            for j in range(ny):
                for k in range(1, nz):
                    fv[i, j, k] ^= fv[i, j, k - 1]
    return flips[:, :, :nz]
