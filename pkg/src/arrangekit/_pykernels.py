"""Pure-numpy fallbacks for the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

SKEW = np.array([0.9907264381, 0.1230476352, 0.0572315671])
DET_EPS = 1e-14


def _hit(o, d, v0, e1, e2):
    """Vectorized Moller-Trumbore over rows of (o, d) against one triangle."""
    p = np.cross(d, e2)
    det = p @ e1
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tv = o - v0
        u = np.einsum("ij,ij->i", tv, p) * inv
        q = np.cross(tv, e1)
        v = np.einsum("ij,ij->i", d, q) * inv
        t = (q @ e2) * inv
    ok = (np.abs(det) >= DET_EPS) & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1)
    return np.where(ok, t, np.inf)


def _slab(o, d, lo, hi, tnear, tfar):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    zero = d == 0
    inside = (lo <= o) & (o <= hi)
    tn = np.where(zero, -np.inf, np.minimum(t1, t2))
    tf = np.where(zero, np.inf, np.maximum(t1, t2))
    tnear = np.maximum(tnear, tn)
    tfar = np.minimum(tfar, tf)
    ok = np.where(zero, inside, True) & (tnear <= tfar)
    return ok, tnear, tfar


def raycast(origins, dirs, v0, e1, e2, obj_lo, obj_hi, tri_start, tri_count, obj_mask, tmin):
    nr = len(origins)
    best = np.full(nr, np.inf)
    besti = np.full(nr, -1, dtype=np.int64)
    for o in range(len(obj_lo)):
        if not obj_mask[o]:
            continue
        tnear = np.full(nr, float(tmin))
        tfar = best.copy()
        live = np.ones(nr, dtype=bool)
        for ax in range(3):
            ok, tnear, tfar = _slab(origins[:, ax], dirs[:, ax], obj_lo[o, ax], obj_hi[o, ax], tnear, tfar)
            live &= ok
        rows = np.flatnonzero(live)
        if len(rows) == 0:
            continue
        ro, rd = origins[rows], dirs[rows]
        for i in range(tri_start[o], tri_start[o] + tri_count[o]):
            t = _hit(ro, rd, v0[i], e1[i], e2[i])
            cur = best[rows]
            better = (t > tmin) & (t < cur)
            if better.any():
                idx = rows[better]
                best[idx] = t[better]
                besti[idx] = i
    return best, besti


def points_inside(points, v0, e1, e2):
    n = len(points)
    count = np.zeros(n, dtype=np.int64)
    d = np.broadcast_to(SKEW, (n, 3))
    for i in range(len(v0)):
        t = _hit(points, d, v0[i], e1[i], e2[i])
        count += (t > 0) & np.isfinite(t)
    return (count & 1).astype(np.uint8)


def _edge(a, b, px, py):
    """Edge function of a->b over sample points, in canonical vertex order."""
    flip = b[0] < a[0] or (b[0] == a[0] and b[1] < a[1])
    if flip:
        a, b = b, a
    s = -1.0 if flip else 1.0
    dx, dy = s * (b[0] - a[0]), s * (b[1] - a[1])
    e = s * ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]))
    tie = dx > 0 or (dx == 0 and dy > 0)
    return e, (e > 0) | ((e == 0) & tie)


def grid_inside(tris, x0, sx, nx, y0, sy, ny, z0, sz, nz):
    flips = np.zeros((nx, ny, nz + 1), dtype=np.uint8)
    zs = z0 + (np.arange(nz) + 0.5) * sz
    for a, b, c in tris:
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area == 0.0:
            continue
        if area < 0.0:
            b, c = c, b
            area = -area
        ilo = max(int((min(a[0], b[0], c[0]) - x0) / sx - 1.0), 0)
        ihi = min(int((max(a[0], b[0], c[0]) - x0) / sx + 1.0), nx - 1)
        jlo = max(int((min(a[1], b[1], c[1]) - y0) / sy - 1.0), 0)
        jhi = min(int((max(a[1], b[1], c[1]) - y0) / sy + 1.0), ny - 1)
        if ilo > ihi or jlo > jhi:
            continue
        ii, jj = np.meshgrid(np.arange(ilo, ihi + 1), np.arange(jlo, jhi + 1), indexing="ij")
        px = x0 + (ii + 0.5) * sx
        py = y0 + (jj + 0.5) * sy
        eab, in_ab = _edge(a, b, px, py)
        ebc, in_bc = _edge(b, c, px, py)
        eca, in_ca = _edge(c, a, px, py)
        hit = in_ab & in_bc & in_ca
        if not hit.any():
            continue
        zc = (ebc[hit] * a[2] + eca[hit] * b[2] + eab[hit] * c[2]) / area
        m = np.searchsorted(zs, zc, side="right")
        np.bitwise_xor.at(flips, (ii[hit], jj[hit], m), 1)
    return (np.cumsum(flips[:, :, :nz], axis=2) & 1).astype(np.uint8)
