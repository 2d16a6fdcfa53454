"""Backend selection for the ray kernels plus the flattened scene geometry.

The compiled extension is used when importable; set ``ARRANGEKIT_PURE=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _pykernels

RAY_EPS = 1e-7
BOX_PAD = 1e-9

_c = None
if os.environ.get("ARRANGEKIT_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "numpy"
_impl = _c if _c is not None else _pykernels


def use_backend(name: str):
    """Switch backend at runtime (benchmarks and equivalence tests)."""
    global _impl, BACKEND
    if name == "cython":
        if _c is None:
            raise RuntimeError("compiled kernels are not available")
        _impl, BACKEND = _c, "cython"
    elif name == "numpy":
        _impl, BACKEND = _pykernels, "numpy"
    else:
        raise ValueError(name)


def compiled_available() -> bool:
    return _c is not None


def _c3(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 3))


def raycast_arrays(origins, dirs, v0, e1, e2, lo, hi, start, count, mask, tmin=RAY_EPS):
    return _impl.raycast(
        _c3(origins), _c3(dirs), v0, e1, e2, lo, hi,
        np.ascontiguousarray(start, dtype=np.int64), np.ascontiguousarray(count, dtype=np.int64),
        np.ascontiguousarray(mask, dtype=np.uint8), float(tmin),
    )


def points_inside(points, v0, e1, e2) -> np.ndarray:
    """Parity inside-test of points against a closed triangle soup."""
    pts = _c3(points)
    if len(pts) == 0 or len(v0) == 0:
        return np.zeros(len(pts), dtype=bool)
    return _impl.points_inside(pts, _c3(v0), _c3(e1), _c3(e2)).astype(bool)


def grid_inside(tris, lo, hi, resolution: int) -> np.ndarray:
    """Inside flags (r, r, r) of the cell centers of a regular grid over [lo, hi].

    Each vertical column is classified by the parity of the closed triangle
    soup's crossings below each sample, with exact tie-breaking on shared edges.
    """
    tris = np.ascontiguousarray(np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3))
    lo = np.asarray(lo, float)
    step = (np.asarray(hi, float) - lo) / resolution
    r = int(resolution)
    if len(tris) == 0:
        return np.zeros((r, r, r), dtype=bool)
    out = _impl.grid_inside(tris, lo[0], step[0], r, lo[1], step[1], r, lo[2], step[2], r)
    return np.asarray(out).astype(bool)


def triangle_arrays(vertices: np.ndarray, faces: np.ndarray):
    tri = vertices[faces]
    v0 = np.ascontiguousarray(tri[:, 0])
    return v0, np.ascontiguousarray(tri[:, 1] - v0), np.ascontiguousarray(tri[:, 2] - v0)


@dataclass(frozen=True, eq=False)
class SceneGeometry:
    """All world-space triangles of a scene, grouped by object."""

    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    owner: np.ndarray  # object index per triangle
    local_face: np.ndarray  # face index within the owner's mesh
    lo: np.ndarray
    hi: np.ndarray
    start: np.ndarray
    count: np.ndarray

    @classmethod
    def from_scene(cls, scene) -> "SceneGeometry":
        v0s, e1s, e2s, owners, faces = [], [], [], [], []
        lo = np.zeros((len(scene.objects), 3))
        hi = np.zeros((len(scene.objects), 3))
        start = np.zeros(len(scene.objects), dtype=np.int64)
        count = np.zeros(len(scene.objects), dtype=np.int64)
        n = 0
        for k, obj in enumerate(scene.objects):
            wm = obj.world_mesh
            a, b, c = triangle_arrays(wm.vertices, wm.faces)
            v0s.append(a)
            e1s.append(b)
            e2s.append(c)
            owners.append(np.full(len(a), k, dtype=np.int64))
            faces.append(np.arange(len(a), dtype=np.int64))
            blo, bhi = wm.bounds
            lo[k] = blo - BOX_PAD
            hi[k] = bhi + BOX_PAD
            start[k] = n
            count[k] = len(a)
            n += len(a)
        cat = lambda xs, shape: np.ascontiguousarray(np.concatenate(xs)) if xs else np.zeros(shape)
        return cls(
            cat(v0s, (0, 3)), cat(e1s, (0, 3)), cat(e2s, (0, 3)),
            cat(owners, (0,)).astype(np.int64), cat(faces, (0,)).astype(np.int64),
            lo, hi, start, count,
        )

    def cast(self, origins, dirs, exclude=(), tmin=RAY_EPS):
        """Nearest hits. Returns (t, object index or -1, owner face index or -1)."""
        mask = np.ones(len(self.lo), dtype=np.uint8)
        for i in exclude:
            mask[i] = 0
        t, tri = raycast_arrays(origins, dirs, self.v0, self.e1, self.e2, self.lo, self.hi,
                                self.start, self.count, mask, tmin)
        obj = np.where(tri >= 0, self.owner[np.maximum(tri, 0)], -1)
        face = np.where(tri >= 0, self.local_face[np.maximum(tri, 0)], -1)
        return t, obj, face
