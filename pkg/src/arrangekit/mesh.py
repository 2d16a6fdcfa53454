"""Triangle meshes, OBJ input/output and procedural primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateMesh, MissingFile, ParseError

AREA_EPS = 1e-12


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh. Arrays are read-only after construction."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise DegenerateMesh("face index out of range")
        if len(f):
            bad = np.flatnonzero(self.face_areas <= AREA_EPS)
            if len(bad):
                raise DegenerateMesh(f"face {int(bad[0])} has zero area")

    @cached_property
    def _cross(self):
        v0, v1, v2 = (self.vertices[self.faces[:, i]] for i in range(3))
        return np.cross(v1 - v0, v2 - v0)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self._cross / np.linalg.norm(self._cross, axis=1, keepdims=True)
        n.setflags(write=False)
        return n

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def edge_faces(self) -> dict[tuple[int, int], list[int]]:
        """Map welded undirected edge -> faces using it."""
        weld = self.weld_map
        out: dict[tuple[int, int], list[int]] = {}
        for fi, tri in enumerate(self.faces):
            w = [int(weld[i]) for i in tri]
            for a, b in ((w[0], w[1]), (w[1], w[2]), (w[2], w[0])):
                key = (a, b) if a < b else (b, a)
                out.setdefault(key, []).append(fi)
        return out

    @cached_property
    def weld_map(self) -> np.ndarray:
        """Index of the first vertex sharing each vertex's position (1e-9 grid)."""
        keys = np.round(self.vertices / 1e-9).astype(np.int64)
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        return first[inverse.reshape(-1)]

    @cached_property
    def face_neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(len(self.faces))]
        for fs in self.edge_faces.values():
            for a in fs:
                for b in fs:
                    if a != b and b not in nb[a]:
                        nb[a].append(b)
        for lst in nb:
            lst.sort()
        return nb

    @cached_property
    def is_closed(self) -> bool:
        return bool(self.edge_faces) and all(len(fs) == 2 for fs in self.edge_faces.values())

    def transformed(self, rotation: np.ndarray, translation) -> "TriMesh":
        v = self.vertices @ np.asarray(rotation).T + np.asarray(translation, dtype=float)
        return TriMesh(v, self.faces)

    def volume(self) -> float:
        """Signed volume via the divergence theorem (closed, outward-wound meshes)."""
        v0, v1, v2 = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def load_obj(path) -> TriMesh:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"mesh file not found: {path}")
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"{path.name}: vertex needs 3 coordinates", line=lineno)
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise ParseError(f"{path.name}: bad vertex coordinate", line=lineno) from None
        elif tag == "f":
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError:
                    raise ParseError(f"{path.name}: bad face index {tok!r}", line=lineno) from None
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) < 3:
                raise ParseError(f"{path.name}: face needs at least 3 vertices", line=lineno)
            # fan triangulation for stray polygons
            for j in range(1, len(idx) - 1):
                faces.append([idx[0], idx[j], idx[j + 1]])
    try:
        return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except DegenerateMesh as exc:
        raise DegenerateMesh(f"{path.name}: {exc}") from None


def dump_obj(mesh: TriMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"


def save_obj(mesh: TriMesh, path) -> None:
    Path(path).write_text(dump_obj(mesh))


# ---------------------------------------------------------------------------
# Primitives (all outward-wound, welded)
# ---------------------------------------------------------------------------

_BOX_FACES = [
    [0, 2, 1], [0, 3, 2],  # -z
    [4, 5, 6], [4, 6, 7],  # +z
    [0, 1, 5], [0, 5, 4],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [1, 2, 6], [1, 6, 5],  # +x
    [3, 0, 4], [3, 4, 7],  # -x
]


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    sx, sy, sz = (0.5 * float(s) for s in size)
    cx, cy, cz = center
    v = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    ) + [cx, cy, cz]
    return TriMesh(v, _BOX_FACES)


def prism(radius: float, height: float, sides: int = 12, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Regular n-gon prism approximating a cylinder about local +Z."""
    ang = 2 * math.pi * np.arange(sides) / sides
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = 0.5 * height
    bottom = np.column_stack([ring, np.full(sides, -h)])
    top = np.column_stack([ring, np.full(sides, h)])
    v = np.vstack([bottom, top, [[0, 0, -h], [0, 0, h]]]) + np.asarray(center, float)
    cb, ct = 2 * sides, 2 * sides + 1
    f = []
    for i in range(sides):
        j = (i + 1) % sides
        f.append([cb, j, i])
        f.append([ct, sides + i, sides + j])
        f.append([i, j, sides + j])
        f.append([i, sides + j, sides + i])
    return TriMesh(v, f)


def grid_plane(size=(1.0, 1.0), divisions=(10, 10), z=0.0) -> TriMesh:
    """Open, upward-facing triangulated rectangle (2*nx*ny faces)."""
    nx, ny = divisions
    xs = np.linspace(-size[0] / 2, size[0] / 2, nx + 1)
    ys = np.linspace(-size[1] / 2, size[1] / 2, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    v = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    f = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            f.append([a, b, b + 1])
            f.append([a, b + 1, a + 1])
    return TriMesh(v, f)


def wedge(length: float, width: float, angle_deg: float) -> TriMesh:
    """Closed ramp: base on z=0 spanning x in [0, length], rising toward +x."""
    h = length * math.tan(math.radians(angle_deg))
    w = width / 2
    v = np.array(
        [
            [0, -w, 0], [length, -w, 0], [length, w, 0], [0, w, 0],
            [length, -w, h], [length, w, h],
        ],
        dtype=float,
    )
    f = [
        [0, 2, 1], [0, 3, 2],  # bottom
        [0, 1, 4],  # -y side
        [3, 5, 2],  # +y side
        [1, 2, 5], [1, 5, 4],  # back wall at x=length
        [0, 4, 5], [0, 5, 3],  # ramp
    ]
    return TriMesh(v, f)


def merge(meshes) -> TriMesh:
    """Concatenate meshes into one (components stay separate)."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(faces))
