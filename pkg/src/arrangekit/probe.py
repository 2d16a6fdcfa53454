"""Visual probing tools and planar-surface extraction."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoHit, UnknownObject
from .mesh import TriMesh
from .raster import DEFAULT_RESOLUTION, render_highlight, render_instance_map
from .scene import Scene, pixel_ray

COS_DIST = 0.05


@dataclass(frozen=True, eq=False)
class PlanarSurface:
    owner: str
    id: str
    vertices: np.ndarray  # ordered boundary loop, world coordinates
    normal: np.ndarray
    faces: tuple[int, ...] = ()
    area: float = 0.0

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "owner": self.owner,
            "normal": self.normal.tolist(),
            "vertices": self.vertices.tolist(),
            "area": self.area,
        }


@dataclass(frozen=True, eq=False)
class ProbeHit:
    position: np.ndarray
    object: str
    surface: PlanarSurface
    normal: np.ndarray
    distance: float = 0.0

    def to_json(self) -> dict:
        return {
            "position": self.position.tolist(),
            "object": self.object,
            "surface": self.surface.id,
            "normal": self.normal.tolist(),
            "distance": self.distance,
            "surface_vertices": self.surface.vertices.tolist(),
        }


def grow_faces(mesh: TriMesh, seed: int, cos_dist: float = COS_DIST, allowed=None) -> list[int]:
    """BFS over edge-adjacent faces whose normal is within ``cos_dist`` of the seed's."""
    normals = mesh.face_normals
    ref = normals[seed]
    nbrs = mesh.face_neighbors
    seen = {seed}
    order = [seed]
    queue = deque([seed])
    while queue:
        f = queue.popleft()
        for g in nbrs[f]:
            if g in seen or (allowed is not None and g not in allowed):
                continue
            if 1.0 - float(normals[g] @ ref) <= cos_dist:
                seen.add(g)
                order.append(g)
                queue.append(g)
    return sorted(order)


def boundary_loop(mesh: TriMesh, faces: Sequence[int]) -> list[int]:
    """Ordered (welded) vertex indices of the longest boundary loop of a face group."""
    weld = mesh.weld_map
    directed = {}
    count: dict[tuple[int, int], int] = {}
    for fi in faces:
        w = [int(weld[i]) for i in mesh.faces[fi]]
        for a, b in ((w[0], w[1]), (w[1], w[2]), (w[2], w[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
            directed[(a, b)] = True
    nxt = {}
    for (a, b) in directed:
        if count[(min(a, b), max(a, b))] == 1:
            nxt[a] = b
    loops = []
    visited = set()
    for start in sorted(nxt):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        cur = nxt[start]
        while cur != start and cur in nxt and cur not in visited:
            loop.append(cur)
            visited.add(cur)
            cur = nxt[cur]
        loops.append(loop)
    if not loops:
        return sorted({int(weld[i]) for fi in faces for i in mesh.faces[fi]})
    return max(loops, key=len)


def _drop_collinear(pts: np.ndarray, idx: list[int]) -> list[int]:
    if len(idx) <= 3:
        return idx
    keep = []
    n = len(idx)
    for k in range(n):
        a, b, c = pts[idx[k - 1]], pts[idx[k]], pts[idx[(k + 1) % n]]
        if np.linalg.norm(np.cross(b - a, c - b)) > 1e-12 * max(1.0, np.linalg.norm(c - a)):
            keep.append(idx[k])
    return keep if len(keep) >= 3 else idx


def surface_from_faces(mesh: TriMesh, faces: Sequence[int], seed: int, owner: str = "", sid: str = "") -> PlanarSurface:
    loop = _drop_collinear(mesh.vertices, boundary_loop(mesh, faces))
    verts = mesh.vertices[loop].copy()
    verts.setflags(write=False)
    return PlanarSurface(
        owner=owner,
        id=sid,
        vertices=verts,
        normal=mesh.face_normals[seed].copy(),
        faces=tuple(int(f) for f in faces),
        area=float(mesh.face_areas[list(faces)].sum()),
    )


def extract_surface(mesh: TriMesh, seed: int, owner: str = "", sid: str = "", cos_dist: float = COS_DIST) -> PlanarSurface:
    """Planar face group grown from ``seed`` on an already-posed mesh."""
    return surface_from_faces(mesh, grow_faces(mesh, seed, cos_dist), seed, owner, sid)


def surface_partition(mesh: TriMesh, cos_dist: float = COS_DIST) -> list[tuple[int, list[int]]]:
    """Partition all faces into surfaces; ordinal k = position in the returned list.

    Seeds are taken largest face first (upward-facing first on ties) and
    groups are ordered by descending total area with the same tie-break.
    Cached per mesh; invariant under yaw and translation.
    """
    cache = mesh.__dict__.setdefault("_partition", {})
    if cos_dist in cache:
        return cache[cos_dist]
    areas = mesh.face_areas
    nz = mesh.face_normals[:, 2]
    order = sorted(range(len(mesh.faces)), key=lambda f: (-round(areas[f], 12), -round(nz[f], 12), f))
    unassigned = set(range(len(mesh.faces)))
    groups = []
    for f in order:
        if f not in unassigned:
            continue
        g = grow_faces(mesh, f, cos_dist, allowed=unassigned)
        unassigned.difference_update(g)
        groups.append((f, g))
    groups.sort(key=lambda sg: (-round(float(areas[sg[1]].sum()), 12), -round(float(nz[sg[0]]), 12), min(sg[1])))
    cache[cos_dist] = groups
    return groups


def surface_ordinal(mesh: TriMesh, face: int) -> int:
    for k, (_, g) in enumerate(surface_partition(mesh)):
        if face in g:
            return k
    raise ValueError(f"face {face} not in mesh")


def surface_id(owner: str, k: int) -> str:
    return f"{owner}::surf{k}"


def list_surfaces(scene: Scene, name: str) -> list[PlanarSurface]:
    obj = scene.get(name)
    wm = obj.world_mesh
    return [surface_from_faces(wm, g, seed, name, surface_id(name, k)) for k, (seed, g) in enumerate(surface_partition(obj.mesh))]


def get_surface(scene: Scene, sid: str) -> PlanarSurface:
    owner, sep, rest = sid.rpartition("::surf")
    if not sep or not rest.isdigit():
        raise UnknownObject(f"bad surface id {sid!r}")
    obj = scene.get(owner)
    parts = surface_partition(obj.mesh)
    k = int(rest)
    if k >= len(parts):
        raise UnknownObject(f"unknown surface {sid!r}")
    seed, g = parts[k]
    return surface_from_faces(obj.world_mesh, g, seed, owner, sid)


# ---------------------------------------------------------------------------
# tools
# ---------------------------------------------------------------------------


def ray_probe(scene: Scene, pixel, exclude: Sequence[str] = ()) -> ProbeHit:
    px = np.asarray(pixel, float)
    if px.shape != (2,) or not np.all(np.isfinite(px)):
        raise ValueError("pixel must be two finite numbers")
    if not scene.objects:
        raise NoHit("ray escapes the scene")
    origin, d = pixel_ray(scene.camera, px)
    skip = [scene.index_of(n) for n in exclude]
    t, obj, face = scene.geometry.cast(origin[None], d[None], exclude=skip)
    if obj[0] < 0:
        raise NoHit(f"ray through {px.tolist()} escapes the scene")
    inst = scene.objects[int(obj[0])]
    wm = inst.world_mesh
    f = int(face[0])
    surf = extract_surface(wm, f, inst.name, surface_id(inst.name, surface_ordinal(inst.mesh, f)))
    return ProbeHit(origin + t[0] * d, inst.name, surf, wm.face_normals[f].copy(), float(t[0]))


def _area_pixels(area, width, height):
    x0, y0, x1, y1 = (float(v) for v in area)
    x0, x1 = sorted((min(max(x0, 0.0), 1.0), min(max(x1, 0.0), 1.0)))
    y0, y1 = sorted((min(max(y0, 0.0), 1.0), min(max(y1, 0.0), 1.0)))
    if x1 <= x0 or y1 <= y0:
        return None
    c0, c1 = int(np.floor(x0 * width)), int(np.ceil(x1 * width))
    r0, r1 = int(np.floor(y0 * height)), int(np.ceil(y1 * height))
    return slice(r0, r1), slice(c0, c1)


def list_objects_in_area(scene: Scene, area, resolution: int = DEFAULT_RESOLUTION) -> list[str]:
    """Objects with any instance-map pixel in ``area`` = (x0, y0, x1, y1), largest first."""
    sel = _area_pixels(area, resolution, resolution)
    if sel is None:
        return []
    imap = render_instance_map(scene, resolution, resolution)
    ids, counts = np.unique(imap.index[sel], return_counts=True)
    hits = [(int(c), int(i)) for i, c in zip(ids, counts) if i > 0]
    hits.sort(key=lambda ci: (-ci[0], ci[1]))
    return [scene.objects[i - 1].name for _, i in hits]


def render_with_highlight(scene: Scene, names: Sequence[str], colors: Sequence[Sequence[int]], resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    return render_highlight(scene, names, colors, resolution, resolution)
