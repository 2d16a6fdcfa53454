"""Collision and floating detection, and per-step benchmark metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyTrajectory
from .kernels import grid_inside, points_inside, triangle_arrays
from .mesh import TriMesh
from .scene import Scene

INFLATE_EPS = 0.005
VOXEL_RES = 64
COLLISION_THRESHOLD = 0.01
GROUND_DISTANCE = 0.01
# downward probe starts this far above the bottom face so resting contacts register
PROBE_LIFT = 1e-3


@dataclass(frozen=True)
class CollisionReport:
    colliding: bool
    fraction: float
    against: tuple[str, ...]
    fractions: dict

    def to_json(self) -> dict:
        return {
            "colliding": self.colliding,
            "fraction": self.fraction,
            "against": list(self.against),
            "fractions": dict(self.fractions),
        }


@dataclass(frozen=True)
class GroundingReport:
    grounded: dict
    passed: bool
    floating: tuple[str, ...]

    def to_json(self) -> dict:
        return {"grounded": dict(self.grounded), "pass": self.passed, "floating": list(self.floating)}


@dataclass(frozen=True)
class StepMetrics:
    collision_rate: float
    floating_rate: float
    steps: int
    records: tuple = ()

    def to_json(self) -> dict:
        return {
            "collision_rate": self.collision_rate,
            "floating_rate": self.floating_rate,
            "steps": self.steps,
            "records": list(self.records),
        }


# ---------------------------------------------------------------------------
# solids
# ---------------------------------------------------------------------------


def _welded(mesh: TriMesh) -> TriMesh:
    w = mesh.weld_map
    if np.array_equal(w, np.arange(len(w))):
        return mesh
    return TriMesh(mesh.vertices, w[mesh.faces])


def solidify(mesh: TriMesh, thickness: float) -> TriMesh:
    """Give an open surface volume by extruding it ``thickness`` against its normals.

    Closed meshes are returned unchanged: an inward shell does not alter the
    region they enclose.
    """
    if mesh.is_closed:
        return mesh
    mesh = _welded(mesh)
    v, f = mesh.vertices, mesh.faces
    fn = mesh.face_normals
    vn = np.zeros_like(v)
    tri = v[f]
    for k in range(3):
        a = tri[:, (k + 1) % 3] - tri[:, k]
        b = tri[:, (k + 2) % 3] - tri[:, k]
        ang = np.arccos(np.clip(np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)), -1, 1))
        np.add.at(vn, f[:, k], fn * ang[:, None])
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-12)
    # even thickness: scale so each adjacent face plane moves by ``thickness``
    worst = np.ones(len(v))
    for k in range(3):
        np.minimum.at(worst, f[:, k], np.einsum("ij,ij->i", vn[f[:, k]], fn))
    scale = 1.0 / np.clip(worst, 0.3, 1.0)
    inner = v - vn * (thickness * scale)[:, None]
    n = len(v)
    faces = [f, f[:, [0, 2, 1]] + n]
    for (a, b), fs in mesh.edge_faces.items():
        if len(fs) != 1:
            continue
        tri_f = list(f[fs[0]])
        ia = tri_f.index(a)
        # orient the rim along the owning face's winding
        if tri_f[(ia + 1) % 3] != b:
            a, b = b, a
        faces.append(np.array([[b, a, a + n], [b, a + n, b + n]]))
    return TriMesh(np.vstack([v, inner]), np.vstack(faces))


class _Solid:
    __slots__ = ("lo", "hi", "tris", "raw")

    def __init__(self, mesh: TriMesh, eps: float):
        m = solidify(mesh, eps)
        self.lo, self.hi = m.bounds
        self.raw = m.vertices[m.faces]
        self.tris = triangle_arrays(m.vertices, m.faces)

    def contains(self, pts):
        return points_inside(pts, *self.tris)

    def grid(self, lo, hi, resolution):
        return grid_inside(self.raw, lo, hi, resolution)


def _solid(scene: Scene, idx: int, eps: float) -> _Solid:
    cache = scene.__dict__.setdefault("_solid_cache", {})
    key = (idx, eps)
    if key not in cache:
        cache[key] = _Solid(scene.objects[idx].world_mesh, eps)
    return cache[key]


def intersection_volume(a: _Solid, b: _Solid, resolution: int = VOXEL_RES) -> float:
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    ext = hi - lo
    if np.any(ext <= 0):
        return 0.0
    in_a = a.grid(lo, hi, resolution)
    if not in_a.any():
        return 0.0
    count = np.count_nonzero(in_a & b.grid(lo, hi, resolution))
    return float(count) * float(np.prod(ext)) / resolution**3


def check_collision(
    scene: Scene,
    subject: str,
    *,
    eps: float = INFLATE_EPS,
    resolution: int = VOXEL_RES,
    threshold: float = COLLISION_THRESHOLD,
) -> CollisionReport:
    si = scene.index_of(subject)
    sub = _solid(scene, si, eps)
    box_vol = float(np.prod(np.maximum(sub.hi - sub.lo, eps)))
    fractions = {}
    for j, other in enumerate(scene.objects):
        if j == si:
            continue
        olo, ohi = other.bbox()
        # broad phase with eps padding
        if np.any(olo - eps > sub.hi) or np.any(ohi + eps < sub.lo):
            continue
        vol = intersection_volume(sub, _solid(scene, j, eps), resolution)
        if vol > 0:
            fractions[other.name] = vol / box_vol
    against = tuple(n for n, fr in fractions.items() if fr > threshold)
    worst = max(fractions.values(), default=0.0)
    return CollisionReport(bool(against), worst, against, fractions)


def grounded_flags(scene: Scene, distance: float = GROUND_DISTANCE) -> list[bool]:
    n = len(scene.objects)
    if n == 0:
        return []
    geo = scene.geometry
    flags = []
    down = np.array([[0.0, 0.0, -1.0]])
    for i, obj in enumerate(scene.objects):
        lo, hi = obj.bbox()
        origin = np.array([[(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2] + PROBE_LIFT]])
        t, hit, _ = geo.cast(origin, down, exclude=(i,))
        flags.append(bool(hit[0] >= 0 and t[0] - PROBE_LIFT <= distance))
    return flags


def check_floating(scene: Scene, distance: float = GROUND_DISTANCE) -> GroundingReport:
    flags = grounded_flags(scene, distance)
    grounded = {o.name: g for o, g in zip(scene.objects, flags)}
    floating = tuple(o.name for o, g in zip(scene.objects, flags) if o.initially_grounded and not g)
    return GroundingReport(grounded, not floating, floating)


def compute_metrics(trajectory: Sequence[tuple[Scene, str]], **collision_kw) -> StepMetrics:
    if not trajectory:
        raise EmptyTrajectory("metrics need at least one step")
    records = []
    for k, (scene, subject) in enumerate(trajectory):
        coll = check_collision(scene, subject, **collision_kw)
        ground = check_floating(scene)
        records.append({
            "step": k,
            "subject": subject,
            "colliding": coll.colliding,
            "collision_fraction": coll.fraction,
            "floating": not ground.passed,
            "floating_objects": list(ground.floating),
        })
    n = len(records)
    return StepMetrics(
        sum(r["colliding"] for r in records) / n,
        sum(r["floating"] for r in records) / n,
        n,
        tuple(records),
    )
