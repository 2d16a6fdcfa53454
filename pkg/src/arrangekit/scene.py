"""Scene data model: posed meshes, a pinhole camera, manifest loading."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BehindCamera, DegenerateMesh, MissingFile, ParseError, UnknownObject
from .mesh import TriMesh, load_obj

DIRECTIONS = {
    "+x": np.array([1.0, 0.0, 0.0]),
    "-x": np.array([-1.0, 0.0, 0.0]),
    "+y": np.array([0.0, 1.0, 0.0]),
    "-y": np.array([0.0, -1.0, 0.0]),
    "+z": np.array([0.0, 0.0, 1.0]),
    "-z": np.array([0.0, 0.0, -1.0]),
}


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    y = math.fmod(float(yaw) + math.pi, 2 * math.pi)
    if y < 0:
        y += 2 * math.pi
    y -= math.pi
    return y if y < math.pi else -math.pi


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        t = tuple(float(x) for x in self.translation)
        if len(t) != 3:
            raise ValueError("translation must have 3 components")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def rotation(self) -> np.ndarray:
        return yaw_matrix(self.yaw)

    def as_array(self) -> np.ndarray:
        return np.array([*self.translation, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Pose":
        return cls(tuple(float(x) for x in a[:3]), float(a[3]))

    def to_json(self) -> dict:
        return {"translation": list(self.translation), "yaw": self.yaw}

    @classmethod
    def from_json(cls, d) -> "Pose":
        return cls(tuple(d.get("translation", (0, 0, 0))), float(d.get("yaw", 0.0)))


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera. Local axes: +X right, +Y up, looking down -Z."""

    position: np.ndarray
    rotation: np.ndarray  # camera-to-world, columns are the local axes
    fov: float  # vertical field of view, radians
    aspect: float = 1.0  # width / height

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation must be orthonormal")
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)
        if not (0 < self.fov < math.pi):
            raise ValueError("fov must be in (0, pi)")
        if self.aspect <= 0:
            raise ValueError("aspect must be positive")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0), fov_deg=60.0, aspect=1.0) -> "Camera":
        position = np.asarray(position, float)
        back = position - np.asarray(target, float)
        back /= np.linalg.norm(back)
        right = np.cross(np.asarray(up, float), back)
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("up vector parallel to viewing direction")
        right /= np.linalg.norm(right)
        cam_up = np.cross(back, right)
        return cls(position, np.column_stack([right, cam_up, back]), math.radians(fov_deg), aspect)

    @property
    def tan_half(self) -> tuple[float, float]:
        ty = math.tan(self.fov / 2)
        return ty * self.aspect, ty

    def to_json(self) -> dict:
        return {
            "position": self.position.tolist(),
            "rotation": self.rotation.tolist(),
            "fov_deg": math.degrees(self.fov),
            "aspect": self.aspect,
        }


def project(camera: Camera, point) -> np.ndarray:
    """World point -> normalized image coords (origin top-left, y down)."""
    pc = camera.rotation.T @ (np.asarray(point, float) - camera.position)
    depth = -pc[2]
    if depth <= 0:
        raise BehindCamera(f"point {list(map(float, point))} is behind the camera")
    tx, ty = camera.tan_half
    return np.array([0.5 + 0.5 * pc[0] / (depth * tx), 0.5 - 0.5 * pc[1] / (depth * ty)])


def project_batch(camera: Camera, points: np.ndarray):
    """Vectorized projection with Jacobians.

    Returns (xy (N,2), jac (N,2,3), depth (N,)). Rows with depth <= 0 are
    garbage; callers check ``depth``.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    pc = (pts - camera.position) @ camera.rotation
    depth = -pc[:, 2]
    safe = np.where(depth > 0, depth, 1.0)
    tx, ty = camera.tan_half
    xy = np.column_stack([0.5 + 0.5 * pc[:, 0] / (safe * tx), 0.5 - 0.5 * pc[:, 1] / (safe * ty)])
    # d(pc_x / depth)/d pc = [1/depth, 0, pc_x/depth^2] since depth = -pc_z
    dpc = np.zeros((len(pts), 2, 3))
    dpc[:, 0, 0] = 0.5 / (tx * safe)
    dpc[:, 0, 2] = 0.5 * pc[:, 0] / (tx * safe**2)
    dpc[:, 1, 1] = -0.5 / (ty * safe)
    dpc[:, 1, 2] = -0.5 * pc[:, 1] / (ty * safe**2)
    jac = dpc @ camera.rotation.T
    return xy, jac, depth


def pixel_ray(camera: Camera, pixel) -> tuple[np.ndarray, np.ndarray]:
    """Origin and unit world direction of the ray through a normalized pixel."""
    dirs = pixel_rays(camera, np.asarray(pixel, float).reshape(1, 2))
    return camera.position.copy(), dirs[0]


def pixel_rays(camera: Camera, pixels: np.ndarray) -> np.ndarray:
    px = np.asarray(pixels, float).reshape(-1, 2)
    tx, ty = camera.tan_half
    local = np.column_stack([(2 * px[:, 0] - 1) * tx, (1 - 2 * px[:, 1]) * ty, -np.ones(len(px))])
    d = local @ camera.rotation.T
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def unproject(camera: Camera, pixel, depth: float) -> np.ndarray:
    """Point at camera-space depth ``depth`` seen at ``pixel``."""
    o, d = pixel_ray(camera, pixel)
    forward = -camera.rotation[:, 2]
    return o + d * (depth / float(d @ forward))


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    name: str
    mesh: TriMesh
    pose: Pose = field(default_factory=Pose)
    front_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    up_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    initially_grounded: bool = False

    def __post_init__(self):
        f = np.asarray(self.front_axis, float)
        u = np.asarray(self.up_axis, float)
        if not (abs(np.linalg.norm(f) - 1) < 1e-6 and abs(np.linalg.norm(u) - 1) < 1e-6):
            raise ValueError(f"{self.name}: front/up axes must be unit vectors")
        if abs(f @ u) > 1e-6:
            raise ValueError(f"{self.name}: front_axis must be perpendicular to up_axis")
        object.__setattr__(self, "front_axis", tuple(float(x) for x in f))
        object.__setattr__(self, "up_axis", tuple(float(x) for x in u))

    @cached_property
    def world_mesh(self) -> TriMesh:
        return self.mesh.transformed(self.pose.rotation, self.pose.translation)

    @property
    def local_bounds(self):
        return self.mesh.bounds

    @property
    def local_center(self) -> np.ndarray:
        lo, hi = self.mesh.bounds
        return 0.5 * (lo + hi)

    @property
    def center(self) -> np.ndarray:
        """Center of the local bounding box under the current pose."""
        return self.pose.rotation @ self.local_center + np.asarray(self.pose.translation)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.world_mesh.bounds


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple[ObjectInstance, ...]
    camera: Camera
    version: int = 0

    def __post_init__(self):
        objs = tuple(self.objects)
        names = [o.name for o in objs]
        if len(set(names)) != len(names):
            raise ValueError("object names must be unique")
        object.__setattr__(self, "objects", objs)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {o.name: i for i, o in enumerate(self.objects)}

    @property
    def names(self) -> list[str]:
        return [o.name for o in self.objects]

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownObject(f"unknown object {name!r}") from None

    def get(self, name: str) -> ObjectInstance:
        return self.objects[self.index_of(name)]

    def __contains__(self, name) -> bool:
        return name in self._index

    @cached_property
    def geometry(self):
        from .kernels import SceneGeometry

        return SceneGeometry.from_scene(self)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.version).encode())
        h.update(self.camera.position.tobytes() + self.camera.rotation.tobytes())
        h.update(repr((self.camera.fov, self.camera.aspect)).encode())
        for o in self.objects:
            h.update(o.name.encode())
            h.update(o.mesh.vertices.tobytes() + o.mesh.faces.tobytes())
            h.update(repr((o.pose.translation, o.pose.yaw, o.front_axis, o.up_axis, o.initially_grounded)).encode())
        return h.hexdigest()


def apply_pose(scene: Scene, object_name: str, pose: Pose) -> Scene:
    idx = scene.index_of(object_name)
    objs = list(scene.objects)
    objs[idx] = replace(objs[idx], pose=pose)
    return Scene(tuple(objs), scene.camera, scene.version + 1)


def world_bbox(scene: Scene, object_name: str) -> tuple[np.ndarray, np.ndarray]:
    return scene.get(object_name).bbox()


def bbox_face_center(lo, hi, direction: str) -> np.ndarray:
    axis = "xyz".index(direction[1])
    c = 0.5 * (np.asarray(lo) + np.asarray(hi))
    c[axis] = hi[axis] if direction[0] == "+" else lo[axis]
    return c


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def _vec(d: dict, key: str, default=None, n=3):
    if key not in d:
        if default is None:
            raise ParseError("missing required field", field=key)
        return tuple(default)
    val = d[key]
    if not isinstance(val, (list, tuple)) or len(val) != n:
        raise ParseError(f"expected a list of {n} numbers", field=key)
    try:
        return tuple(float(x) for x in val)
    except (TypeError, ValueError):
        raise ParseError("non-numeric entry", field=key) from None


def camera_from_json(d: dict) -> Camera:
    try:
        fov = math.radians(float(d.get("fov_deg", 60.0)))
        aspect = float(d.get("aspect", 1.0))
        pos = _vec(d, "position")
        if "rotation" in d:
            return Camera(pos, d["rotation"], fov, aspect)
        target = _vec(d, "look_at")
        up = _vec(d, "up", (0.0, 0.0, 1.0))
        return Camera.look_at(pos, target, up, math.degrees(fov), aspect)
    except ValueError as exc:
        raise ParseError(str(exc), field="camera") from None


def scene_from_manifest(data: dict, base_dir: Path, mesh_cache: dict | None = None) -> Scene:
    if not isinstance(data, dict):
        raise ParseError("manifest root must be an object")
    if "camera" not in data:
        raise ParseError("missing required field", field="camera")
    camera = camera_from_json(data["camera"])
    objs = []
    raw_objects = data.get("objects", [])
    if not isinstance(raw_objects, list):
        raise ParseError("expected a list", field="objects")
    for i, od in enumerate(raw_objects):
        where = f"objects[{i}]"
        if "name" not in od or "mesh" not in od:
            raise ParseError("object needs 'name' and 'mesh'", field=where)
        mesh_path = (base_dir / od["mesh"]).resolve()
        try:
            if mesh_cache is not None and mesh_path in mesh_cache:
                mesh = mesh_cache[mesh_path]
            else:
                mesh = load_obj(mesh_path)
                if mesh_cache is not None:
                    mesh_cache[mesh_path] = mesh
        except DegenerateMesh as exc:
            raise DegenerateMesh(f"object {od['name']!r}: {exc}") from None
        try:
            obj = ObjectInstance(
                name=str(od["name"]),
                mesh=mesh,
                pose=Pose(_vec(od, "translation", (0, 0, 0)), float(od.get("yaw", 0.0))),
                front_axis=_vec(od, "front_axis", (0.0, 1.0, 0.0)),
                up_axis=_vec(od, "up_axis", (0.0, 0.0, 1.0)),
            )
        except ValueError as exc:
            raise ParseError(str(exc), field=where) from None
        objs.append(obj)
    try:
        scene = Scene(tuple(objs), camera, int(data.get("version", 0)))
    except ValueError as exc:
        raise ParseError(str(exc), field="objects") from None
    return mark_initial_grounding(scene)


def mark_initial_grounding(scene: Scene) -> Scene:
    from .validate import grounded_flags

    flags = grounded_flags(scene)
    objs = tuple(replace(o, initially_grounded=bool(g)) for o, g in zip(scene.objects, flags))
    return Scene(objs, scene.camera, scene.version)


def load_scene(manifest_path) -> Scene:
    path = Path(manifest_path)
    if not path.is_file():
        raise MissingFile(f"scene manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return scene_from_manifest(data, path.parent)


def scene_to_manifest(scene: Scene, mesh_paths: dict[str, str]) -> dict:
    """Inverse of ``scene_from_manifest`` given where each mesh lives."""
    cam = scene.camera
    return {
        "camera": {
            "position": cam.position.tolist(),
            "rotation": cam.rotation.tolist(),
            "fov_deg": math.degrees(cam.fov),
            "aspect": cam.aspect,
        },
        "objects": [
            {
                "name": o.name,
                "mesh": mesh_paths[o.name],
                "translation": list(o.pose.translation),
                "yaw": o.pose.yaw,
                "front_axis": list(o.front_axis),
                "up_axis": list(o.up_axis),
            }
            for o in scene.objects
        ],
    }


def make_scene(objects: Iterable[ObjectInstance], camera: Camera, *, ground: bool = True) -> Scene:
    """Build a scene in memory; optionally record initial grounding."""
    scene = Scene(tuple(objects), camera)
    return mark_initial_grounding(scene) if ground else scene


def poses_of(scene: Scene) -> dict[str, Pose]:
    return {o.name: o.pose for o in scene.objects}


def names_of(objs: Sequence[ObjectInstance]) -> list[str]:
    return [o.name for o in objs]
