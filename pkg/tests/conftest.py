import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from arrangekit.mesh import box, grid_plane, save_obj
from arrangekit.scene import Camera, ObjectInstance, Pose, make_scene

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SUITE_DIR = Path(__file__).parent / "suite"


def room_camera(pos=(0.0, -3.0, 2.1), look=(0.0, 0.4, 0.5)) -> Camera:
    return Camera.look_at(pos, look, fov_deg=60.0)


def floor(size=8.0) -> ObjectInstance:
    return ObjectInstance("floor", box((size, size, 0.1), (0.0, 0.0, -0.05)))


def block(name, size, at, yaw=0.0) -> ObjectInstance:
    """Box whose local origin is its bottom center."""
    return ObjectInstance(name, box(size, (0.0, 0.0, size[2] / 2)), Pose(tuple(at), yaw))


def floor_cube_scene(cube_at=(0.0, 0.0, 0.0)):
    return make_scene([floor(), block("cube", (0.4, 0.4, 0.4), cube_at)], room_camera())


def write_manifest(tmp_path, objects, camera=None):
    """Write OBJ files plus a scene manifest; returns the manifest path."""
    cam = camera or room_camera()
    entries = []
    for o in objects:
        rel = f"{o.name}.obj"
        save_obj(o.mesh, tmp_path / rel)
        entries.append({"name": o.name, "mesh": rel, "translation": list(o.pose.translation), "yaw": o.pose.yaw})
    manifest = {
        "camera": {"position": cam.position.tolist(), "rotation": cam.rotation.tolist(), "fov_deg": math.degrees(cam.fov)},
        "objects": entries,
    }
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(manifest))
    return path


@pytest.fixture
def cube_scene():
    return floor_cube_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def flat_floor():
    return grid_plane((10.0, 10.0), (10, 10))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
