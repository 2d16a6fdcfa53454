"""Synthetic benchmark suite: procedural scenes, plan scripts and a runner.

Layout written by ``generate_suite``::

    <suite>/suite.json               task index
    <suite>/<task>/task.json         name, description, feasible flag, seed
    <suite>/<task>/scene.json        scene manifest
    <suite>/<task>/plan.json         plan script
    <suite>/<task>/meshes/*.obj
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .agents import ScriptedEvaluator, ScriptedExecutor, ScriptedPlanner, load_plan_script
from .constraints import (
    BackTo,
    CloseToPix,
    ConstraintSet,
    Contact,
    Distance,
    FaceTo,
    NoOverhang,
    Rotate,
    constraint_set_to_json,
)
from .errors import MissingFile, ParseError, SearchExhausted
from .mesh import TriMesh, box, merge, prism, save_obj
from .probe import list_surfaces
from .scene import Camera, ObjectInstance, Pose, Scene, apply_pose, load_scene, make_scene, project, scene_to_manifest
from .search import Agents, SearchConfig, search
from .validate import compute_metrics


@dataclass(frozen=True)
class TaskSpec:
    name: str
    description: str
    feasible: bool
    s_max: int
    seed: int
    path: Path | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "feasible": self.feasible,
            "s_max": self.s_max,
            "seed": self.seed,
            "scene": "scene.json",
            "plan": "plan.json",
        }


# ---------------------------------------------------------------------------
# procedural furniture (all meshes have their origin at the bottom center)
# ---------------------------------------------------------------------------


def block(w, d, h) -> TriMesh:
    return box((w, d, h), (0.0, 0.0, h / 2))


def cylinder(r, h, sides=12) -> TriMesh:
    return prism(r, h, sides, (0.0, 0.0, h / 2))


def table(w, d, h, top=0.04, leg=0.05) -> TriMesh:
    x = w / 2 - leg
    y = d / 2 - leg
    legs = [box((leg, leg, h - top), (sx * x, sy * y, (h - top) / 2)) for sx in (-1, 1) for sy in (-1, 1)]
    return merge([box((w, d, top), (0, 0, h - top / 2))] + legs)


def shelf(w, d, levels, height, board=0.03, side=0.03) -> TriMesh:
    inner = w - 2 * side
    parts = [box((side, d, height), (sx * (w - side) / 2, 0, height / 2)) for sx in (-1, 1)]
    parts += [box((inner, d, board), (0, 0, z + board / 2)) for z in levels]
    return merge(parts)


def chair(w=0.45, d=0.45, seat=0.45, back=0.45, t=0.05) -> TriMesh:
    # backrest on the -y edge, so the chair faces +y
    return merge([
        box((w, d, seat), (0, 0, seat / 2)),
        box((w, t, back), (0, -d / 2 + t / 2, seat + back / 2)),
    ])


def sofa(w=1.8, d=0.8, seat=0.42, back=0.4) -> TriMesh:
    return merge([
        box((w, d, seat), (0, 0, seat / 2)),
        box((w, 0.2, back), (0, -d / 2 + 0.1, seat + back / 2)),
    ])


def floor_slab(size=8.0) -> TriMesh:
    return box((size, size, 0.1), (0, 0, -0.05))


# ---------------------------------------------------------------------------
# task builder
# ---------------------------------------------------------------------------


class TaskBuilder:
    """Accumulates objects and plan steps, tracking the expected scene so
    later targets account for earlier moves."""

    def __init__(self, name, description, camera: Camera, feasible=True, s_max=None):
        self.name = name
        self.description = description
        self.camera = camera
        self.feasible = feasible
        self.s_max = s_max
        self.objects: list[ObjectInstance] = []
        self.steps: list[dict] = []
        self.expect: Scene | None = None
        self.add("floor", floor_slab(), (0, 0, 0))

    def add(self, name, mesh, at, yaw=0.0, front=(0.0, 1.0, 0.0)):
        self.objects.append(ObjectInstance(name, mesh, Pose(tuple(at), yaw), front_axis=front))
        self.expect = None

    def scene(self) -> Scene:
        if self.expect is None:
            self.expect = make_scene(self.objects, self.camera)
        return self.expect

    def top(self, name, level=None) -> tuple[str, float]:
        """Id and height of an upward surface: the highest, or the level-th from the bottom."""
        ups = [s for s in list_surfaces(self.scene(), name) if s.normal[2] > 0.99]
        ups.sort(key=lambda s: (float(s.vertices[:, 2].max()), s.id))
        s = ups[-1] if level is None else ups[level]
        return s.id, float(s.vertices[:, 2].max())

    def _placement(self, name, xy, on, level, overhang, extra, yaw=0.0):
        sc = self.scene()
        obj = sc.get(name)
        lo, hi = obj.local_bounds
        sid, z = self.top(on, level)
        center = np.array([xy[0], xy[1], z + (hi[2] - lo[2]) / 2])
        target = tuple(round(float(v), 6) for v in project(self.camera, center))
        cons = [CloseToPix(target), Contact("-z", sid)]
        if overhang:
            cons.append(NoOverhang("-z", sid, overhang))
        cons.extend(extra)
        return target, ConstraintSet(name, tuple(cons)), Pose((xy[0], xy[1], z), yaw)

    def place(self, instruction, name, xy, on="floor", level=None, overhang=None, extra=(), variants=()):
        """Move ``name`` so it rests on ``on`` near ``xy``.

        ``variants`` are (xy, on, level, overhang, extra) tuples used on later
        visits; the expected scene follows the last one.
        """
        if overhang is None and on != "floor":
            overhang = "full"
        target, cs, pose = self._placement(name, xy, on, level, overhang, extra)
        step = {"instruction": instruction, "target": list(target), "constraints": constraint_set_to_json(cs)}
        final_pose = pose
        if variants:
            out = []
            for v_xy, v_on, v_level, v_overhang, v_extra in variants:
                if v_overhang is None and v_on != "floor":
                    v_overhang = "full"
                t, c, final_pose = self._placement(name, v_xy, v_on, v_level, v_overhang, v_extra)
                out.append({"target": list(t), "constraints": constraint_set_to_json(c)})
            step["variants"] = out
        self.steps.append(step)
        self.expect = apply_pose(self.scene(), name, final_pose)

    def rotate(self, instruction, name, degrees, on="floor"):
        sc = self.scene()
        obj = sc.get(name)
        sid, _ = self.top(on)
        target = tuple(round(float(v), 6) for v in project(self.camera, obj.center))
        cs = ConstraintSet(name, (Rotate(degrees), Contact("-z", sid)))
        self.steps.append({"instruction": instruction, "target": list(target), "constraints": constraint_set_to_json(cs)})
        self.expect = apply_pose(sc, name, Pose(obj.pose.translation, obj.pose.yaw + np.radians(degrees)))

    def write(self, root: Path, seed: int) -> TaskSpec:
        d = root / self.name
        (d / "meshes").mkdir(parents=True, exist_ok=True)
        paths = {}
        for o in self.objects:
            rel = f"meshes/{o.name}.obj"
            save_obj(o.mesh, d / rel)
            paths[o.name] = rel
        base = make_scene(self.objects, self.camera, ground=False)
        _dump(d / "scene.json", scene_to_manifest(base, paths))
        s_max = self.s_max or max(3, min(6, len(self.steps) + 1))
        _dump(d / "plan.json", {"instruction": self.description, "s_max": s_max, "steps": self.steps})
        spec = TaskSpec(self.name, self.description, self.feasible, s_max, seed, d)
        _dump(d / "task.json", spec.to_json())
        return spec


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _room_camera(pos=(0.0, -3.0, 2.1), look=(0.0, 0.4, 0.5)) -> Camera:
    return Camera.look_at(pos, look, fov_deg=60.0)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def task_clear_then_move_table() -> TaskBuilder:
    b = TaskBuilder("clear_then_move_table", "Move the table to the back of the room, clearing it first, then put the book back on it.", _room_camera())
    b.add("table", table(1.2, 0.7, 0.75), (0.0, 0.4, 0.0))
    b.add("book", block(0.25, 0.18, 0.05), (-0.3, 0.4, 0.75))
    b.add("mug", cylinder(0.05, 0.1), (0.1, 0.5, 0.75))
    b.add("lamp", cylinder(0.08, 0.4), (0.4, 0.35, 0.75))
    b.place("Put the book on the floor to the left.", "book", (-0.9, -0.5))
    b.place("Put the mug on the floor in front.", "mug", (-0.4, -0.8))
    b.place("Put the lamp on the floor to the right.", "lamp", (0.9, -0.4))
    b.place("Move the table back.", "table", (0.2, 1.2))
    b.place("Put the book back on the table.", "book", (0.2, 1.2), on="table")
    return b


def task_shelf_stacking() -> TaskBuilder:
    cam = _room_camera((0.0, -2.4, 1.4), (0.0, 0.6, 0.6))
    b = TaskBuilder("shelf_stacking", "Shelve the four books, two per board.", cam)
    b.add("shelf", shelf(1.0, 0.35, (0.0, 0.45, 0.9), 1.3), (0.0, 0.8, 0.0))
    for i, x in enumerate((-0.6, -0.3, 0.3, 0.6)):
        b.add(f"book{i + 1}", block(0.06, 0.22, 0.28), (x, -0.3, 0.0))
    b.place("Put book 1 on the middle board, left side.", "book1", (-0.25, 0.8), on="shelf", level=1)
    b.place("Put book 2 next to book 1.", "book2", (-0.1, 0.8), on="shelf", level=1)
    b.place("Put book 3 on the top board.", "book3", (0.1, 0.8), on="shelf", level=2)
    b.place("Put book 4 next to book 3.", "book4", (0.25, 0.8), on="shelf", level=2)
    return b


def task_crowd_table() -> TaskBuilder:
    """The first plan fills the table with the big crate; later crates no longer
    fit, and only revisiting step 0 (crate moved to the floor) succeeds."""
    b = TaskBuilder("crowd_table_backtrack", "Get the two small crates onto the table; the big crate may go anywhere.", _room_camera())
    b.add("table", table(1.0, 0.6, 0.7), (0.0, 0.6, 0.0))
    b.add("big_crate", block(0.5, 0.45, 0.3), (-1.0, -0.3, 0.0))
    b.add("crate_a", block(0.3, 0.45, 0.25), (0.2, -0.6, 0.0))
    b.add("crate_b", block(0.35, 0.45, 0.25), (0.9, -0.3, 0.0))
    b.place(
        "Put the big crate on the table.", "big_crate", (0.0, 0.6), on="table",
        variants=(((-1.0, 0.7), "floor", None, None, ()),),
    )
    b.place("Put crate A on the table.", "crate_a", (0.3, 0.6), on="table")
    b.place("Put crate B on the table.", "crate_b", (-0.25, 0.6), on="table")
    return b


def task_face_to() -> TaskBuilder:
    b = TaskBuilder("face_to_tv", "Arrange the seating so it faces the TV.", _room_camera())
    b.add("tv_stand", block(1.0, 0.4, 0.5), (0.0, 1.5, 0.0))
    b.add("tv", block(0.9, 0.08, 0.55), (0.0, 1.5, 0.5), front=(0.0, -1.0, 0.0))
    b.add("chair", chair(), (-1.1, -0.6, 0.0))
    b.add("armchair", chair(0.6, 0.6, 0.4, 0.4), (1.1, -0.6, 0.0))
    b.add("lamp", cylinder(0.1, 1.0), (1.2, 1.4, 0.0))
    b.place("Put the chair left of center, facing the TV.", "chair", (-0.6, 0.3), extra=(FaceTo("tv"),))
    b.place("Put the armchair right of center, facing the TV.", "armchair", (0.6, 0.2), extra=(FaceTo("tv"),))
    b.place("Move the lamp next to the chair.", "lamp", (-1.1, 0.5), extra=(Distance("chair", 0.55),))
    return b


def task_back_to() -> TaskBuilder:
    b = TaskBuilder("back_to", "Turn the bench and chair so their backs face the wall and the viewer.", _room_camera())
    b.add("wall", block(4.0, 0.1, 2.0), (0.0, 2.0, 0.0))
    b.add("bench", chair(1.0, 0.4, 0.45, 0.35), (-0.8, -0.5, 0.0))
    b.add("chair", chair(), (0.9, -0.5, 0.0))
    b.add("mirror", block(0.5, 0.05, 1.0), (1.3, 0.8, 0.0))
    b.place("Put the bench against the wall, back to the wall.", "bench", (-0.5, 1.5), extra=(BackTo("wall"),))
    b.place("Put the chair in the middle with its back to the camera.", "chair", (0.3, 0.4), extra=(BackTo("camera", "camera"),))
    b.place("Turn the mirror toward the viewer.", "mirror", (1.1, 1.0), extra=(FaceTo("camera", "camera"),))
    return b


def task_rotate_only() -> TaskBuilder:
    b = TaskBuilder("rotate_only", "Rotate the chair, planter and bench in place.", _room_camera())
    b.add("chair", chair(), (-0.9, 0.3, 0.0))
    b.add("planter", block(0.4, 0.25, 0.5), (0.0, 0.8, 0.0))
    b.add("bench", chair(0.9, 0.4, 0.45, 0.3), (0.9, -0.2, 0.0))
    b.rotate("Turn the chair a quarter turn left.", "chair", 90.0)
    b.rotate("Turn the planter 45 degrees right.", "planter", -45.0)
    b.rotate("Turn the bench around.", "bench", 180.0)
    return b


def task_center_overhang() -> TaskBuilder:
    b = TaskBuilder("center_overhang", "Put the wide trays on the small stools.", _room_camera())
    b.add("stool1", block(0.3, 0.3, 0.45), (-0.6, 0.6, 0.0))
    b.add("stool2", block(0.3, 0.3, 0.45), (0.6, 0.6, 0.0))
    b.add("tray1", block(0.45, 0.45, 0.04), (-0.8, -0.6, 0.0))
    b.add("tray2", block(0.45, 0.45, 0.04), (0.8, -0.6, 0.0))
    b.add("vase", cylinder(0.08, 0.3), (0.0, -0.4, 0.0))
    b.place("Put tray 1 on stool 1.", "tray1", (-0.6, 0.6), on="stool1", overhang="center")
    b.place("Move the vase back between the stools.", "vase", (0.0, 0.9))
    b.place("Put tray 2 on stool 2.", "tray2", (0.6, 0.6), on="stool2", overhang="center")
    return b


def task_kitchen() -> TaskBuilder:
    b = TaskBuilder("kitchen_counter", "Unload the cart onto the counter.", _room_camera((0.0, -2.6, 2.0), (0.0, 0.6, 0.7)))
    b.add("counter", block(1.8, 0.6, 0.9), (0.0, 1.0, 0.0))
    b.add("cart", table(0.6, 0.4, 0.6), (0.9, -0.2, 0.0))
    b.add("kettle", cylinder(0.09, 0.22), (0.72, -0.2, 0.6))
    b.add("cup", cylinder(0.045, 0.1), (0.86, -0.3, 0.6))
    b.add("plate", cylinder(0.12, 0.03, 16), (1.05, -0.2, 0.6))
    b.add("board", block(0.35, 0.25, 0.03), (-0.8, -0.3, 0.0))
    b.place("Put the kettle on the counter, right side.", "kettle", (0.5, 1.0), on="counter")
    b.place("Put the cup next to the kettle.", "cup", (0.25, 1.0), on="counter")
    b.place("Put the cutting board on the counter, left side.", "board", (-0.5, 1.0), on="counter")
    b.place("Put the plate in the middle of the counter.", "plate", (0.0, 1.0), on="counter")
    return b


def task_desk() -> TaskBuilder:
    b = TaskBuilder("desk_setup", "Set up the desk: monitor facing the viewer, keyboard, lamp and mug.", _room_camera((0.0, -2.4, 1.9), (0.0, 0.6, 0.6)))
    b.add("desk", table(1.4, 0.7, 0.74), (0.0, 0.8, 0.0))
    b.add("monitor", block(0.55, 0.12, 0.38), (-1.0, -0.2, 0.0), front=(0.0, -1.0, 0.0))
    b.add("keyboard", block(0.42, 0.14, 0.03), (-0.5, -0.6, 0.0))
    b.add("desk_lamp", cylinder(0.07, 0.35), (0.7, -0.5, 0.0))
    b.add("mug", cylinder(0.045, 0.1), (1.0, -0.1, 0.0))
    b.place("Put the monitor at the back of the desk facing me.", "monitor", (0.0, 0.95), on="desk", extra=(FaceTo("camera", "camera"),))
    b.place("Put the keyboard in front of the monitor.", "keyboard", (0.0, 0.65), on="desk")
    b.place("Put the lamp on the left of the desk.", "desk_lamp", (-0.5, 0.9), on="desk")
    b.place("Put the mug on the right of the desk.", "mug", (0.5, 0.7), on="desk")
    return b


def task_living_room() -> TaskBuilder:
    b = TaskBuilder("living_room", "Tidy the living room around the sofa.", _room_camera())
    b.add("sofa", sofa(), (0.0, 1.5, 0.0), yaw=np.pi)
    b.add("coffee_table", table(0.9, 0.5, 0.4), (-1.0, -0.4, 0.0))
    b.add("plant", cylinder(0.15, 0.7), (0.9, -0.6, 0.0))
    b.add("magazine", block(0.2, 0.28, 0.01), (0.2, -0.9, 0.0))
    b.add("remote", block(0.05, 0.16, 0.02), (-0.3, -0.9, 0.0))
    b.place("Put the coffee table in front of the sofa.", "coffee_table", (0.0, 0.6), extra=(Distance("sofa", 0.95),))
    b.place("Put the plant next to the sofa, right side.", "plant", (1.2, 1.4))
    b.place("Put the magazine on the coffee table.", "magazine", (-0.2, 0.6), on="coffee_table")
    b.place("Put the remote on the coffee table.", "remote", (0.25, 0.6), on="coffee_table")
    return b


def task_bedroom() -> TaskBuilder:
    b = TaskBuilder("bedroom", "Nightstands either side of the bed, lamp and book on top.", _room_camera((0.0, -2.8, 2.2), (0.0, 0.8, 0.4)))
    b.add("bed", block(1.4, 2.0, 0.5), (0.0, 1.3, 0.0))
    b.add("nightstand_l", block(0.4, 0.35, 0.5), (-1.3, -0.4, 0.0))
    b.add("nightstand_r", block(0.4, 0.35, 0.5), (1.3, -0.4, 0.0))
    b.add("lamp", cylinder(0.08, 0.35), (-0.5, -0.7, 0.0))
    b.add("book", block(0.15, 0.22, 0.04), (0.5, -0.7, 0.0))
    b.place("Put the left nightstand beside the bed head.", "nightstand_l", (-1.0, 2.0), extra=(Distance("bed", 1.2),))
    b.place("Put the right nightstand beside the bed head.", "nightstand_r", (1.0, 2.0), extra=(Distance("bed", 1.2),))
    b.place("Put the lamp on the left nightstand.", "lamp", (-1.0, 2.0), on="nightstand_l")
    b.place("Put the book on the right nightstand.", "book", (1.0, 2.0), on="nightstand_r")
    return b


def task_stack_boxes() -> TaskBuilder:
    b = TaskBuilder("stack_boxes", "Stack the boxes from largest to smallest.", _room_camera())
    b.add("box_l", block(0.6, 0.6, 0.35), (0.0, 0.6, 0.0))
    b.add("box_m", block(0.45, 0.45, 0.3), (-0.9, -0.4, 0.0))
    b.add("box_s", block(0.3, 0.3, 0.25), (0.9, -0.4, 0.0))
    b.add("cube", block(0.15, 0.15, 0.15), (0.0, -0.8, 0.0))
    b.place("Put the medium box on the large box.", "box_m", (0.0, 0.6), on="box_l")
    b.place("Put the small box on the medium box.", "box_s", (0.0, 0.6), on="box_m")
    b.place("Put the cube on top.", "cube", (0.0, 0.6), on="box_s")
    return b


def task_oversize() -> TaskBuilder:
    b = TaskBuilder("oversize_on_table", "Put the large board flat on the small table.", _room_camera(), feasible=False, s_max=3)
    b.add("table", table(0.8, 0.5, 0.7), (0.0, 0.6, 0.0))
    b.add("board", block(1.4, 0.9, 0.04), (0.0, -0.7, 0.0))
    b.place("Put the board on the table.", "board", (0.0, 0.6), on="table")
    return b


def task_full_shelf() -> TaskBuilder:
    cam = _room_camera((0.0, -2.4, 1.4), (0.0, 0.6, 0.6))
    b = TaskBuilder("full_shelf", "Fit one more box onto the full shelf board.", cam, feasible=False, s_max=3)
    b.add("shelf", shelf(1.0, 0.35, (0.0, 0.45), 0.9), (0.0, 0.8, 0.0))
    for i, x in enumerate((-0.33, -0.11, 0.11, 0.33)):
        b.add(f"bin{i}", block(0.2, 0.3, 0.3), (x, 0.8, 0.48))
    b.add("extra_bin", block(0.2, 0.3, 0.3), (0.8, -0.4, 0.0))
    b.place("Put the extra bin on the board.", "extra_bin", (0.0, 0.8), on="shelf", level=1)
    return b


TASKS = (
    task_clear_then_move_table,
    task_shelf_stacking,
    task_crowd_table,
    task_face_to,
    task_back_to,
    task_rotate_only,
    task_center_overhang,
    task_kitchen,
    task_desk,
    task_living_room,
    task_bedroom,
    task_stack_boxes,
    task_oversize,
    task_full_shelf,
)


def generate_suite(out_dir, seed: int = 0) -> list[TaskSpec]:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(len(TASKS))
    specs = [make().write(root, int(s)) for make, s in zip(TASKS, seeds)]
    _dump(root / "suite.json", {"seed": seed, "tasks": [s.name for s in specs]})
    return specs


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def load_task(task_dir):
    d = Path(task_dir)
    p = d / "task.json"
    if not p.is_file():
        raise MissingFile(f"task not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    spec = TaskSpec(data["name"], data.get("description", ""), bool(data.get("feasible", True)), int(data["s_max"]), int(data.get("seed", 0)), d)
    return spec, load_scene(d / data.get("scene", "scene.json")), load_plan_script(d / data.get("plan", "plan.json"))


def suite_tasks(suite_dir) -> list[Path]:
    root = Path(suite_dir)
    index = root / "suite.json"
    if not index.is_file():
        raise MissingFile(f"suite index not found: {index}")
    return [root / name for name in json.loads(index.read_text())["tasks"]]


def scripted_agents(script, config: SearchConfig = SearchConfig()) -> Agents:
    evaluators = [ScriptedEvaluator(config.solver.tau) for _ in range(config.evaluators)]
    return Agents(ScriptedPlanner(script), ScriptedExecutor(), evaluators)


def run_task(task_dir, config: SearchConfig = SearchConfig(), backtracking: bool = True) -> dict:
    spec, scene, script = load_task(task_dir)
    cfg = replace(config, seed=spec.seed, backtracking=backtracking)
    agents = scripted_agents(script, cfg)
    out = {"name": spec.name, "feasible": spec.feasible}
    try:
        res = search(scene, agents, cfg, s_max=script.s_max)
    except SearchExhausted as exc:
        out.update({"status": "exhausted", "message": str(exc), "steps": 0, "records": []})
        return out
    metrics = compute_metrics(res.trajectory()) if res.edits else None
    scores = [e.record.score for e in res.edits if e.record.score is not None]
    out.update({
        "status": "complete" if res.completed else "incomplete",
        "steps": len(res.edits),
        "executed": res.executed,
        "step_failures": len(res.failures),
        "trace": [list(t) for t in res.trace],
        "records": list(metrics.records) if metrics else [],
        "proxy_score": float(np.mean(scores)) if scores else None,
        "result": res.to_json(),
    })
    return out


def run_suite(suite_dir, config: SearchConfig = SearchConfig(), backtracking: bool = True) -> dict:
    t0 = time.perf_counter()
    tasks = [run_task(d, config, backtracking) for d in suite_tasks(suite_dir)]
    feasible = [t for t in tasks if t["feasible"]]
    records = [r for t in feasible for r in t["records"]]
    n = len(records)
    scores = [t["proxy_score"] for t in feasible if t.get("proxy_score") is not None]
    summary = {
        "tasks": len(tasks),
        "feasible_tasks": len(feasible),
        "feasible_completed": sum(t["status"] == "complete" for t in feasible),
        "infeasible_exhausted": sum(t["status"] == "exhausted" for t in tasks if not t["feasible"]),
        "steps": n,
        "step_failures": sum(t.get("step_failures", 0) for t in tasks),
        "collision_rate": sum(r["colliding"] for r in records) / n if n else 0.0,
        "floating_rate": sum(r["floating"] for r in records) / n if n else 0.0,
        "proxy_score": float(np.mean(scores)) if scores else 0.0,
        "backtracking": backtracking,
    }
    return {"summary": summary, "tasks": tasks, "seconds": time.perf_counter() - t0}


def format_summary(summary: dict, label: str = "Ours") -> str:
    head = f"{'Method':<18} {'Coll.%':>7} {'Fl.%':>7} {'Proxy':>7} {'Steps':>6} {'Done':>7}"
    done = f"{summary['feasible_completed']}/{summary['feasible_tasks']}"
    row = f"{label:<18} {summary['collision_rate']:>7.3f} {summary['floating_rate']:>7.3f} {summary['proxy_score']:>7.3f} {summary['steps']:>6d} {done:>7}"
    return head + "\n" + row
