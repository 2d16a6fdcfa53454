import math

import numpy as np
import pytest
from shapely.affinity import rotate, translate
from shapely.geometry import box as rect

from arrangekit.bench import block as block_mesh
from arrangekit.bench import table
from arrangekit.constraints import CloseToPix, ConstraintSet, Contact, Distance, NoOverhang, Rotate, loss_contact
from arrangekit.errors import SolveFailed
from arrangekit.probe import ray_probe
from arrangekit.scene import ObjectInstance, Pose, apply_pose, make_scene, normalize_yaw, project
from arrangekit.solver import SolverConfig, initial_poses, learning_rate, optimize_pose, sample_perturbations, solve
from arrangekit.validate import check_collision

from conftest import block, floor, room_camera

TAU = SolverConfig().tau


# -- perturbations ----------------------------------------------------------


def test_perturbation_statistics():
    s = sample_perturbations((0.3, 0.6), SolverConfig(batch=10_000, seed=4))
    assert s.shape == (10_000, 2)
    assert np.all(np.abs(s.mean(axis=0) - (0.3, 0.6)) < 0.01)
    assert np.all(np.abs(s.std(axis=0) - 0.2) < 0.01)


def test_perturbation_degenerate_sigma():
    s = sample_perturbations((0.3, 0.6), SolverConfig(sigma_pix=1e-12))
    assert np.allclose(s, (0.3, 0.6), atol=1e-9)


def test_perturbation_determinism():
    cfg = SolverConfig(seed=9)
    assert np.array_equal(sample_perturbations((0.5, 0.5), cfg), sample_perturbations((0.5, 0.5), cfg))
    assert not np.array_equal(sample_perturbations((0.5, 0.5), cfg), sample_perturbations((0.5, 0.5), SolverConfig(seed=10)))


def test_config_validation_and_schedule():
    for bad in ({"sigma_pix": 0}, {"batch": 0}, {"tau": -1}, {"lr_end": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    cfg = SolverConfig()
    assert learning_rate(0, cfg) == pytest.approx(1e-1)
    assert learning_rate(799, cfg) == pytest.approx(1e-4)
    assert SolverConfig.from_json(cfg.to_json()) == cfg


# -- optimization -----------------------------------------------------------


def _floor_scene():
    return make_scene([floor(8.0), block("cube", (0.4, 0.4, 0.4), (1.0, 1.5, 0.0))], room_camera())


def _floor_set(c):
    return ConstraintSet("cube", (CloseToPix(c), Contact("-z", "floor::surf0")))


def test_floor_surface_id_is_top():
    s = _floor_scene()
    hit = ray_probe(s, (0.5, 0.7))
    assert hit.surface.id == "floor::surf0" and hit.surface.normal[2] > 0.99


def test_stationary_when_already_satisfied():
    s = _floor_scene()
    cs = ConstraintSet("cube", (Contact("-z", "floor::surf0"),))
    trace = []
    pose = optimize_pose(s, cs, trace=trace)
    assert trace[-1] <= trace[0]
    assert np.linalg.norm(np.subtract(pose.translation, s.get("cube").pose.translation)) < 1e-3


def test_floor_placement_residual_and_gap():
    s = _floor_scene()
    cs = _floor_set((0.4, 0.75))
    pose = optimize_pose(s, cs)
    moved = apply_pose(s, "cube", pose).get("cube")
    assert moved.bbox()[0][2] == pytest.approx(0.0, abs=1e-3)
    sol = solve(s, cs)
    assert sol.residual < TAU and sol.collision_free
    assert abs(loss_contact(sol.pose, s.get("cube"), "-z", ray_probe(s, (0.5, 0.7)).surface)) < TAU


@pytest.mark.parametrize("seed", range(20))
def test_loss_decreases_over_iterations(seed):
    # the distance target is offset from the start so the run has real descent to do
    rng = np.random.default_rng(seed)
    anchor = block("anchor", (0.3, 0.3, 0.3), (*rng.uniform(-1.5, 1.5, 2), 0.0))
    s = make_scene([floor(8.0), block("cube", (0.4, 0.4, 0.4), (1.0, 1.5, 0.0)), anchor], room_camera())
    c = tuple(rng.uniform((0.2, 0.55), (0.8, 0.95)))
    start = initial_poses(s, _floor_set(c), np.array([c]))[0]
    d0 = np.linalg.norm(start[:3] + (0, 0, 0.2) - s.get("anchor").center)
    target = d0 + 0.6 if d0 < 1.0 else d0 - 0.6
    cs = ConstraintSet("cube", (CloseToPix(c), Contact("-z", "floor::surf0"), Distance("anchor", target)))
    trace = []
    optimize_pose(s, cs, trace=trace)
    assert trace[0][0] > 0.1
    assert trace[-1][0] <= trace[0][0]


def test_initial_yaw_zero_or_rotated():
    s = make_scene([floor(8.0), block("cube", (0.4, 0.4, 0.4), (1.0, 1.5, 0.0), 0.7)], room_camera())
    P = initial_poses(s, _floor_set((0.5, 0.7)), np.array([[0.5, 0.7]]))
    assert P[0, 3] == 0.0
    rot = ConstraintSet("cube", (CloseToPix((0.5, 0.7)), Rotate(30.0)))
    P = initial_poses(s, rot, np.array([[0.5, 0.7]]))
    assert P[0, 3] == pytest.approx(0.7 + math.radians(30))


def test_rotate_sets_yaw_exactly():
    s = _floor_scene()
    cs = ConstraintSet("cube", (CloseToPix((0.5, 0.7)), Contact("-z", "floor::surf0"), Rotate(45.0)))
    sol = solve(s, cs)
    assert sol.pose.yaw == pytest.approx(normalize_yaw(math.radians(45)), abs=1e-12)


def test_solve_is_deterministic():
    s = _floor_scene()
    cs = _floor_set((0.45, 0.7))
    a, b = solve(s, cs, SolverConfig(seed=3)), solve(s, cs, SolverConfig(seed=3))
    assert a == b


def test_center_mode_retry():
    # a box wider than the stool top can only satisfy the center-only overhang mode
    stool = ObjectInstance("stool", block_mesh(0.3, 0.3, 0.4), Pose((0, 0.5, 0)))
    s = make_scene([floor(8.0), stool, block("tray", (0.5, 0.5, 0.05), (1.5, 1.5, 0))], room_camera())
    top = project(s.camera, (0, 0.5, 0.4))
    sid = ray_probe(s, top).surface.id
    cs = ConstraintSet("tray", (CloseToPix(tuple(top)), Contact("-z", sid), NoOverhang("-z", sid, "center")))
    sol = solve(s, cs)
    assert sol.mode == "center"
    assert sol.residual <= TAU
    with pytest.raises(SolveFailed):
        solve(s, ConstraintSet("tray", (CloseToPix(tuple(top)), Contact("-z", sid), NoOverhang("-z", sid))))


# -- crowded table: solver vs brute-force lattice ---------------------------

TABLE = (1.6, 0.6, 0.75)
SUBJECT = (0.15, 0.15, 0.15)
GAP = (-0.2, 0.2)
MARGIN = 0.1 * (GAP[1] - GAP[0])


def _crowded(gap=True):
    w, d, h = TABLE
    objs = [floor(8.0), ObjectInstance("table", table(w, d, h), Pose((0, 0.4, 0)))]
    spans = [(-0.8, GAP[0]), (GAP[1], 0.8)] if gap else [(-0.8, 0.0), (0.0, 0.8)]
    for i, (x0, x1) in enumerate(spans):
        objs.append(block(f"crate_{i}", (x1 - x0, d, 0.3), ((x0 + x1) / 2, 0.4, h)))
    objs.append(block("mug", SUBJECT, (1.0, -0.5, 0.0)))
    return make_scene(objs, room_camera((0.0, -1.2, 1.7), (0.0, 0.4, 0.75))), spans


def _lattice_feasible(spans, res=64, yaws=8):
    """Brute force over (x, y, yaw) on the table top with box arithmetic.

    A pose is feasible when the footprint stays on the table and the overlap
    with every crate is at most 1% of the subject's axis-aligned box volume
    (both stand on the table top, so overlap heights equal the subject's).
    """
    w, d, _ = TABLE
    top = rect(-w / 2, 0.4 - d / 2, w / 2, 0.4 + d / 2)
    crates = [rect(x0, 0.4 - d / 2, x1, 0.4 + d / 2) for x0, x1 in spans]
    base = rect(-SUBJECT[0] / 2, -SUBJECT[1] / 2, SUBJECT[0] / 2, SUBJECT[1] / 2)
    xs = -w / 2 + (np.arange(res) + 0.5) * w / res
    ys = 0.4 - d / 2 + (np.arange(res) + 0.5) * d / res
    out = []
    for k in range(yaws):
        yaw = -180 + 360 * k / yaws
        rotated = rotate(base, yaw, origin=(0, 0))
        bx0, by0, bx1, by1 = rotated.bounds
        bbox_area = (bx1 - bx0) * (by1 - by0)
        for x in xs:
            for y in ys:
                fp = translate(rotated, x, y)
                if not top.covers(fp):
                    continue
                if all(fp.intersection(c).area <= 0.01 * bbox_area for c in crates):
                    out.append((x, y, yaw))
    return out


def _crowded_set(scene, x):
    c = tuple(project(scene.camera, (x, 0.4, TABLE[2])))
    sid = ray_probe(scene, c, exclude=["crate_0", "crate_1"]).surface.id
    return ConstraintSet("mug", (CloseToPix(c), Contact("-z", sid), NoOverhang("-z", sid)))


def test_crowded_table_solution_lies_in_gap():
    scene, spans = _crowded(gap=True)
    feasible = _lattice_feasible(spans)
    assert feasible
    assert all(GAP[0] - MARGIN <= x <= GAP[1] + MARGIN for x, _, _ in feasible)
    sol = solve(scene, _crowded_set(scene, 0.1))
    assert sol.collision_free and sol.residual <= TAU
    placed = apply_pose(scene, "mug", sol.pose).get("mug")
    lo, hi = placed.bbox()
    assert GAP[0] < sol.pose.translation[0] < GAP[1]
    assert GAP[0] - MARGIN <= lo[0] and hi[0] <= GAP[1] + MARGIN
    assert lo[2] == pytest.approx(TABLE[2], abs=1e-3)


def test_crowded_table_without_gap_fails():
    scene, spans = _crowded(gap=False)
    assert _lattice_feasible(spans) == []
    cs = _crowded_set(scene, 0.0)
    with pytest.raises(SolveFailed):
        solve(scene, cs)
    sol = solve(scene, cs, allow_collisions=True)
    assert not sol.collision_free


def test_returned_solutions_pass_independent_collision_check():
    scene, _ = _crowded(gap=True)
    for seed in range(3):
        sol = solve(scene, _crowded_set(scene, 0.0), SolverConfig(seed=seed))
        moved = apply_pose(scene, "mug", sol.pose).get("mug")
        lo, hi = moved.bbox()
        for name in ("crate_0", "crate_1"):
            olo, ohi = scene.get(name).bbox()
            overlap = np.prod(np.clip(np.minimum(hi, ohi) - np.maximum(lo, olo), 0, None))
            assert overlap <= 0.01 * np.prod(hi - lo)
        assert not check_collision(apply_pose(scene, "mug", sol.pose), "mug").colliding
