import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import MultiPoint, Point

from arrangekit.constraints import (
    BackTo,
    CloseToPix,
    ClosePixTerm,
    CompiledSet,
    ConstraintSet,
    Contact,
    ContactTerm,
    Distance,
    DistanceTerm,
    FaceTo,
    FacingTerm,
    LossWeights,
    NoOverhang,
    OverhangTerm,
    Rotate,
    constraint_from_json,
    constraint_set_from_json,
    constraint_set_to_json,
    constraint_to_json,
    loss_back_to,
    loss_close_to_pix,
    loss_contact,
    loss_distance,
    loss_face_to,
    loss_no_overhang,
    total_loss,
)
from arrangekit.errors import DegenerateDirection, DegenerateHull, ParseError
from arrangekit.hull import plane_basis
from arrangekit.mesh import box
from arrangekit.probe import PlanarSurface
from arrangekit.scene import DIRECTIONS, Camera, ObjectInstance, Pose, Scene

from conftest import room_camera

H = 1e-5
N_CONFIGS = 100


def _obj(name="obj", size=(1.0, 1.0, 1.0), bottom=True, front=(0.0, 1.0, 0.0)):
    center = (0.0, 0.0, size[2] / 2) if bottom else (0.0, 0.0, 0.0)
    return ObjectInstance(name, box(size, center), front_axis=front)


def _surface(vertices, normal, sid="s::surf0"):
    v = np.asarray(vertices, float)
    return PlanarSurface(owner="s", id=sid, vertices=v, normal=np.asarray(normal, float) / np.linalg.norm(normal))


def _square(half=1.0, z=0.0):
    return _surface([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]], (0, 0, 1))


def _axis_camera():
    # origin, looking down -Z, 90 deg: (x, y, -1) -> (0.5 + x/2, 0.5 - y/2)
    return Camera(np.zeros(3), np.eye(3), math.radians(90), 1.0)


# ---------------------------------------------------------------------------
# worked values, evaluated by hand from the loss definitions
# ---------------------------------------------------------------------------


def test_close_to_pix_worked_value():
    subj = _obj(bottom=False)
    # center at (0, -0.6, -1) projects to (0.5, 0.8)
    pose = Pose((0.0, -0.6, -1.0))
    expected = 0.5 * ((0.2 - 0.5) ** 2 + (0.4 - 0.8) ** 2)
    assert expected == pytest.approx(0.125, abs=1e-15)
    assert loss_close_to_pix(pose, subj, _axis_camera(), (0.2, 0.4)) == pytest.approx(expected, abs=1e-9)
    assert loss_close_to_pix(pose, subj, _axis_camera(), (0.5, 0.8)) == pytest.approx(0.0, abs=1e-12)


def test_contact_worked_values():
    subj = _obj()
    floor = _square(5.0)
    assert loss_contact(Pose((0, 0, 0)), subj, "-z", floor) == 0.0
    above = 100 * 0.1 + 100 * np.mean([max(0.0 - 0.1, 0)] * 4)
    assert loss_contact(Pose((0, 0, 0.1)), subj, "-z", floor) == pytest.approx(above, abs=1e-9)
    assert above == pytest.approx(10.0)
    below = 100 * 0.05 + 100 * np.mean([max(0.0 + 0.05, 0)] * 4)
    assert loss_contact(Pose((0, 0, -0.05)), subj, "-z", floor) == pytest.approx(below, abs=1e-9)
    assert below == pytest.approx(10.0)


def test_no_overhang_worked_values():
    subj = _obj(size=(0.4, 0.4, 0.2))
    big = _square(1.0)
    assert loss_no_overhang(Pose((0, 0, 0)), subj, "-z", big) == 0.0
    # +x corners at 0.9 + 0.2 = 1.1: 0.1 beyond the unit-normalized x = 1 edge
    expected = 20 * max(1.1 - 1.0, 0)
    assert loss_no_overhang(Pose((0.9, 0, 0)), subj, "-z", big) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(2.0)
    assert loss_no_overhang(Pose((0, 0, 0)), subj, "-z", big, mode="center") == pytest.approx(0.0, abs=1e-12)


def test_distance_worked_value():
    a, b = _obj("a"), _obj("b")
    b = ObjectInstance("b", b.mesh, Pose((2.0, 0, 0)))
    expected = 0.3 * (2.0 - 1.0) ** 2
    assert loss_distance(Pose((0, 0, 0)), a, b, 1.0) == pytest.approx(expected, abs=1e-9)
    assert loss_distance(Pose((1.0, 0, 0)), a, b, 1.0) == pytest.approx(0.0, abs=1e-12)
    sq = LossWeights(distance_mode="squared")
    assert loss_distance(Pose((0, 0, 0)), a, b, 1.0, sq) == pytest.approx(0.3 * 4.0, abs=1e-9)


def test_face_to_worked_values():
    subj = _obj()  # front +y
    ahead = ObjectInstance("tv", box(), Pose((0, 3, 0)))
    behind = ObjectInstance("tv", box(), Pose((0, -3, 0)))
    assert loss_face_to(Pose(), subj, ahead) == pytest.approx(0.0, abs=1e-12)
    expected = 0.5 * (1 - math.cos(math.pi))
    assert loss_face_to(Pose(), subj, behind) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(1.0)
    assert loss_back_to(Pose(), subj, behind) == pytest.approx(0.0, abs=1e-12)
    assert loss_back_to(Pose(), subj, ahead) == pytest.approx(1.0, abs=1e-9)


def test_face_to_target_above_is_degenerate():
    subj = _obj()
    above = ObjectInstance("lamp", box(), Pose((0, 0, 3)))
    with pytest.raises(DegenerateDirection):
        loss_face_to(Pose(), subj, above)


def test_face_to_surface_and_camera_targets():
    subj = _obj()
    wall = _surface([[0, 2, 0], [1, 2, 0], [1, 2, 1], [0, 2, 1]], (0, -1, 0))
    # facing along the wall's normal (-y) while the front is +y
    assert loss_face_to(Pose(), subj, wall) == pytest.approx(1.0)
    assert loss_face_to(Pose((0, 0, 0), math.pi), subj, wall) == pytest.approx(0.0, abs=1e-12)
    cam = room_camera()  # at y = -3
    assert loss_face_to(Pose((0, 0, 0), math.pi), subj, "camera", cam) < 1e-3


def _pix_distance_scene():
    subj = ObjectInstance("subj", box())
    other = ObjectInstance("other", box(), Pose((2.0, -0.6, -1.0)))
    return Scene((subj, other), _axis_camera())


def test_total_loss_additivity():
    s = _pix_distance_scene()
    cs = ConstraintSet("subj", (CloseToPix((0.2, 0.4)), Distance("other", 1.0)))
    loss, grad = total_loss(Pose((0, -0.6, -1.0)), s, cs)
    assert loss == pytest.approx(0.125 + 0.3, abs=1e-9)
    g1 = total_loss(Pose((0, -0.6, -1.0)), s, ConstraintSet("subj", (CloseToPix((0.2, 0.4)),)))[1]
    g2 = total_loss(Pose((0, -0.6, -1.0)), s, ConstraintSet("subj", (Distance("other", 1.0),)))[1]
    assert np.allclose(grad, g1 + g2)


def test_total_loss_empty_set():
    s = _pix_distance_scene()
    loss, grad = total_loss(Pose(), s, ConstraintSet("subj", ()))
    assert loss == 0.0 and not grad.any()


def test_rotate_freezes_yaw_and_is_disabled_by_facing():
    s = _pix_distance_scene()
    cs = ConstraintSet("subj", (Rotate(30.0), CloseToPix((0.3, 0.3))))
    comp = CompiledSet(s, cs)
    assert comp.frozen_yaw == pytest.approx(math.radians(30))
    assert total_loss(Pose((0.1, 0.2, -1.0), 0.2), s, cs)[1][3] == 0.0
    with_face = ConstraintSet("subj", (Rotate(30.0), FaceTo("other")))
    assert with_face.rotation is None
    assert CompiledSet(s, with_face).frozen_yaw is None


# ---------------------------------------------------------------------------
# gradients vs central differences
# ---------------------------------------------------------------------------


def _fd(term, P):
    g = np.zeros(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = H
        g[i] = (term.evaluate((P + e)[None])[0][0] - term.evaluate((P - e)[None])[0][0]) / (2 * H)
    return g


def _rel_err(ga, gf):
    scale = max(np.linalg.norm(gf), np.linalg.norm(ga))
    if scale < 1e-8:
        return 0.0
    return float(np.linalg.norm(ga - gf) / scale)


def _random_box(rng, name="subj", front=(0.0, 1.0, 0.0)):
    size = rng.uniform(0.2, 1.0, 3)
    return ObjectInstance(name, box(size, (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), size[2] / 2)), front_axis=front)


def _random_pose(rng, spread=1.0):
    return np.array([*rng.uniform(-spread, spread, 2), rng.uniform(0, 1), rng.uniform(-math.pi, math.pi)])


def _random_plane(rng, tilt=0.4):
    n = np.array([*rng.uniform(-tilt, tilt, 2), 1.0])
    n /= np.linalg.norm(n)
    u, v = plane_basis(n)
    c = rng.uniform(-0.3, 0.3, 3)
    pts = [c + a * u + b * v for a, b in rng.uniform(-1.5, 1.5, (rng.integers(3, 9), 2))]
    return _surface(pts, n)


def _margin(values):
    """Gap between the largest and second largest entry of each row."""
    s = np.sort(values.ravel())
    return s[-1] - s[-2] if len(s) > 1 else np.inf


def _make_close_pix(rng):
    subj = _random_box(rng)
    term = ClosePixTerm(subj, room_camera(), rng.uniform(0, 1, 2), 0.5)
    return term, _random_pose(rng), lambda P: True


def _make_contact(rng):
    subj = _random_box(rng)
    surf = _random_plane(rng)
    d = list(DIRECTIONS)[rng.integers(6)]
    term = ContactTerm(subj, d, surf, 100.0, 100.0)

    def ok(P):
        from arrangekit.constraints import posed_points

        W, _ = posed_points(P[None], term.corners)
        diff = term.qbar - W[0] @ term.n
        a = np.sort(np.abs(diff))
        return a[0] > 1e-3 and a[1] - a[0] > 1e-3 and np.all(np.abs(diff) > 1e-3)

    return term, _random_pose(rng), ok


def _overhang_ok(term):
    def ok(P):
        from arrangekit.constraints import posed_points

        W, _ = posed_points(P[None], term.corners)
        p2 = np.stack([W[0] @ term.u, W[0] @ term.v], axis=-1)
        if term.mode == "full":
            cr = term._cross(p2)
        else:
            m = p2.mean(axis=0)
            cr = term._cross(m)
            if np.linalg.norm(m - term.hull_center) < 1e-3:
                return False
        return abs(cr.max()) > 1e-3 and _margin(cr) > 1e-3

    return ok


def _make_overhang(mode):
    def make(rng):
        subj = _random_box(rng)
        surf = _random_plane(rng)
        term = OverhangTerm(subj, "-z", surf, mode, 20.0, 1.0)
        return term, _random_pose(rng, 1.5), _overhang_ok(term)

    return make


def _make_distance(rng):
    subj = _random_box(rng)
    other = ObjectInstance("other", box(), Pose(tuple(rng.uniform(-1, 1, 3))))
    term = DistanceTerm(subj, other, rng.uniform(0, 2), 0.3, "offset")

    def ok(P):
        c = Pose.from_array(P).rotation @ subj.local_center + P[:3]
        return np.linalg.norm(c - other.center) > 1e-3

    return term, _random_pose(rng), ok


def _make_facing(back):
    def make(rng):
        subj = _random_box(rng, front=(1.0, 0.0, 0.0) if rng.random() < 0.5 else (0.0, 1.0, 0.0))
        kind = ["object", "camera", "surface"][rng.integers(3)]
        if kind == "surface":
            n = rng.normal(size=3)
            term = FacingTerm(subj, kind, target_dir=n / np.linalg.norm(n), back=back)
        else:
            tp = rng.uniform(-3, 3, 3) if kind == "object" else room_camera().position
            term = FacingTerm(subj, kind, target_point=tp, back=back)

        def ok(P):
            return bool(term.evaluate(P[None])[2][0]) and abs(term.evaluate(P[None])[0][0] - 0.5) < 0.49

        return term, _random_pose(rng), ok

    return make


KINDS = {
    "CloseToPix": _make_close_pix,
    "Contact": _make_contact,
    "NoOverhang": _make_overhang("full"),
    "NoOverhang-center": _make_overhang("center"),
    "Distance": _make_distance,
    "FaceTo": _make_facing(False),
    "BackTo": _make_facing(True),
}


def gradient_errors(kind, n=N_CONFIGS, seed=0):
    """Relative analytic-vs-FD errors at ``n`` random non-singular configurations."""
    rng = np.random.default_rng(seed)
    errs = []
    while len(errs) < n:
        term, P, ok = KINDS[kind](rng)
        if not ok(P):
            continue
        ga = term.evaluate(P[None])[1][0]
        errs.append(_rel_err(ga, _fd(term, P)))
    return errs


@pytest.mark.parametrize("kind", list(KINDS))
def test_gradients_match_finite_differences(kind):
    errs = gradient_errors(kind)
    assert max(errs) <= 1e-4, (kind, max(errs))


def test_total_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    s = Scene((ObjectInstance("subj", box((0.4, 0.3, 0.2), (0, 0, 0.1))), ObjectInstance("tv", box(), Pose((1.0, 2.0, 0.5)))), room_camera())
    cs = ConstraintSet("subj", (CloseToPix((0.4, 0.6)), Distance("tv", 1.0), FaceTo("tv")))
    comp = CompiledSet(s, cs)
    for _ in range(20):
        P = _random_pose(rng)
        _, g, _ = comp.evaluate(P[None])
        assert _rel_err(g[0], _fd(comp, P)) <= 1e-4


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


def test_overhang_zero_iff_vertices_inside_hull():
    """Full mode is zero exactly when every bottom corner lies in the hull (1000 cases)."""
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 1000:
        pts2 = rng.uniform(-1, 1, (rng.integers(3, 10), 2))
        poly = MultiPoint([tuple(p) for p in pts2]).convex_hull
        if poly.geom_type != "Polygon" or poly.area < 1e-3:
            continue
        surf = _surface(np.column_stack([pts2, np.zeros(len(pts2))]), (0, 0, 1))
        subj = _random_box(rng)
        P = np.array([*rng.uniform(-0.8, 0.8, 2), 0.0, rng.uniform(-math.pi, math.pi)])
        term = OverhangTerm(subj, "-z", surf, "full", 20.0, 1.0)
        from arrangekit.constraints import posed_points

        corners = posed_points(P[None], term.corners)[0][0]
        # keep away from the boundary where the verdict is a coin flip
        dist = [poly.exterior.distance(Point(c[0], c[1])) for c in corners]
        if min(dist) < 1e-6:
            continue
        inside = all(poly.covers(Point(c[0], c[1])) for c in corners)
        loss = term.evaluate(P[None])[0][0]
        assert (loss == 0.0) == inside
        checked += 1


def test_degenerate_hull_raises():
    subj = _obj()
    line = _surface([[0, 0, 0], [1, 0, 0], [2, 0, 0]], (0, 0, 1))
    with pytest.raises(DegenerateHull):
        loss_no_overhang(Pose(), subj, "-z", line)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_losses_invariant_under_vertex_permutation(seed):
    rng = np.random.default_rng(seed)
    surf = _random_plane(rng)
    perm = _surface(surf.vertices[rng.permutation(len(surf.vertices))], surf.normal)
    subj = _random_box(rng)
    pose = Pose.from_array(_random_pose(rng))
    assert loss_contact(pose, subj, "-z", surf) == pytest.approx(loss_contact(pose, subj, "-z", perm), abs=1e-12)
    for mode in ("full", "center"):
        a = loss_no_overhang(pose, subj, "-z", surf, mode)
        b = loss_no_overhang(pose, subj, "-z", perm, mode)
        assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_losses_translation_covariant(seed):
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-5, 5, 3)
    surf = _random_plane(rng)
    moved = _surface(surf.vertices + shift, surf.normal)
    subj = _random_box(rng)
    p = _random_pose(rng)
    pose, pose2 = Pose.from_array(p), Pose((*(p[:3] + shift),), p[3])
    other = ObjectInstance("o", box(), Pose(tuple(rng.uniform(-1, 1, 3))))
    other2 = ObjectInstance("o", box(), Pose(tuple(np.array(other.pose.translation) + shift)))
    pairs = [
        (loss_contact(pose, subj, "-z", surf), loss_contact(pose2, subj, "-z", moved)),
        (loss_no_overhang(pose, subj, "-z", surf), loss_no_overhang(pose2, subj, "-z", moved)),
        (loss_distance(pose, subj, other, 0.7), loss_distance(pose2, subj, other2, 0.7)),
    ]
    try:
        pairs.append((loss_face_to(pose, subj, other), loss_face_to(pose2, subj, other2)))
    except DegenerateDirection:
        pass
    for a, b in pairs:
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_losses_non_negative(seed):
    for kind, make in KINDS.items():
        term, P, _ = make(np.random.default_rng(seed))
        loss, _, ok = term.evaluate(P[None])
        if ok[0]:
            assert loss[0] >= 0, kind


# ---------------------------------------------------------------------------
# records and serialization
# ---------------------------------------------------------------------------


def test_constraint_json_round_trip():
    cs = ConstraintSet("mug", (
        CloseToPix((0.25, 0.75)),
        Contact("-z", "table::surf0"),
        NoOverhang("-z", (0.4, 0.6), "center"),
        Distance("plate", 0.3),
        FaceTo("tv"),
        BackTo("camera", "camera"),
        FaceTo("wall::surf1", "surface"),
        Rotate(45.0),
    ))
    d = constraint_set_to_json(cs)
    assert constraint_set_from_json(d) == cs
    assert d["constraints"][5] == {"type": "BackTo", "target": {"camera": True}}


@pytest.mark.parametrize("bad", [
    {"direction": "-z"},
    {"type": "Contact", "direction": "down", "surface": "x::surf0"},
    {"type": "Distance", "other": "x", "dist": -1},
    {"type": "Teleport"},
    {"type": "NoOverhang", "direction": "-z", "surface": 3},
])
def test_constraint_json_errors(bad):
    with pytest.raises(ParseError):
        constraint_from_json(bad)


def test_constraint_to_json_type_names():
    assert constraint_to_json(Rotate(10))["type"] == "Rotate"
    with pytest.raises(TypeError):
        constraint_to_json("nope")


def test_weights_are_the_documented_defaults():
    w = LossWeights()
    assert (w.close_to_pix, w.contact_touch, w.contact_above, w.overhang, w.overhang_align, w.distance, w.face_to) == (
        0.5, 100.0, 100.0, 20.0, 1.0, 0.3, 0.5)
    with pytest.raises(ValueError):
        LossWeights(distance=0)
