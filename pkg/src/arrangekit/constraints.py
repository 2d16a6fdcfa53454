"""Placement constraints and their differentiable losses.

Every loss is evaluated for a batch of 4-DOF poses ``(tx, ty, tz, yaw)`` and
returns per-pose values and analytic gradients. Gradients are derived by hand;
see ``tests/test_constraints.py`` for the finite-difference checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import BehindCamera, DegenerateDirection, DegenerateHull, ParseError, UnknownObject
from .hull import convex_hull, plane_basis, polygon_area
from .probe import PlanarSurface, get_surface, ray_probe
from .scene import DIRECTIONS, Camera, ObjectInstance, Pose, Scene, project_batch

SurfaceRef = Union[str, PlanarSurface, tuple]


@dataclass(frozen=True)
class LossWeights:
    close_to_pix: float = 0.5
    contact_touch: float = 100.0
    contact_above: float = 100.0
    overhang: float = 20.0
    overhang_align: float = 1.0
    distance: float = 0.3
    face_to: float = 0.5
    # "offset": (|x_o - x_t| - dist)^2 ; "squared": |x_o - x_t|^2 (dist ignored)
    distance_mode: str = "offset"

    def __post_init__(self):
        for name in ("close_to_pix", "contact_touch", "contact_above", "overhang", "overhang_align", "distance", "face_to"):
            if getattr(self, name) <= 0:
                raise ValueError(f"weight {name} must be positive")
        if self.distance_mode not in ("offset", "squared"):
            raise ValueError("distance_mode must be 'offset' or 'squared'")


# ---------------------------------------------------------------------------
# constraint records
# ---------------------------------------------------------------------------


def _check_direction(d):
    if d not in DIRECTIONS:
        raise ValueError(f"invalid direction token {d!r}")


@dataclass(frozen=True)
class CloseToPix:
    target: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "target", (float(self.target[0]), float(self.target[1])))


@dataclass(frozen=True)
class Contact:
    direction: str
    surface: SurfaceRef

    def __post_init__(self):
        _check_direction(self.direction)


@dataclass(frozen=True)
class NoOverhang:
    direction: str
    surface: SurfaceRef
    mode: str = "full"  # "full" or "center" (full first, center-only fallback)

    def __post_init__(self):
        _check_direction(self.direction)
        if self.mode not in ("full", "center"):
            raise ValueError("NoOverhang mode must be 'full' or 'center'")


@dataclass(frozen=True)
class Distance:
    other: str
    dist: float

    def __post_init__(self):
        if not self.dist >= 0:
            raise ValueError("dist must be >= 0")


@dataclass(frozen=True)
class FaceTo:
    target: str  # object name, surface id, or "camera" when kind == "camera"
    kind: str = "object"  # object | surface | camera

    def __post_init__(self):
        if self.kind not in ("object", "surface", "camera"):
            raise ValueError("FaceTo target kind must be object, surface or camera")


@dataclass(frozen=True)
class BackTo(FaceTo):
    pass


@dataclass(frozen=True)
class Rotate:
    degrees: float


Constraint = Union[CloseToPix, Contact, NoOverhang, Distance, FaceTo, BackTo, Rotate]


@dataclass(frozen=True)
class ConstraintSet:
    subject: str
    constraints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def has_facing(self) -> bool:
        return any(isinstance(c, FaceTo) for c in self.constraints)

    @property
    def rotation(self):
        """Active Rotate constraint, or None (FaceTo/BackTo deactivate it)."""
        if self.has_facing:
            return None
        for c in self.constraints:
            if isinstance(c, Rotate):
                return c
        return None

    @property
    def pixel_target(self):
        for c in self.constraints:
            if isinstance(c, CloseToPix):
                return np.array(c.target)
        return None

    def with_overhang_mode(self, mode: str) -> "ConstraintSet":
        return ConstraintSet(
            self.subject,
            tuple(NoOverhang(c.direction, c.surface, mode) if isinstance(c, NoOverhang) else c for c in self.constraints),
        )

    def with_pixel_target(self, c) -> "ConstraintSet":
        out = [x for x in self.constraints if not isinstance(x, CloseToPix)]
        return ConstraintSet(self.subject, (CloseToPix(tuple(c)), *out))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _surface_to_json(s: SurfaceRef):
    if isinstance(s, PlanarSurface):
        return s.id
    if isinstance(s, tuple):
        return {"pixel": list(s)}
    return s


def _surface_from_json(v) -> SurfaceRef:
    if isinstance(v, str):
        return v
    if isinstance(v, dict) and "pixel" in v and len(v["pixel"]) == 2:
        return (float(v["pixel"][0]), float(v["pixel"][1]))
    raise ParseError("surface must be an id string or {'pixel': [x, y]}", field="surface")


def constraint_to_json(c) -> dict:
    if isinstance(c, CloseToPix):
        return {"type": "CloseToPix", "target": list(c.target)}
    if isinstance(c, Contact):
        return {"type": "Contact", "direction": c.direction, "surface": _surface_to_json(c.surface)}
    if isinstance(c, NoOverhang):
        return {"type": "NoOverhang", "direction": c.direction, "surface": _surface_to_json(c.surface), "mode": c.mode}
    if isinstance(c, Distance):
        return {"type": "Distance", "other": c.other, "dist": c.dist}
    if isinstance(c, FaceTo):
        tgt = {"camera": True} if c.kind == "camera" else {c.kind: c.target}
        return {"type": type(c).__name__, "target": tgt}
    if isinstance(c, Rotate):
        return {"type": "Rotate", "degrees": c.degrees}
    raise TypeError(f"not a constraint: {c!r}")


def constraint_from_json(d: dict):
    if not isinstance(d, dict) or "type" not in d:
        raise ParseError("constraint needs a 'type'")
    kind = d["type"]
    try:
        if kind == "CloseToPix":
            return CloseToPix(tuple(d["target"]))
        if kind == "Contact":
            return Contact(d["direction"], _surface_from_json(d["surface"]))
        if kind == "NoOverhang":
            return NoOverhang(d["direction"], _surface_from_json(d["surface"]), d.get("mode", "full"))
        if kind == "Distance":
            return Distance(str(d["other"]), float(d["dist"]))
        if kind in ("FaceTo", "BackTo"):
            cls = FaceTo if kind == "FaceTo" else BackTo
            t = d["target"]
            if isinstance(t, str):
                return cls(t, "object")
            if t.get("camera"):
                return cls("camera", "camera")
            if "surface" in t:
                return cls(str(t["surface"]), "surface")
            return cls(str(t["object"]), "object")
        if kind == "Rotate":
            return Rotate(float(d["degrees"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise ParseError(f"malformed {kind} constraint: {exc}", field=kind) from None
    except ValueError as exc:
        raise ParseError(str(exc), field=kind) from None
    raise ParseError(f"unknown constraint type {kind!r}", field="type")


def constraint_set_to_json(cs: ConstraintSet) -> dict:
    return {"subject": cs.subject, "constraints": [constraint_to_json(c) for c in cs.constraints]}


def constraint_set_from_json(d: dict) -> ConstraintSet:
    if not isinstance(d, dict) or "subject" not in d:
        raise ParseError("constraint set needs a 'subject'")
    raw = d.get("constraints", [])
    if not isinstance(raw, list):
        raise ParseError("expected a list", field="constraints")
    return ConstraintSet(str(d["subject"]), tuple(constraint_from_json(c) for c in raw))


# ---------------------------------------------------------------------------
# batched kinematics
# ---------------------------------------------------------------------------


def posed_points(P: np.ndarray, local: np.ndarray):
    """World points (B,N,3) and their yaw derivative for local points (N,3)."""
    c = np.cos(P[:, 3])[:, None]
    s = np.sin(P[:, 3])[:, None]
    lx, ly, lz = local[:, 0][None], local[:, 1][None], local[:, 2][None]
    rx = c * lx - s * ly
    ry = s * lx + c * ly
    W = np.stack([rx + P[:, 0:1], ry + P[:, 1:2], np.broadcast_to(lz + P[:, 2:3], rx.shape)], axis=-1)
    dW = np.stack([-ry, rx, np.zeros_like(rx)], axis=-1)
    return W, dW


def chain(dLdW: np.ndarray, dW: np.ndarray) -> np.ndarray:
    g = np.empty((dLdW.shape[0], 4))
    g[:, :3] = dLdW.sum(axis=1)
    g[:, 3] = np.einsum("bnk,bnk->b", dLdW, dW)
    return g


def _zcross(a):
    return np.stack([-a[..., 1], a[..., 0], np.zeros_like(a[..., 0])], axis=-1)


def bbox_face_corners(lo, hi, direction: str) -> np.ndarray:
    """Four corners of the local bounding-box face facing ``direction``."""
    axis = "xyz".index(direction[1])
    val = hi[axis] if direction[0] == "+" else lo[axis]
    a, b = [i for i in range(3) if i != axis]
    out = []
    for ua, ub in ((lo[a], lo[b]), (hi[a], lo[b]), (hi[a], hi[b]), (lo[a], hi[b])):
        p = np.zeros(3)
        p[axis], p[a], p[b] = val, ua, ub
        out.append(p)
    return np.array(out)


# ---------------------------------------------------------------------------
# terms
# ---------------------------------------------------------------------------


class Term:
    """One compiled loss term. ``evaluate`` -> (loss (B,), grad (B,4), ok (B,))."""

    name = "term"
    error = None

    def evaluate(self, P, targets=None):
        raise NotImplementedError


class ClosePixTerm(Term):
    name = "CloseToPix"
    error = BehindCamera

    def __init__(self, subj: ObjectInstance, camera: Camera, c, w: float):
        self.local = subj.local_center[None]
        self.camera = camera
        self.c = np.asarray(c, float)
        self.w = w

    def evaluate(self, P, targets=None):
        W, dW = posed_points(P, self.local)
        xy, J, depth = project_batch(self.camera, W[:, 0])
        c = self.c[None] if targets is None else np.asarray(targets, float)
        r = c - xy
        loss = self.w * np.einsum("bi,bi->b", r, r)
        dxy = -2 * self.w * r
        dLdW = np.einsum("bi,bij->bj", dxy, J)[:, None]
        ok = depth > 0
        return loss, chain(dLdW, dW), ok


class ContactTerm(Term):
    name = "Contact"

    def __init__(self, subj: ObjectInstance, direction: str, surface: PlanarSurface, wt: float, wa: float):
        lo, hi = subj.local_bounds
        self.corners = bbox_face_corners(lo, hi, direction)
        self.n = np.asarray(surface.normal, float)
        self.qbar = float(np.max(surface.vertices @ self.n))
        self.wt, self.wa = wt, wa

    def evaluate(self, P, targets=None):
        W, dW = posed_points(P, self.corners)
        s = W @ self.n
        diff = self.qbar - s
        b = np.arange(len(P))
        i = np.argmin(np.abs(diff), axis=1)
        dt = diff[b, i]
        loss = self.wt * np.abs(dt) + self.wa * np.maximum(diff, 0).mean(axis=1)
        ds = -self.wa * (diff > 0) / diff.shape[1]
        ds[b, i] -= self.wt * np.sign(dt)
        dLdW = ds[..., None] * self.n
        return loss, chain(dLdW, dW), np.ones(len(P), bool)


class OverhangTerm(Term):
    name = "NoOverhang"

    def __init__(self, subj: ObjectInstance, direction: str, surface: PlanarSurface, mode: str, w: float, wa: float):
        lo, hi = subj.local_bounds
        self.corners = bbox_face_corners(lo, hi, direction)
        self.u, self.v = plane_basis(surface.normal)
        q2 = np.column_stack([surface.vertices @ self.u, surface.vertices @ self.v])
        hull = convex_hull(q2)
        if len(hull) < 3 or polygon_area(hull) < 1e-12:
            raise DegenerateHull(f"surface {surface.id or '<anon>'} has a degenerate convex hull")
        e = np.roll(hull, -1, axis=0) - hull
        self.q = hull
        self.e = e / np.linalg.norm(e, axis=1, keepdims=True)
        self.hull_center = hull.mean(axis=0)
        self.mode = mode
        self.w, self.wa = w, wa

    def _cross(self, p2):
        # (p - q_j) x e_j, positive outside a CCW hull; p2 (..., 2) -> (..., H)
        d = p2[..., None, :] - self.q
        return d[..., 0] * self.e[:, 1] - d[..., 1] * self.e[:, 0]

    def evaluate(self, P, targets=None):
        W, dW = posed_points(P, self.corners)
        p2 = np.stack([W @ self.u, W @ self.v], axis=-1)  # (B,N,2)
        B, N = p2.shape[:2]
        b = np.arange(B)
        if self.mode == "full":
            cr = self._cross(p2).reshape(B, -1)  # (B, N*H)
            k = np.argmax(cr, axis=1)
            top = cr[b, k]
            loss = self.w * np.maximum(top, 0)
            i, j = np.divmod(k, len(self.q))
            g2 = np.zeros((B, N, 2))
            act = top > 0
            g2[b[act], i[act], 0] = self.w * self.e[j[act], 1]
            g2[b[act], i[act], 1] = -self.w * self.e[j[act], 0]
        else:
            m = p2.mean(axis=1)
            cr = self._cross(m)
            j = np.argmax(cr, axis=1)
            top = cr[b, j]
            off = m - self.hull_center
            dist = np.linalg.norm(off, axis=1)
            loss = self.w * np.maximum(top, 0) + self.wa * dist
            gm = np.zeros((B, 2))
            act = top > 0
            gm[act, 0] = self.w * self.e[j[act], 1]
            gm[act, 1] = -self.w * self.e[j[act], 0]
            nz = dist > 0
            gm[nz] += self.wa * off[nz] / dist[nz, None]
            g2 = np.repeat(gm[:, None, :] / N, N, axis=1)
        dLdW = g2[..., 0:1] * self.u + g2[..., 1:2] * self.v
        return loss, chain(dLdW, dW), np.ones(B, bool)


class DistanceTerm(Term):
    name = "Distance"

    def __init__(self, subj: ObjectInstance, other: ObjectInstance, dist: float, w: float, mode: str):
        self.local = subj.local_center[None]
        self.target = other.center
        self.dist = dist
        self.w = w
        self.mode = mode

    def evaluate(self, P, targets=None):
        W, dW = posed_points(P, self.local)
        diff = W[:, 0] - self.target
        d = np.linalg.norm(diff, axis=1)
        if self.mode == "squared":
            loss = self.w * d**2
            g = 2 * self.w * diff
        else:
            loss = self.w * (d - self.dist) ** 2
            safe = np.where(d > 0, d, 1.0)
            g = (2 * self.w * (d - self.dist) / safe)[:, None] * diff
            g[d == 0] = 0.0
        return loss, chain(g[:, None], dW), np.ones(len(P), bool)


class FacingTerm(Term):
    name = "FaceTo"
    error = DegenerateDirection

    def __init__(self, subj: ObjectInstance, kind: str, target_point=None, target_dir=None, w: float = 0.5, back: bool = False):
        self.local_c = subj.local_center[None]
        self.axes = np.array([subj.front_axis, subj.up_axis])
        self.kind = kind
        self.tp = None if target_point is None else np.asarray(target_point, float)
        self.td = None if target_dir is None else np.asarray(target_dir, float)
        self.sign = -1.0 if back else 1.0
        self.w = w
        if back:
            self.name = "BackTo"

    def evaluate(self, P, targets=None):
        X, dX = posed_points(P, self.local_c)
        x, dx = X[:, 0], dX[:, 0]
        A, dA = posed_points(np.column_stack([np.zeros((len(P), 3)), P[:, 3]]), self.axes)
        v, dv = self.sign * A[:, 0], self.sign * dA[:, 0]
        u, du = A[:, 1], dA[:, 1]
        if self.tp is not None:
            vt = self.tp - x
            dvt = -dx
            moves = True
        else:
            vt = np.broadcast_to(self.td, x.shape)
            dvt = np.zeros_like(x)
            moves = False
        a = np.einsum("bi,bi->b", u, vt)  # held constant for differentiation
        wv = vt - a[:, None] * u
        nv = np.linalg.norm(v, axis=1)
        nw = np.linalg.norm(wv, axis=1)
        ok = nw >= 1e-9
        safe = np.where(ok, nw, 1.0)
        cos = np.einsum("bi,bi->b", v, wv) / (nv * safe)
        loss = self.w * (1.0 - cos)
        gv = -self.w * (wv / (nv * safe)[:, None] - (cos / nv**2)[:, None] * v)
        gw = -self.w * (v / (nv * safe)[:, None] - (cos / safe**2)[:, None] * wv)
        grad = np.zeros((len(P), 4))
        if moves:
            grad[:, :3] = -gw
        grad[:, 3] = np.einsum("bi,bi->b", gv, dv) + np.einsum("bi,bi->b", gw, dvt - a[:, None] * du)
        grad[~ok] = 0.0
        loss = np.where(ok, loss, np.nan)
        return loss, grad, ok


# ---------------------------------------------------------------------------
# compilation against a scene
# ---------------------------------------------------------------------------


def resolve_surface(scene: Scene, ref: SurfaceRef, subject: str | None = None) -> PlanarSurface:
    if isinstance(ref, PlanarSurface):
        return ref
    if isinstance(ref, tuple):
        return ray_probe(scene, ref, exclude=[subject] if subject else ()).surface
    return get_surface(scene, ref)


def build_term(scene: Scene, subject: ObjectInstance, c, weights: LossWeights, overhang_mode: str | None = None) -> Term | None:
    if isinstance(c, CloseToPix):
        return ClosePixTerm(subject, scene.camera, c.target, weights.close_to_pix)
    if isinstance(c, Contact):
        surf = resolve_surface(scene, c.surface, subject.name)
        return ContactTerm(subject, c.direction, surf, weights.contact_touch, weights.contact_above)
    if isinstance(c, NoOverhang):
        surf = resolve_surface(scene, c.surface, subject.name)
        mode = overhang_mode or ("full" if c.mode == "full" else "center")
        return OverhangTerm(subject, c.direction, surf, mode, weights.overhang, weights.overhang_align)
    if isinstance(c, Distance):
        return DistanceTerm(subject, scene.get(c.other), c.dist, weights.distance, weights.distance_mode)
    if isinstance(c, FaceTo):
        back = isinstance(c, BackTo)
        if c.kind == "object":
            return FacingTerm(subject, "object", target_point=scene.get(c.target).center, w=weights.face_to, back=back)
        if c.kind == "camera":
            return FacingTerm(subject, "camera", target_point=scene.camera.position, w=weights.face_to, back=back)
        surf = resolve_surface(scene, c.target, subject.name)
        return FacingTerm(subject, "surface", target_dir=surf.normal, w=weights.face_to, back=back)
    if isinstance(c, Rotate):
        return None
    raise TypeError(f"not a constraint: {c!r}")


class CompiledSet:
    """A constraint set bound to one scene snapshot, ready for batch evaluation."""

    def __init__(self, scene: Scene, cset: ConstraintSet, weights: LossWeights | None = None, overhang_mode: str | None = None):
        self.weights = weights or LossWeights()
        self.subject = scene.get(cset.subject)
        self.cset = cset
        self.terms = [t for t in (build_term(scene, self.subject, c, self.weights, overhang_mode) for c in cset.constraints) if t is not None]
        rot = cset.rotation
        self.frozen_yaw = None
        if rot is not None:
            self.frozen_yaw = self.subject.pose.yaw + math.radians(rot.degrees)

    def evaluate(self, P, targets=None):
        P = np.asarray(P, float).reshape(-1, 4)
        loss = np.zeros(len(P))
        grad = np.zeros((len(P), 4))
        ok = np.ones(len(P), bool)
        for t in self.terms:
            l, g, k = t.evaluate(P, targets)
            loss += np.where(k, l, 0.0)
            grad += g
            ok &= k
        if self.frozen_yaw is not None:
            grad[:, 3] = 0.0
        loss[~ok] = np.nan
        return loss, grad, ok

    def per_term(self, pose: Pose) -> dict:
        P = pose.as_array()[None]
        out = {}
        for t in self.terms:
            l, _, k = t.evaluate(P)
            out[t.name] = float(l[0]) if k[0] else float("nan")
        return out


def _single(term: Term, pose: Pose, with_grad: bool):
    l, g, ok = term.evaluate(pose.as_array()[None])
    if not ok[0]:
        raise (term.error or ValueError)(f"{term.name} loss undefined at this pose")
    return (float(l[0]), g[0]) if with_grad else float(l[0])


def loss_close_to_pix(pose: Pose, subject: ObjectInstance, camera: Camera, c, weights=LossWeights(), with_grad=False):
    return _single(ClosePixTerm(subject, camera, c, weights.close_to_pix), pose, with_grad)


def loss_contact(pose: Pose, subject: ObjectInstance, direction: str, target: PlanarSurface, weights=LossWeights(), with_grad=False):
    _check_direction(direction)
    return _single(ContactTerm(subject, direction, target, weights.contact_touch, weights.contact_above), pose, with_grad)


def loss_no_overhang(pose: Pose, subject: ObjectInstance, direction: str, target: PlanarSurface, mode: str = "full", weights=LossWeights(), with_grad=False):
    _check_direction(direction)
    return _single(OverhangTerm(subject, direction, target, mode, weights.overhang, weights.overhang_align), pose, with_grad)


def loss_distance(pose: Pose, subject: ObjectInstance, other: ObjectInstance, dist: float, weights=LossWeights(), with_grad=False):
    return _single(DistanceTerm(subject, other, dist, weights.distance, weights.distance_mode), pose, with_grad)


def _facing(pose, subject, target, camera, weights, back):
    if isinstance(target, PlanarSurface):
        return FacingTerm(subject, "surface", target_dir=target.normal, w=weights.face_to, back=back)
    if isinstance(target, ObjectInstance):
        return FacingTerm(subject, "object", target_point=target.center, w=weights.face_to, back=back)
    if isinstance(target, str) and target == "camera":
        if camera is None:
            raise ValueError("camera target needs a camera")
        return FacingTerm(subject, "camera", target_point=camera.position, w=weights.face_to, back=back)
    raise UnknownObject(f"cannot resolve facing target {target!r}")


def loss_face_to(pose: Pose, subject: ObjectInstance, target, camera: Camera | None = None, weights=LossWeights(), with_grad=False):
    return _single(_facing(pose, subject, target, camera, weights, False), pose, with_grad)


def loss_back_to(pose: Pose, subject: ObjectInstance, target, camera: Camera | None = None, weights=LossWeights(), with_grad=False):
    return _single(_facing(pose, subject, target, camera, weights, True), pose, with_grad)


def total_loss(pose: Pose, scene: Scene, cset: ConstraintSet, weights: LossWeights | None = None):
    """Summed loss and 4-vector gradient at ``pose`` (yaw entry zero when Rotate freezes it)."""
    comp = CompiledSet(scene, cset, weights)
    l, g, ok = comp.evaluate(pose.as_array()[None])
    if not ok[0]:
        for t in comp.terms:
            _, _, k = t.evaluate(pose.as_array()[None])
            if not k[0]:
                raise (t.error or ValueError)(f"{t.name} loss undefined at this pose")
    return float(l[0]), g[0]
