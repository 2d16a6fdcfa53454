"""Constraint-based pose solver: perturb, optimize in batch, filter, pick."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import CompiledSet, ConstraintSet, LossWeights, NoOverhang
from .errors import NoHit, SolveFailed
from .probe import ray_probe
from .scene import Pose, Scene, apply_pose, pixel_ray, project, unproject
from .validate import check_collision


@dataclass(frozen=True)
class SolverConfig:
    sigma_pix: float = 0.2
    batch: int = 16
    iterations: int = 800
    lr_start: float = 1e-1
    lr_end: float = 1e-4
    tau: float = 1e-1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_pix > 0:
            raise ValueError("sigma_pix must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (self.tau > 0 and self.lr_start > 0 and self.lr_end > 0):
            raise ValueError("tau and learning rates must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "SolverConfig":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class PoseSolution:
    pose: Pose
    residual: float
    pixel: tuple[float, float]
    collision_free: bool
    mode: str = "full"
    terms: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "pose": self.pose.to_json(),
            "residual": self.residual,
            "pixel": list(self.pixel),
            "collision_free": self.collision_free,
            "mode": self.mode,
            "terms": dict(self.terms),
        }


def sample_perturbations(c, config: SolverConfig = SolverConfig(), rng=None) -> np.ndarray:
    """(n, 2) Gaussian samples around ``c``; deterministic for a given seed."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    c = np.asarray(c, float)
    return c + config.sigma_pix * rng.standard_normal((config.batch, 2))


def learning_rate(i: int, config: SolverConfig) -> float:
    if config.iterations == 1:
        return config.lr_start
    return config.lr_start + (config.lr_end - config.lr_start) * i / (config.iterations - 1)


def _anchor(scene: Scene, subject: str, pixel, fallback) -> np.ndarray:
    for px in (pixel, fallback):
        try:
            return ray_probe(scene, px, exclude=[subject]).position
        except NoHit:
            continue
    o, d = pixel_ray(scene.camera, pixel)
    if d[2] < -1e-9:
        return o - d * (o[2] / d[2])
    return unproject(scene.camera, pixel, 1.0)


def initial_poses(scene: Scene, cset: ConstraintSet, pixels: np.ndarray | None) -> np.ndarray:
    """Start poses (B,4): the subject's bbox bottom center on the ray hit at each pixel."""
    subj = scene.get(cset.subject)
    rot = cset.rotation
    yaw = subj.pose.yaw + np.radians(rot.degrees) if rot is not None else 0.0
    if pixels is None:
        return np.array([[*subj.pose.translation, yaw]])
    lo, hi = subj.local_bounds
    c, s = np.cos(yaw), np.sin(yaw)
    foot = np.array([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), lo[2]])
    foot_w = np.array([c * foot[0] - s * foot[1], s * foot[0] + c * foot[1], foot[2]])
    base = cset.pixel_target
    out = []
    for px in pixels:
        hit = _anchor(scene, cset.subject, px, base)
        out.append([*(hit - foot_w), yaw])
    return np.array(out)


def optimize_batch(comp: CompiledSet, P0: np.ndarray, targets, config: SolverConfig, trace: list | None = None) -> np.ndarray:
    """AdamW over a batch of poses. Candidates that hit an undefined loss are frozen."""
    P = np.array(P0, float)
    m = np.zeros_like(P)
    v = np.zeros_like(P)
    alive = np.ones(len(P), bool)
    b1, b2 = config.beta1, config.beta2
    for i in range(config.iterations):
        loss, g, ok = comp.evaluate(P, targets)
        alive &= ok
        if trace is not None:
            trace.append(loss.copy())
        g[~alive] = 0.0
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** (i + 1))
        vh = v / (1 - b2 ** (i + 1))
        step = learning_rate(i, config) * (mh / (np.sqrt(vh) + config.eps) + config.weight_decay * P)
        step[~alive] = 0.0
        P -= step
    if comp.frozen_yaw is not None:
        P[:, 3] = comp.frozen_yaw
    if trace is not None:
        trace.append(comp.evaluate(P, targets)[0])
    P[~alive] = np.nan
    return P


def optimize_pose(scene: Scene, cset: ConstraintSet, config: SolverConfig = SolverConfig(), weights: LossWeights | None = None, overhang_mode: str | None = None, trace: list | None = None) -> Pose:
    """Single-candidate optimization from the ray-cast start at the set's pixel target."""
    comp = CompiledSet(scene, cset, weights, overhang_mode)
    c = cset.pixel_target
    P0 = initial_poses(scene, cset, None if c is None else c[None])
    P = optimize_batch(comp, P0, None, config, trace)
    return Pose.from_array(P[0])


def _modes(cset: ConstraintSet) -> list[str]:
    overhang = [c for c in cset.constraints if isinstance(c, NoOverhang)]
    if any(c.mode == "center" for c in overhang):
        return ["full", "center"]
    return ["full"]


def solve(
    scene: Scene,
    cset: ConstraintSet,
    config: SolverConfig = SolverConfig(),
    weights: LossWeights | None = None,
    allow_collisions: bool = False,
) -> PoseSolution:
    """Best collision-free pose among perturbed, optimized candidates.

    With ``allow_collisions`` the lowest-residual candidate is returned
    (flagged not collision-free) instead of raising SolveFailed.
    """
    c = cset.pixel_target
    rng = np.random.default_rng(config.seed)
    if c is not None:
        pixels = sample_perturbations(c, config, rng)
    else:
        pixels = None
    stats = []
    fallback = None
    for mode in _modes(cset):
        comp = CompiledSet(scene, cset, weights, overhang_mode=mode)
        P0 = initial_poses(scene, cset, pixels)
        P = optimize_batch(comp, P0, pixels, config)
        residual, _, ok = comp.evaluate(np.nan_to_num(P), None)
        residual = np.where(ok & np.all(np.isfinite(P), axis=1), residual, np.nan)
        keep = np.nonzero(residual <= config.tau)[0]
        order = keep[np.argsort(residual[keep], kind="stable")]
        checked = 0
        for k in order:
            pose = Pose.from_array(P[k])
            trial = apply_pose(scene, cset.subject, pose)
            checked += 1
            if not check_collision(trial, cset.subject).colliding:
                px = tuple(float(x) for x in (pixels[k] if pixels is not None else project(scene.camera, trial.get(cset.subject).center)))
                return PoseSolution(pose, float(residual[k]), px, True, mode, comp.per_term(pose))
        stats.append(f"{mode}: {len(keep)}/{len(P)} under tau, {checked} collided")
        finite = np.nonzero(np.isfinite(residual))[0]
        if fallback is None and len(finite):
            k = finite[np.argmin(residual[finite])]
            fallback = (k, P[k], float(residual[k]), mode, comp)
    if allow_collisions and fallback is not None:
        k, p, r, mode, comp = fallback
        pose = Pose.from_array(p)
        px = pixels[k] if pixels is not None else project(scene.camera, apply_pose(scene, cset.subject, pose).get(cset.subject).center)
        return PoseSolution(pose, r, tuple(float(x) for x in px), False, mode, comp.per_term(pose))
    raise SolveFailed(f"no feasible pose for {cset.subject!r} ({'; '.join(stats)})")
