"""Plan / execute / evaluate loop with adaptive backtracking over step depth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np

from .agents import PlanRecord, consensus
from .constraints import LossWeights
from .errors import AgentError, ArrangeError, SearchExhausted, StepFailed, UnknownObject
from .raster import AnnotationSpec, annotate, png_bytes, render_color
from .scene import Scene, apply_pose, project
from .solver import SolverConfig, solve
from .validate import check_floating

COMPLETE = "Complete"
EDITED = "Edited"
FAILED = "Failed"


@dataclass(frozen=True)
class SearchConfig:
    attempts: int = 4
    evaluators: int = 3
    seed: int = 0
    backtracking: bool = True
    budget_factor: int = 8
    solver: SolverConfig = field(default_factory=SolverConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    resolution: int = 512
    grid_divisions: int = 10

    def __post_init__(self):
        if self.attempts < 1 or self.evaluators < 1:
            raise ValueError("need at least one attempt and one evaluator")
        if self.budget_factor < 1:
            raise ValueError("budget_factor must be >= 1")

    def to_json(self) -> dict:
        return {
            "attempts": self.attempts,
            "evaluators": self.evaluators,
            "seed": self.seed,
            "backtracking": self.backtracking,
            "budget_factor": self.budget_factor,
            "solver": self.solver.to_json(),
            "weights": vars(self.weights).copy(),
            "resolution": self.resolution,
            "grid_divisions": self.grid_divisions,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SearchConfig":
        kw = {k: d[k] for k in ("attempts", "evaluators", "seed", "backtracking", "budget_factor", "resolution", "grid_divisions") if k in d}
        if "solver" in d:
            kw["solver"] = SolverConfig.from_json(d["solver"])
        if "weights" in d:
            kw["weights"] = LossWeights(**d["weights"])
        return cls(**kw)


@dataclass
class SearchState:
    """Mutable search bookkeeping. ``history`` holds one item per accepted edit."""

    s_max: int
    initial: Any = None
    history: list = field(default_factory=list)
    k: int = 0
    d_a: int = 0
    d_max: int = 0
    visits: dict = field(default_factory=dict)
    executed: int = 0

    def check(self) -> None:
        assert 0 <= self.d_a <= self.d_max, (self.d_a, self.d_max)
        assert self.k <= self.s_max and len(self.history) == self.k

    @property
    def current_scene(self) -> Scene:
        return self.history[-1].scene if self.history else self.initial

    @property
    def previous_scene(self) -> Scene | None:
        if not self.history:
            return None
        return self.history[-2].scene if len(self.history) > 1 else self.initial

    @property
    def records(self) -> list:
        return [h.record for h in self.history]


@dataclass(frozen=True)
class Edit:
    scene: Scene
    record: PlanRecord


@dataclass
class StepOutcome:
    state: str
    scene: Scene | None = None
    record: PlanRecord | None = None
    attempts: list = field(default_factory=list)

    @property
    def edit(self) -> Edit | None:
        return None if self.scene is None else Edit(self.scene, self.record)


def accept(scores: Sequence[int], grounded: bool, collision_free: bool) -> bool:
    """Strictly conjunctive gate: positive mean score, grounded, collision-free."""
    return bool(scores) and sum(scores) / len(scores) > 0 and grounded and collision_free


def step_seed(seed: int, k: int, attempt: int, visit: int) -> int:
    return int(np.random.SeedSequence([seed, k, attempt, visit]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# visual annotation
# ---------------------------------------------------------------------------


def annotate_for_agents(scene: Scene, previous: Scene | None = None, moved: str | None = None, resolution: int = 512, divisions: int = 10) -> dict:
    """{"current": grid image, "edit": arrow image, "arrow": (p0, p1)}; grid only on the first step."""
    base = render_color(scene, resolution, resolution)
    out = {"current": annotate(base, AnnotationSpec(divisions))}
    if previous is None or moved is None:
        return out
    if moved not in scene or moved not in previous:
        raise UnknownObject(f"{moved!r} must exist in both scenes")
    p0 = tuple(project(previous.camera, previous.get(moved).center))
    p1 = tuple(project(scene.camera, scene.get(moved).center))
    out["edit"] = annotate(base, AnnotationSpec(0, arrows=((p0, p1),)))
    out["arrow"] = (p0, p1)
    return out


class Views:
    """Lazily rendered agent views; scripted agents never trigger a render."""

    def __init__(self, scene: Scene, previous: Scene | None = None, moved: str | None = None, resolution: int = 512, divisions: int = 10):
        self.scene, self.previous, self.moved = scene, previous, moved
        self.resolution, self.divisions = resolution, divisions

    @cached_property
    def images(self) -> dict:
        return annotate_for_agents(self.scene, self.previous, self.moved, self.resolution, self.divisions)

    @property
    def current_png(self) -> bytes:
        return png_bytes(self.images["current"])

    @property
    def edit_png(self) -> bytes:
        img = self.images.get("edit", self.images["current"])
        return png_bytes(img)


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------


def run_step(state: SearchState, planner, executor, evaluators: Sequence, config: SearchConfig = SearchConfig()) -> StepOutcome:
    """Plan one edit and try it up to ``config.attempts`` times.

    Raises StepFailed when no attempt passes the gate. The exception carries
    the attempt log and, when any candidate scene was produced, the best one
    by mean score (used by the no-backtracking mode).
    """
    k = state.k
    scene = state.current_scene
    last_moved = state.history[-1].record.constraints.subject if state.history else None
    views = Views(scene, state.previous_scene, last_moved, config.resolution, config.grid_divisions)
    try:
        resp = planner.plan(state, scene, views)
    except AgentError as exc:
        raise StepFailed(f"planner failed: {exc}") from None
    if resp.complete:
        return StepOutcome(COMPLETE)
    if k >= state.s_max:
        raise StepFailed(f"step budget {state.s_max} reached without completion")
    visit = state.visits.get(k, 1) - 1
    log = []
    candidates = []
    for a in range(config.attempts):
        seed = step_seed(config.seed, k, a, visit)
        entry = {"attempt": a, "seed": seed}
        log.append(entry)
        try:
            trace = executor.execute(scene, resp, a, seed, views)
            cs = trace.constraints
            sol = solve(scene, cs, replace(config.solver, seed=seed), config.weights, allow_collisions=not config.backtracking)
            new = apply_pose(scene, cs.subject, sol.pose)
            record = PlanRecord(k, visit, a, resp.instruction, resp.target, cs, sol, dict(resp.meta))
            ev_views = Views(new, scene, cs.subject, config.resolution, config.grid_divisions)
            verdicts = [ev.evaluate(new, record, j, ev_views) for j, ev in enumerate(evaluators)]
        except ArrangeError as exc:
            entry["error"] = f"{exc.code}: {exc}"
            continue
        grounded = check_floating(new).passed
        scores = [v.score for v in verdicts]
        ok = accept(scores, grounded, sol.collision_free)
        entry.update({
            "ratings": [v.rating for v in verdicts],
            "mean": consensus(verdicts),
            "grounded": grounded,
            "collision_free": sol.collision_free,
            "residual": sol.residual,
            "accepted": ok,
        })
        record.score = consensus(verdicts)
        candidates.append((record.score, a, ok, new, record))
        if ok and all(s >= 1 for s in scores):
            break
    accepted = [c for c in candidates if c[2]]
    if not accepted:
        err = StepFailed(f"step {k}: no attempt accepted")
        err.attempts = log
        err.fallback = None
        if candidates:
            best = max(candidates, key=lambda c: (c[0], -c[1]))
            err.fallback = Edit(best[3], best[4])
        raise err
    best = max(accepted, key=lambda c: (c[0], -c[1]))
    return StepOutcome(EDITED, best[3], best[4], log)


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def adaptive_backtracking(step_fn: Callable[[SearchState], tuple], s_max: int, budget: int | None = None, state: SearchState | None = None):
    """Drive ``step_fn`` with anchor-depth backtracking.

    ``step_fn(state)`` returns ``(token, item)`` with token Complete, Edited
    or Failed. Edited items are appended to the history. On failure the
    anchor halves (floor) and history is cut back to it; reaching a new
    maximum depth moves the anchor there. Returns ``(state, trace)`` where
    trace lists ``(k, d_a, d_max)`` before the first and after every step.
    """
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    budget = 8 * s_max if budget is None else budget
    st = state if state is not None else SearchState(s_max)
    trace = [(st.k, st.d_a, st.d_max)]
    while True:
        if st.executed >= budget:
            raise SearchExhausted(f"step budget of {budget} executions spent (reached depth {st.d_max})")
        st.executed += 1
        st.visits[st.k] = st.visits.get(st.k, 0) + 1
        token, item = step_fn(st)
        if token == COMPLETE:
            return st, trace
        if token == EDITED and st.k < s_max:
            if st.k + 1 > st.d_max:
                st.d_max = st.d_a = st.k + 1
            st.history.append(item)
            st.k += 1
        else:
            st.d_a //= 2
            del st.history[st.d_a:]
            st.k = st.d_a
        st.check()
        trace.append((st.k, st.d_a, st.d_max))


@dataclass
class Agents:
    planner: Any
    executor: Any
    evaluators: Sequence


@dataclass
class SearchResult:
    initial: Scene
    edits: list
    trace: list
    failures: list
    executed: int
    completed: bool = True

    @property
    def scenes(self) -> list:
        return [self.initial] + [e.scene for e in self.edits]

    @property
    def final(self) -> Scene:
        return self.scenes[-1]

    def trajectory(self) -> list:
        """(scene, moved object) per step, the input to compute_metrics."""
        return [(e.scene, e.record.constraints.subject) for e in self.edits]

    def to_json(self) -> dict:
        steps = []
        for e in self.edits:
            d = e.record.to_json()
            d["scene_version"] = e.scene.version
            d["scene_digest"] = e.scene.digest()
            steps.append(d)
        return {
            "completed": self.completed,
            "executed": self.executed,
            "steps": steps,
            "trace": [list(t) for t in self.trace],
            "failures": list(self.failures),
            "final_poses": {o.name: o.pose.to_json() for o in self.final.objects},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def search(initial: Scene, agents: Agents, config: SearchConfig = SearchConfig(), s_max: int = 6) -> SearchResult:
    """Run the arrangement loop until the planner reports completion.

    With ``config.backtracking`` off, failed steps are not retried: the best
    candidate (if any) is kept regardless of the gate and the run moves on.
    """
    failures: list = []
    evaluators = list(agents.evaluators)[: config.evaluators]

    if not config.backtracking:
        return _linear(initial, agents, evaluators, config, s_max, failures)

    def step(st: SearchState):
        try:
            out = run_step(st, agents.planner, agents.executor, evaluators, config)
        except StepFailed as exc:
            failures.append({"step": st.k, "visit": st.visits[st.k] - 1, "reason": str(exc)})
            return FAILED, None
        return out.state, out.edit

    st = SearchState(s_max, initial)
    st, trace = adaptive_backtracking(step, s_max, config.budget_factor * s_max, st)
    return SearchResult(initial, list(st.history), trace, failures, st.executed)


def _linear(initial, agents, evaluators, config, s_max, failures) -> SearchResult:
    st = SearchState(s_max, initial)
    trace = [(0, 0, 0)]
    completed = False
    while True:
        st.executed += 1
        st.visits[st.k] = st.visits.get(st.k, 0) + 1
        try:
            out = run_step(st, agents.planner, agents.executor, evaluators, config)
        except StepFailed as exc:
            failures.append({"step": st.k, "visit": 0, "reason": str(exc)})
            if st.k >= s_max:
                break
            fb = getattr(exc, "fallback", None)
            st.history.append(fb if fb is not None else Edit(st.current_scene, None))
            st.k += 1
            trace.append((st.k, 0, st.k))
            continue
        if out.state == COMPLETE:
            completed = True
            break
        st.history.append(out.edit)
        st.k += 1
        trace.append((st.k, 0, st.k))
    edits = [e for e in st.history if e.record is not None]
    return SearchResult(initial, edits, trace, failures, st.executed, completed)
