"""Planner / Executor / Evaluator agents.

Two families share one duck-typed interface:

* scripted agents replay a plan script (JSON) and are used for tests and the
  benchmark suite;
* remote agents POST role-tagged JSON to an HTTP endpoint fronting a
  multimodal model.

Interface::

    planner.plan(state, scene, views) -> PlannerResponse
    executor.execute(scene, response, attempt, seed, views) -> ExecutorTrace
    evaluator.evaluate(scene, record, index, views) -> EvaluationVerdict
"""

from __future__ import annotations

import base64
import json
import socket
import string
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .constraints import CloseToPix, ConstraintSet, constraint_set_from_json, constraint_set_to_json
from .errors import (
    AgentTimeout,
    MissingFile,
    ParseError,
    SchemaError,
    ScriptExhausted,
    StepFailed,
    TransportError,
)
from .validate import check_floating

RATINGS = ("terrible", "bad", "fair", "good", "excellent")
SCORES = {r: i - 2 for i, r in enumerate(RATINGS)}
DEFAULT_TAU = 0.1
TOOL_CALL_LIMIT = 20


@dataclass(frozen=True)
class EvaluationVerdict:
    rating: str

    def __post_init__(self):
        if self.rating not in SCORES:
            raise ValueError(f"unknown rating {self.rating!r}")

    @property
    def score(self) -> int:
        return SCORES[self.rating]


def consensus(verdicts: Sequence[EvaluationVerdict]) -> float:
    return sum(v.score for v in verdicts) / len(verdicts) if verdicts else float("-inf")


@dataclass(frozen=True)
class PlannerResponse:
    state: str  # "plan" or "complete"
    instruction: str = ""
    target: tuple | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.state not in ("plan", "complete"):
            raise ValueError("planner state must be 'plan' or 'complete'")
        if self.state == "plan":
            if not self.instruction:
                raise ValueError("a plan needs an instruction")
            if self.target is None or len(self.target) != 2:
                raise ValueError("a plan needs a 2D target")
            t = tuple(float(x) for x in self.target)
            if not all(0.0 <= x <= 1.0 for x in t):
                raise ValueError(f"target {t} outside [0, 1]^2")
            object.__setattr__(self, "target", t)

    @property
    def complete(self) -> bool:
        return self.state == "complete"

    def to_json(self) -> dict:
        d = {"state": self.state, "instruction": self.instruction}
        if self.target is not None:
            d["target"] = list(self.target)
        return d


@dataclass
class ExecutorTrace:
    constraints: ConstraintSet
    calls: list = field(default_factory=list)  # {"method", "params", "result"} dicts

    def to_json(self) -> dict:
        return {"calls": list(self.calls), "constraints": constraint_set_to_json(self.constraints)}


@dataclass
class PlanRecord:
    step: int
    visit: int
    attempt: int
    instruction: str
    target: tuple
    constraints: ConstraintSet
    solution: Any = None
    meta: dict = field(default_factory=dict)
    score: float | None = None  # consensus mean, set once evaluated

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "visit": self.visit,
            "attempt": self.attempt,
            "instruction": self.instruction,
            "target": list(self.target),
            "constraints": constraint_set_to_json(self.constraints),
            "solution": None if self.solution is None else self.solution.to_json(),
            "score": self.score,
        }


# ---------------------------------------------------------------------------
# plan scripts
# ---------------------------------------------------------------------------


def _target(v, where: str) -> tuple[float, float]:
    try:
        t = (float(v[0]), float(v[1]))
        if len(v) != 2:
            raise ValueError
    except (TypeError, ValueError, IndexError):
        raise ParseError("target must be [x, y]", field=where) from None
    if not all(0.0 <= x <= 1.0 for x in t):
        raise ParseError(f"target {list(t)} outside [0, 1]^2", field=where)
    return t


@dataclass(frozen=True)
class PlanStep:
    """One scripted step. ``variants`` replace (target, constraints) on later visits."""

    instruction: str
    target: tuple
    constraints: ConstraintSet
    variants: tuple = ()  # ((target, ConstraintSet), ...) for visits 1, 2, ...
    verdicts: tuple = ()  # per attempt, a list of forced ratings (one per evaluator)
    fail_visits: tuple = ()

    def option(self, visit: int) -> tuple:
        options = ((self.target, self.constraints), *self.variants)
        return options[min(visit, len(options) - 1)]

    def to_json(self) -> dict:
        d = {
            "instruction": self.instruction,
            "target": list(self.target),
            "constraints": constraint_set_to_json(self.constraints),
        }
        if self.variants:
            d["variants"] = [{"target": list(t), "constraints": constraint_set_to_json(c)} for t, c in self.variants]
        if self.verdicts:
            d["verdicts"] = [list(v) for v in self.verdicts]
        if self.fail_visits:
            d["fail_visits"] = list(self.fail_visits)
        return d


@dataclass(frozen=True)
class PlanScript:
    instruction: str
    s_max: int
    steps: tuple

    def to_json(self) -> dict:
        return {"instruction": self.instruction, "s_max": self.s_max, "steps": [s.to_json() for s in self.steps]}


def plan_script_from_json(data: dict) -> PlanScript:
    if not isinstance(data, dict):
        raise ParseError("plan script must be an object")
    raw = data.get("steps")
    if not isinstance(raw, list) or not raw:
        raise ParseError("plan script needs a non-empty 'steps' list", field="steps")
    steps = []
    for i, s in enumerate(raw):
        where = f"steps[{i}]"
        if not isinstance(s, dict) or "constraints" not in s:
            raise ParseError("step needs 'constraints'", field=where)
        verdicts = tuple(tuple(v) for v in s.get("verdicts", ()))
        for row in verdicts:
            for r in row:
                if r not in SCORES:
                    raise ParseError(f"unknown rating {r!r}", field=f"{where}.verdicts")
        base = constraint_set_from_json(s["constraints"])
        variants = []
        for j, v in enumerate(s.get("variants", ())):
            if not isinstance(v, dict):
                raise ParseError("variant must be an object", field=f"{where}.variants[{j}]")
            cs = constraint_set_from_json(v["constraints"]) if "constraints" in v else base
            variants.append((_target(v.get("target"), f"{where}.variants[{j}].target"), cs))
        steps.append(PlanStep(
            instruction=str(s.get("instruction", "")) or f"step {i}",
            target=_target(s.get("target"), f"{where}.target"),
            constraints=base,
            variants=tuple(variants),
            verdicts=verdicts,
            fail_visits=tuple(int(v) for v in s.get("fail_visits", ())),
        ))
    s_max = int(data.get("s_max", len(steps)))
    if s_max < 1:
        raise ParseError("s_max must be >= 1", field="s_max")
    return PlanScript(str(data.get("instruction", "")), s_max, tuple(steps))


def load_plan_script(path) -> PlanScript:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"plan script not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return plan_script_from_json(data)


# ---------------------------------------------------------------------------
# scripted agents
# ---------------------------------------------------------------------------


class ScriptedPlanner:
    """Replays step k of the script; Complete once k passes the last step."""

    def __init__(self, script: PlanScript):
        self.script = script
        self._completed = False

    def plan(self, state, scene=None, views=None) -> PlannerResponse:
        if self._completed:
            raise ScriptExhausted("planner already reported completion")
        k = state.k
        if k >= len(self.script.steps):
            self._completed = True
            return PlannerResponse("complete")
        step = self.script.steps[k]
        visit = state.visits.get(k, 1) - 1
        target, cs = step.option(visit)
        meta = {"verdicts": step.verdicts, "forced_fail": visit in step.fail_visits, "constraints": cs}
        return PlannerResponse("plan", step.instruction, target, meta)


class ScriptedExecutor:
    """Returns the scripted constraint set, retargeting CloseToPix at the plan's pixel."""

    def execute(self, scene, response: PlannerResponse, attempt: int = 0, seed: int = 0, views=None) -> ExecutorTrace:
        if response.meta.get("forced_fail"):
            raise StepFailed("scripted failure")
        cs = response.meta["constraints"]
        if any(isinstance(c, CloseToPix) for c in cs.constraints):
            cs = cs.with_pixel_target(response.target)
        return ExecutorTrace(cs)


class RuleEvaluator:
    """Deterministic verdict from grounding and the solver residual."""

    def __init__(self, tau: float = DEFAULT_TAU):
        self.tau = tau

    def rate(self, residual: float, grounded: bool) -> str:
        if not grounded:
            return "terrible"
        if residual <= self.tau / 2:
            return "excellent"
        if residual <= self.tau:
            return "good"
        if residual <= 2 * self.tau:
            return "fair"
        return "bad"

    def evaluate(self, scene, record: PlanRecord, index: int = 0, views=None) -> EvaluationVerdict:
        residual = record.solution.residual if record.solution is not None else float("inf")
        return EvaluationVerdict(self.rate(residual, check_floating(scene).passed))


class ScriptedEvaluator(RuleEvaluator):
    """Uses forced verdicts from the plan script when present, else the rule."""

    def evaluate(self, scene, record: PlanRecord, index: int = 0, views=None) -> EvaluationVerdict:
        forced = record.meta.get("verdicts") or ()
        if forced:
            row = forced[min(record.attempt, len(forced) - 1)]
            return EvaluationVerdict(row[index % len(row)])
        return super().evaluate(scene, record, index, views)


def rule_based_evaluator(scene, record: PlanRecord, tau: float = DEFAULT_TAU) -> EvaluationVerdict:
    return RuleEvaluator(tau).evaluate(scene, record)


# ---------------------------------------------------------------------------
# remote agents
# ---------------------------------------------------------------------------


def load_prompt(role: str) -> string.Template:
    try:
        text = resources.files("arrangekit").joinpath("prompts", f"{role}.txt").read_text()
    except FileNotFoundError:
        raise MissingFile(f"no prompt template for role {role!r}") from None
    return string.Template(text)


def render_prompt(role: str, **fields) -> str:
    return load_prompt(role).safe_substitute({k: str(v) for k, v in fields.items()})


class RemoteAgentClient:
    """POSTs {role, prompt, images, context} as JSON and returns the decoded reply."""

    def __init__(self, endpoint: str, timeout: float = 120.0, retries: int = 1, headers: dict | None = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.headers = {"Content-Type": "application/json", **(headers or {})}

    def call(self, role: str, prompt: str, images: Sequence[bytes] = (), context: dict | None = None) -> dict:
        body = json.dumps({
            "role": role,
            "prompt": prompt,
            "images": [base64.b64encode(b).decode("ascii") for b in images],
            "context": context or {},
        }).encode()
        last: Exception | None = None
        for _ in range(self.retries + 1):
            req = urllib.request.Request(self.endpoint, data=body, headers=self.headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read()
            except (socket.timeout, TimeoutError):
                last = AgentTimeout(f"{role} call timed out after {self.timeout}s")
                continue
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                    last = AgentTimeout(f"{role} call timed out after {self.timeout}s")
                else:
                    last = TransportError(f"{role} call failed: {exc}")
                continue
            except OSError as exc:
                last = TransportError(f"{role} call failed: {exc}")
                continue
            try:
                data = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError):
                raise SchemaError(f"{role} reply is not JSON") from None
            if not isinstance(data, dict):
                raise SchemaError(f"{role} reply must be an object")
            return data
        raise last


def parse_planner_reply(data: dict) -> PlannerResponse:
    try:
        state = data["state"]
        if state == "complete":
            return PlannerResponse("complete", str(data.get("instruction", "")))
        return PlannerResponse(state, str(data["instruction"]), tuple(data["target"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad planner reply: {exc}") from None


def parse_evaluator_reply(data: dict) -> EvaluationVerdict:
    try:
        return EvaluationVerdict(str(data["rating"]).lower())
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad evaluator reply: {exc}") from None


def _history_text(state) -> str:
    lines = [f"{i}: {r.instruction}" for i, r in enumerate(getattr(state, "records", []))]
    return "\n".join(lines) or "(none)"


class RemotePlanner:
    def __init__(self, client: RemoteAgentClient, instruction: str):
        self.client = client
        self.instruction = instruction

    def plan(self, state, scene, views=None) -> PlannerResponse:
        prompt = render_prompt("planner", instruction=self.instruction, step=state.k, s_max=state.s_max, history=_history_text(state))
        images = [views.current_png] if views is not None else []
        return parse_planner_reply(self.client.call("planner", prompt, images, {"step": state.k}))


class RemoteExecutor:
    """Constraint mode: the reply is a constraint set.

    Tool-loop mode: replies may be ``{"tool_call": {"method", "params"}}``; each
    call runs against a tool session on the current scene and its result is
    sent back, until constraints are submitted or the call cap is reached.
    """

    def __init__(self, client: RemoteAgentClient, tool_loop: bool = False, max_calls: int = TOOL_CALL_LIMIT):
        self.client = client
        self.tool_loop = tool_loop
        self.max_calls = max_calls

    def execute(self, scene, response: PlannerResponse, attempt: int = 0, seed: int = 0, views=None) -> ExecutorTrace:
        prompt = render_prompt(
            "executor",
            instruction=response.instruction,
            target=f"[{response.target[0]:.3f}, {response.target[1]:.3f}]",
            objects=", ".join(scene.names),
        )
        images = [views.current_png] if views is not None else []
        context: dict = {"attempt": attempt, "seed": seed, "tool_loop": self.tool_loop, "tool_results": []}
        calls: list = []
        session = None
        while True:
            data = self.client.call("executor", prompt, images, context)
            if "constraints" in data:
                try:
                    cs = constraint_set_from_json(data["constraints"])
                except ParseError as exc:
                    raise SchemaError(f"bad executor constraints: {exc}") from None
                return ExecutorTrace(cs, calls)
            call = data.get("tool_call")
            if not self.tool_loop or not isinstance(call, dict) or "method" not in call:
                raise SchemaError("executor reply needs 'constraints' or a 'tool_call'")
            if len(calls) >= self.max_calls:
                raise SchemaError(f"executor exceeded {self.max_calls} tool calls")
            if session is None:
                from .server import ToolSession

                session = ToolSession(scene)
            result = session.handle({"id": len(calls), "method": call["method"], "params": call.get("params", {})})
            calls.append({"method": call["method"], "params": call.get("params", {}), "result": result})
            context["tool_results"] = calls
            images = []


class RemoteEvaluator:
    def __init__(self, client: RemoteAgentClient):
        self.client = client

    def evaluate(self, scene, record: PlanRecord, index: int = 0, views=None) -> EvaluationVerdict:
        prompt = render_prompt("evaluator", instruction=record.instruction, subject=record.constraints.subject)
        images = [views.current_png, views.edit_png] if views is not None else []
        return parse_evaluator_reply(self.client.call("evaluator", prompt, images, {"index": index, "attempt": record.attempt}))
