import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arrangekit.agents import PlanScript, PlanStep, ScriptedEvaluator, ScriptedExecutor, ScriptedPlanner, SCORES
from arrangekit.constraints import CloseToPix, ConstraintSet, Contact
from arrangekit.errors import SearchExhausted, StepFailed
from arrangekit.raster import ARROW_COLOR
from arrangekit.scene import Pose, apply_pose, make_scene
from arrangekit.search import (
    COMPLETE,
    EDITED,
    FAILED,
    Agents,
    SearchConfig,
    SearchState,
    accept,
    adaptive_backtracking,
    annotate_for_agents,
    run_step,
    search,
    step_seed,
)
from arrangekit.solver import SolverConfig

from conftest import block, floor, room_camera

# -- backtracking schedule ----------------------------------------------------


def _scripted(tokens):
    """step_fn replaying ``tokens``; Edited items record the depth they were made at."""
    it = iter(tokens)

    def step(state):
        tok = next(it)
        return tok, ("item", state.k) if tok == EDITED else None

    return step


E, F, C = EDITED, FAILED, COMPLETE

# traces worked out by hand from the update rule:
#   Edited at k < s_max: k += 1, and a new deepest k moves d_a and d_max there
#   otherwise: d_a = floor(d_a / 2), history cut to d_a, k = d_a
SCHEDULES = {
    "two_up_one_down": (
        6,
        [E, E, F, E, E, F, E, E, F, C],
        [(0, 0, 0), (1, 1, 1), (2, 2, 2), (1, 1, 2), (2, 1, 2), (3, 3, 3), (1, 1, 3), (2, 1, 3), (3, 1, 3), (0, 0, 3)],
    ),
    "fail_at_four": (
        6,
        [E, E, E, E, F, E, E, E, E, C],
        [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3), (4, 4, 4), (2, 2, 4), (3, 2, 4), (4, 2, 4), (5, 5, 5), (6, 6, 6)],
    ),
    "all_success": (
        3,
        [E, E, E, C],
        [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3)],
    ),
}


@pytest.mark.parametrize("name", list(SCHEDULES))
def test_backtracking_traces(name):
    s_max, tokens, expected = SCHEDULES[name]
    state, trace = adaptive_backtracking(_scripted(tokens), s_max)
    assert trace == expected
    assert [item[1] for item in state.history] == list(range(state.k))


def test_edit_beyond_s_max_counts_as_failure():
    _, trace = adaptive_backtracking(_scripted([E, E, E, C]), 2)
    assert trace == [(0, 0, 0), (1, 1, 1), (2, 2, 2), (1, 1, 2)]


def test_budget_exhaustion():
    calls = []

    def always_fail(state):
        calls.append(state.k)
        return FAILED, None

    with pytest.raises(SearchExhausted):
        adaptive_backtracking(always_fail, 3)
    assert len(calls) == 24


def test_visits_counted_per_depth():
    state, _ = adaptive_backtracking(_scripted([E, F, E, F, E, C]), 4)
    assert state.visits == {0: 3, 1: 3}


@settings(max_examples=200)
@given(st.integers(1, 6), st.lists(st.sampled_from([E, F]), max_size=40))
def test_backtracking_invariants(s_max, tokens):
    made = []

    def step(state):
        if not tokens:
            return COMPLETE, None
        tok = tokens.pop(0)
        item = (len(made), state.k)
        if tok == EDITED:
            made.append(item)
        return tok, item

    try:
        state, trace = adaptive_backtracking(step, s_max, budget=100)
    except SearchExhausted:
        return
    for k, d_a, d_max in trace:
        assert 0 <= d_a <= d_max <= s_max and 0 <= k <= s_max
    # every history entry was produced at the depth it occupies
    assert [h[1] for h in state.history] == list(range(len(state.history)))


def test_s_max_validation():
    with pytest.raises(ValueError):
        adaptive_backtracking(_scripted([C]), 0)


# -- consensus gate -----------------------------------------------------------


def test_accept_matches_positive_mean_rule():
    values = sorted(SCORES.values())
    assert values == [-2, -1, 0, 1, 2]
    for combo in itertools.product(values, repeat=3):
        rule = Fraction(sum(combo), 3) > 0
        assert accept(list(combo), True, True) == rule
        assert not accept(list(combo), False, True)
        assert not accept(list(combo), True, False)
    assert not accept([], True, True)


def test_step_seed_deterministic_and_distinct():
    assert step_seed(0, 1, 2, 0) == step_seed(0, 1, 2, 0)
    seeds = {step_seed(0, k, a, v) for k in range(4) for a in range(4) for v in range(3)}
    assert len(seeds) == 48


# -- annotations ---------------------------------------------------------------


def _manual_project(cam_pos, look, fov_deg, p):
    """Pinhole projection built from scratch: x right, y down, origin top-left."""
    f = np.subtract(look, cam_pos)
    f = f / np.linalg.norm(f)
    r = np.cross(f, (0, 0, 1))
    r /= np.linalg.norm(r)
    u = np.cross(r, f)
    d = np.subtract(p, cam_pos)
    t = np.tan(np.radians(fov_deg) / 2)
    return 0.5 + 0.5 * (d @ r) / ((d @ f) * t), 0.5 - 0.5 * (d @ u) / ((d @ f) * t)


def _two_step():
    s = make_scene([floor(6.0), block("cube", (0.3, 0.3, 0.3), (0, 0.5, 0))], room_camera())
    return s, apply_pose(s, "cube", Pose((1.0, 0.5, 0)))


def test_arrow_endpoints_follow_projection():
    res = 128
    prev, cur = _two_step()
    out = annotate_for_agents(cur, prev, "cube", res, 4)
    p0, p1 = out["arrow"]
    want0 = _manual_project((0, -3, 2.1), (0, 0.4, 0.5), 60, (0, 0.5, 0.15))
    want1 = _manual_project((0, -3, 2.1), (0, 0.4, 0.5), 60, (1, 0.5, 0.15))
    assert np.allclose(np.multiply(p0, res), np.multiply(want0, res), atol=1)
    assert np.allclose(np.multiply(p1, res), np.multiply(want1, res), atol=1)
    red = np.all(out["edit"] == ARROW_COLOR, axis=-1)
    for x, y in (want0, want1):
        px, py = int(x * res), int(y * res)
        assert red[py - 1:py + 2, px - 1:px + 2].any()


def test_no_move_draws_a_dot():
    s, _ = _two_step()
    out = annotate_for_agents(s, s, "cube", 64, 4)
    p0, p1 = out["arrow"]
    assert p0 == p1
    red = np.all(out["edit"] == ARROW_COLOR, axis=-1)
    ys, xs = np.nonzero(red)
    assert len(xs) > 0
    assert abs(xs.mean() - p0[0] * 64) < 2 and abs(ys.mean() - p0[1] * 64) < 2


def test_first_step_has_grid_only():
    s, _ = _two_step()
    out = annotate_for_agents(s, None, None, 64, 4)
    assert set(out) == {"current"}


# -- run_step and search ---------------------------------------------------------

FAST = SearchConfig(solver=SolverConfig(iterations=200))


def _scene():
    return make_scene([floor(6.0), block("cube", (0.3, 0.3, 0.3), (1.5, 1.5, 0)), block("ball", (0.2, 0.2, 0.2), (-1.5, 1.5, 0))], room_camera())


def _step(subject, target, **kw):
    cs = ConstraintSet(subject, (CloseToPix(target), Contact("-z", "floor::surf0")))
    return PlanStep(f"move {subject}", target, cs, **kw)


def _agents(*steps):
    script = PlanScript("tidy", len(steps), tuple(steps))
    return Agents(ScriptedPlanner(script), ScriptedExecutor(), [ScriptedEvaluator() for _ in range(3)])


def test_run_step_early_exit_on_unanimous_approval():
    a = _agents(_step("cube", (0.5, 0.7)))
    state = SearchState(1, _scene(), visits={0: 1})
    out = run_step(state, a.planner, a.executor, a.evaluators, FAST)
    assert out.state == EDITED and len(out.attempts) == 1
    assert out.record.score == 2


def test_run_step_rejects_and_keeps_fallback():
    a = _agents(_step("cube", (0.5, 0.7), verdicts=(("terrible", "bad", "good"),)))
    state = SearchState(1, _scene(), visits={0: 1})
    with pytest.raises(StepFailed) as exc:
        run_step(state, a.planner, a.executor, a.evaluators, FAST)
    assert len(exc.value.attempts) == 4
    assert exc.value.fallback is not None


def test_run_step_picks_best_mean_attempt():
    verdicts = (("fair", "good", "bad"), ("good", "good", "fair"), ("bad", "bad", "bad"), ("fair", "fair", "fair"))
    a = _agents(_step("cube", (0.5, 0.7), verdicts=verdicts))
    state = SearchState(1, _scene(), visits={0: 1})
    out = run_step(state, a.planner, a.executor, a.evaluators, FAST)
    assert out.record.attempt == 1
    assert [e["accepted"] for e in out.attempts] == [False, True, False, False]


def test_search_completes_and_is_deterministic():
    steps = (_step("cube", (0.4, 0.7)), _step("ball", (0.6, 0.7)))
    r1 = search(_scene(), _agents(*steps), FAST, s_max=2)
    r2 = search(_scene(), _agents(*steps), FAST, s_max=2)
    assert len(r1.edits) == 2 and r1.trace[-1] == (2, 2, 2)
    assert r1.dumps() == r2.dumps()
    assert [s for _, s in r1.trajectory()] == ["cube", "ball"]


def test_search_backtracks_on_scripted_failure():
    steps = (_step("cube", (0.4, 0.7)), _step("ball", (0.6, 0.7), fail_visits=(0,)))
    r = search(_scene(), _agents(*steps), FAST, s_max=2)
    assert r.trace == [(0, 0, 0), (1, 1, 1), (0, 0, 1), (1, 0, 1), (2, 2, 2)]
    assert len(r.failures) == 1 and r.failures[0]["step"] == 1
    assert [e.record.visit for e in r.edits] == [1, 1]


def test_linear_mode_keeps_going_after_failure():
    steps = (_step("cube", (0.4, 0.7), verdicts=(("terrible",) * 3,)), _step("ball", (0.6, 0.7)))
    cfg = SearchConfig(backtracking=False, solver=SolverConfig(iterations=200))
    r = search(_scene(), _agents(*steps), cfg, s_max=2)
    assert r.completed
    assert len(r.failures) == 1
    assert len(r.edits) == 2  # the rejected step's best candidate is kept


def test_search_config_round_trip():
    cfg = SearchConfig(attempts=2, seed=5, backtracking=False)
    assert SearchConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        SearchConfig(attempts=0)
