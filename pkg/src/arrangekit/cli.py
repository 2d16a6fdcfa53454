"""Command line interface.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import format_summary, generate_suite, run_suite, scripted_agents
from .constraints import constraint_set_from_json
from .errors import ArrangeError, MissingFile, ParseError
from .probe import list_objects_in_area, ray_probe
from .raster import AnnotationSpec, annotate, palette, render_color, render_highlight, render_instance_map, write_pgm, write_png
from .scene import load_scene
from .search import SearchConfig, search
from .server import ToolSession, serve
from .solver import solve
from .validate import check_collision, check_floating, compute_metrics


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_json(path: str, what: str):
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {p}: {exc.msg}", line=exc.lineno) from None


def _config(args) -> SearchConfig:
    cfg = SearchConfig.from_json(_read_json(args.config, "config")) if getattr(args, "config", None) else SearchConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "no_backtracking", False):
        cfg = replace(cfg, backtracking=False)
    return cfg


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    from .agents import load_plan_script

    cfg = _config(args)
    scene = load_scene(args.scene)
    script = load_plan_script(args.plan)
    s_max = args.s_max or script.s_max
    res = search(scene, scripted_agents(script, cfg), cfg, s_max=s_max)
    metrics = compute_metrics(res.trajectory()) if res.edits else None
    doc = {
        "config": cfg.to_json(),
        "result": res.to_json(),
        "metrics": metrics.to_json() if metrics else None,
    }
    _emit(_dumps(doc), args.out)
    if metrics:
        print(f"steps {metrics.steps}  collision {metrics.collision_rate:.3f}  floating {metrics.floating_rate:.3f}", file=sys.stderr)
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    cset = constraint_set_from_json(_read_json(args.constraints, "constraint file"))
    sol = solve(scene, cset, replace(cfg.solver, seed=cfg.seed), cfg.weights)
    _emit(_dumps(sol.to_json()), args.out)
    return 0


def cmd_probe(args) -> int:
    scene = load_scene(args.scene)
    if args.area:
        doc = {"objects": list_objects_in_area(scene, args.area, args.resolution)}
    else:
        doc = ray_probe(scene, args.pixel, exclude=args.exclude or ()).to_json()
    _emit(_dumps(doc), args.out)
    return 0


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    res = args.resolution
    if args.instance:
        write_pgm(render_instance_map(scene, res, res), args.instance)
    if args.highlight:
        img = render_highlight(scene, args.highlight, [palette(i + 1) for i in range(len(args.highlight))], res, res)
    else:
        img = render_color(scene, res, res)
    if args.grid or args.labels:
        img = annotate(img, AnnotationSpec(args.grid, args.labels))
    write_png(img, args.out)
    return 0


def cmd_validate(args) -> int:
    scene = load_scene(args.scene)
    names = [args.object] if args.object else scene.names
    doc = {
        "collision": {n: check_collision(scene, n).to_json() for n in names},
        "floating": check_floating(scene).to_json(),
    }
    _emit(_dumps(doc), args.out)
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    report = run_suite(args.suite, cfg, backtracking=cfg.backtracking)
    label = "Ours" if cfg.backtracking else "w/o Backtracking"
    print(format_summary(report["summary"], label))
    if args.out:
        report = {k: v for k, v in report.items() if k != "seconds"}
        Path(args.out).write_text(_dumps(report))
    return 0


def cmd_serve(args) -> int:
    return serve(ToolSession(load_scene(args.scene)))


def cmd_config_show(args) -> int:
    sys.stdout.write(_dumps(_config(args).to_json()))
    return 0


def cmd_generate_suite(args) -> int:
    specs = generate_suite(args.out, args.seed or 0)
    print(f"wrote {len(specs)} tasks to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arrangekit", description="Constraint-based object arrangement engine.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scene=True, seed=False, out=True, config=False):
        if scene:
            sp.add_argument("--scene", required=True, help="scene manifest (JSON)")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        if config:
            sp.add_argument("--config", help="search config JSON, as printed by 'config show'")
        if out:
            sp.add_argument("--out", help="output file (default stdout)")

    sp = sub.add_parser("run", help="run a plan script and report the trajectory and metrics")
    common(sp, seed=True, config=True)
    sp.add_argument("--plan", required=True, help="plan script (JSON)")
    sp.add_argument("--s-max", type=_positive, default=None, help="step budget (default from the plan script)")
    sp.add_argument("--no-backtracking", action="store_true", help="keep failed steps instead of backtracking")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("solve", help="solve one constraint set")
    common(sp, seed=True, config=True)
    sp.add_argument("--constraints", required=True, help="constraint set (JSON)")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("probe", help="ray probe a pixel or list objects in an area")
    common(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--pixel", type=_unit, nargs=2, metavar=("X", "Y"), help="normalized pixel")
    g.add_argument("--area", type=_unit, nargs=4, metavar=("X0", "Y0", "X1", "Y1"), help="normalized rectangle")
    sp.add_argument("--exclude", nargs="*", help="objects the ray passes through")
    sp.add_argument("--resolution", type=_positive, default=512)
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("render", help="render the scene to PNG")
    common(sp, out=False)
    sp.add_argument("--out", required=True, help="PNG path")
    sp.add_argument("--resolution", type=_positive, default=512)
    sp.add_argument("--grid", type=int, default=0, help="grid divisions (0 for none)")
    sp.add_argument("--labels", action="store_true", help="label grid lines")
    sp.add_argument("--highlight", nargs="*", help="objects to highlight")
    sp.add_argument("--instance", help="also write the instance map as PGM")
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("validate", help="collision and floating checks")
    common(sp)
    sp.add_argument("--object", help="check collisions for this object only")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("bench", help="run a benchmark suite and print the summary")
    sp.add_argument("--suite", required=True, help="suite directory")
    sp.add_argument("--no-backtracking", action="store_true")
    sp.add_argument("--config", help="search config JSON")
    sp.add_argument("--out", help="write the full report (JSON)")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("serve", help="tool server on stdin/stdout")
    common(sp, out=False)
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("config", help="configuration")
    csub = sp.add_subparsers(dest="action", required=True)
    show = csub.add_parser("show", help="print the effective search config")
    show.add_argument("--config", help="config JSON to merge over the defaults")
    show.add_argument("--seed", type=int, default=None)
    show.set_defaults(fn=cmd_config_show)

    sp = sub.add_parser("generate-suite", help="write the synthetic benchmark suite")
    sp.add_argument("--out", required=True, help="target directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_generate_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ArrangeError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
