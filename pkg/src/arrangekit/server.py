"""Line-delimited JSON-RPC tool server over stdio.

One request object per line::

    {"jsonrpc": "2.0", "id": 1, "method": "ray_probe", "params": {"pixel": [0.5, 0.6]}}

Responses carry the same id and either ``result`` or ``error`` with
``{"code", "message", "data": {"type"}}``. Requests are handled strictly in
arrival order against a single session scene.
"""

from __future__ import annotations

import base64
import json
import sys
from typing import IO

from .constraints import constraint_set_from_json
from .errors import ArrangeError, ParseError
from .probe import list_objects_in_area, ray_probe, render_with_highlight
from .raster import DEFAULT_RESOLUTION, AnnotationSpec, annotate, palette, png_bytes, render_color
from .scene import Pose, Scene, apply_pose
from .solver import SolverConfig, solve
from .validate import check_collision, check_floating

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
DOMAIN_ERROR = -32000


class InvalidParams(Exception):
    pass


def _need(params: dict, key: str):
    if key not in params:
        raise InvalidParams(f"missing parameter {key!r}")
    return params[key]


def _png_result(img) -> dict:
    return {"width": int(img.shape[1]), "height": int(img.shape[0]), "png": base64.b64encode(png_bytes(img)).decode("ascii")}


class ToolSession:
    """Holds the session scene and dispatches tool methods against it."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.methods = {
            "list_objects_in_area": self.list_objects_in_area,
            "ray_probe": self.ray_probe,
            "render_with_highlight": self.render_with_highlight,
            "solve": self.solve,
            "apply_pose": self.apply_pose,
            "check_collision": self.check_collision,
            "check_floating": self.check_floating,
            "render": self.render,
        }

    # -- methods ---------------------------------------------------------

    def list_objects_in_area(self, params):
        area = _need(params, "area")
        res = int(params.get("resolution", DEFAULT_RESOLUTION))
        return {"objects": list_objects_in_area(self.scene, area, res)}

    def ray_probe(self, params):
        return ray_probe(self.scene, _need(params, "pixel"), exclude=params.get("exclude", ())).to_json()

    def render_with_highlight(self, params):
        names = list(_need(params, "names"))
        colors = params.get("colors") or [palette(i + 1) for i in range(len(names))]
        res = int(params.get("resolution", DEFAULT_RESOLUTION))
        return _png_result(render_with_highlight(self.scene, names, colors, res))

    def solve(self, params):
        cs = constraint_set_from_json(_need(params, "constraints"))
        cfg = SolverConfig.from_json({**params.get("config", {}), "seed": int(params.get("seed", 0))})
        return solve(self.scene, cs, cfg).to_json()

    def apply_pose(self, params):
        name = _need(params, "object")
        pose = Pose.from_json(_need(params, "pose"))
        self.scene = apply_pose(self.scene, name, pose)
        return {"version": self.scene.version}

    def check_collision(self, params):
        return check_collision(self.scene, _need(params, "object")).to_json()

    def check_floating(self, params):
        return check_floating(self.scene).to_json()

    def render(self, params):
        res = int(params.get("resolution", DEFAULT_RESOLUTION))
        spec = AnnotationSpec(int(params.get("divisions", 10)), bool(params.get("labels", True)), tuple(params.get("arrows", ())))
        return _png_result(annotate(render_color(self.scene, res, res), spec))

    # -- protocol --------------------------------------------------------

    def call(self, method: str, params: dict | None = None):
        """In-process entry point: returns the result or raises."""
        return self.methods[method](params or {})

    def handle(self, request) -> dict:
        rid = request.get("id") if isinstance(request, dict) else None
        if not isinstance(request, dict) or not isinstance(request.get("method"), str):
            return _error(rid, INVALID_REQUEST, "request must be an object with a 'method'")
        fn = self.methods.get(request["method"])
        if fn is None:
            return _error(rid, METHOD_NOT_FOUND, f"method not found: {request['method']}")
        params = request.get("params", {})
        if not isinstance(params, dict):
            return _error(rid, INVALID_PARAMS, "params must be an object")
        try:
            result = fn(params)
        except InvalidParams as exc:
            return _error(rid, INVALID_PARAMS, str(exc))
        except ArrangeError as exc:
            return _error(rid, DOMAIN_ERROR, str(exc), exc.code)
        except (ValueError, TypeError, KeyError, IndexError) as exc:
            return _error(rid, INVALID_PARAMS, f"{type(exc).__name__}: {exc}")
        return {"jsonrpc": "2.0", "id": rid, "result": result}

    def handle_line(self, line: str) -> dict | None:
        line = line.strip()
        if not line:
            return None
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return _error(None, PARSE_ERROR, f"parse error: {exc.msg}", ParseError.code)
        return self.handle(request)


def _error(rid, code: int, message: str, kind: str | None = None) -> dict:
    err = {"code": code, "message": message}
    if kind is not None:
        err["data"] = {"type": kind}
    return {"jsonrpc": "2.0", "id": rid, "error": err}


def serve(session: ToolSession, stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> int:
    """Answer requests line by line until end of input."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        resp = session.handle_line(line)
        if resp is None:
            continue
        stdout.write(json.dumps(resp, sort_keys=True) + "\n")
        stdout.flush()
    return 0
