"""Time the compiled kernels against the numpy fallback.

    python3 bench/benchmark_kernels.py [--repeat 3] [--resolution 128]
"""

import argparse
import json
import time

import numpy as np

from arrangekit import kernels
from arrangekit.bench import TASKS
from arrangekit.raster import render_instance_map
from arrangekit.scene import Pose, apply_pose
from arrangekit.validate import check_collision


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(resolution):
    scene = TASKS[2]().scene()  # table with crates on and around it
    # sink a crate into the table top so the narrow phase has work to do
    crate = scene.get("crate_a").pose
    x, y, z = crate.translation
    scene = apply_pose(scene, "crate_a", Pose((x, y, z - 0.05), crate.yaw))
    subject = "table"
    mesh = scene.get("table").world_mesh
    tris = mesh.vertices[mesh.faces]
    lo, hi = mesh.bounds
    pts = np.random.default_rng(0).uniform(lo, hi, (20000, 3))
    arrays = kernels.triangle_arrays(mesh.vertices, mesh.faces)

    def fresh_render():
        scene.__dict__.pop("_imap_cache", None)
        render_instance_map(scene, resolution, resolution)

    def fresh_collision():
        scene.__dict__.pop("_solid_cache", None)
        check_collision(scene, subject)

    return {
        "raycast (instance map)": fresh_render,
        "points_inside (20k points)": lambda: kernels.points_inside(pts, *arrays),
        "grid_inside (64^3)": lambda: kernels.grid_inside(tris, lo, hi, 64),
        "check_collision": fresh_collision,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--resolution", type=int, default=128)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["cython"] if kernels.compiled_available() else [])
    results = {}
    for name, fn in workloads(args.resolution).items():
        row = {}
        for b in backends:
            kernels.use_backend(b)
            fn()  # warm caches
            row[b] = _best(fn, args.repeat)
        results[name] = row
    kernels.use_backend(backends[-1])

    if args.json:
        print(json.dumps(results, indent=2, sort_keys=True))
        return
    print(f"{'kernel':<28} {'numpy s':>10} {'cython s':>10} {'speedup':>8}")
    for name, row in results.items():
        c = row.get("cython")
        speed = f"{row['numpy'] / c:8.1f}" if c else "       -"
        cs = f"{c:10.4f}" if c else "         -"
        print(f"{name:<28} {row['numpy']:>10.4f} {cs} {speed}")


if __name__ == "__main__":
    main()
