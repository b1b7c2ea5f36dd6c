#!/usr/bin/env python3
"""Throughput of the compiled kernels against the numpy fallback.

Renders and scores a batch of poses around a view of the default synthetic
city with each available backend, checks that the backends return identical
results, and prints poses per second and the speed-up.

    python benchmarks/bench_backends.py --poses 64 --size 640x360
"""
import argparse
import sys
import time

import numpy as np

from lodloc.camera import Intrinsics, Pose4
from lodloc.kernels import BACKENDS, PreparedQuery, PreparedScene, evaluate_poses, render_labels
from lodloc.raster import extract_hypothesis_masks, render_instance_map
from lodloc.synth import SceneSpec, generate_scene


def parse_size(text):
    w, h = text.lower().split("x")
    return int(w), int(h)


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--poses", type=int, default=64, help="poses per scoring batch")
    ap.add_argument("--size", type=parse_size, default=(640, 360), help="render size WxH")
    ap.add_argument("--threads", type=int, default=None, help="threads for the compiled backend")
    ap.add_argument("--repeat", type=int, default=3, help="timing repeats; the best is reported")
    ap.add_argument("--cost", choices=("confidence", "area", "semantic"), default="confidence")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)

    model = generate_scene(SceneSpec(rng_seed=a.seed))
    scene = PreparedScene.from_model(model)
    intr = Intrinsics.from_fov(*a.size, 45.0)
    gt = Pose4(0.0, -150.0, 160.0, 90.0, pitch=-45.0)
    query = PreparedQuery.from_masks(extract_hypothesis_masks(render_instance_map(scene, intr, gt)), a.cost)

    rng = np.random.default_rng(a.seed)
    poses = np.array([gt.moved(*rng.normal(0, 5, 3), dyaw=rng.normal(0, 5)).as_array() for _ in range(a.poses)])

    print(f"{scene.tris.shape[0]} triangles, {a.size[0]}x{a.size[1]}, {a.poses} poses, backends {sorted(BACKENDS)}")
    rows, results = [], {}
    for name in sorted(BACKENDS):
        t_render, labels = timed(lambda: render_labels(scene, intr, poses[0], backend=name), a.repeat)
        t_eval, costs = timed(lambda: evaluate_poses(scene, intr, query, poses, n_threads=a.threads, backend=name),
                              a.repeat)
        results[name] = (labels, costs)
        rows.append((name, 1e3 * t_render, a.poses / t_eval))

    print(f"{'backend':10s} {'render ms':>10s} {'poses/s':>10s}")
    for name, ms, pps in rows:
        print(f"{name:10s} {ms:10.2f} {pps:10.1f}")
    if len(rows) == 2:
        (_, ms_c, pps_c), (_, ms_p, pps_p) = rows  # "compiled" sorts before "python"
        print(f"speed-up: render x{ms_p / ms_c:.1f}, scoring x{pps_c / pps_p:.1f}")
        (lc, cc), (lp, cp) = results["compiled"], results["python"]
        same = all(np.array_equal(x, y) for x, y in zip(lc, lp)) and np.array_equal(cc, cp)
        print(f"identical results: {same}")
        return 0 if same else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
