"""Compare the compiled and numpy triangle-fill kernels.

Usage: python3 benchmarks/bench_raster.py [--resolution 512] [--vertices 2562] [--repeat 5]

Prints the best-of-N wall time per backend and whether the outputs
(depth buffer, triangle ids, barycentric weights) are bit-identical.
"""

import argparse
import time

import numpy as np

from relitanim.face import Mesh, icosphere, vertex_normals
from relitanim.raster import BACKEND, Camera, rasterize_mesh


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=512)
    ap.add_argument("--vertices", type=int, default=2562, help="icosphere size, 10*4^k+2")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    v, f = icosphere(args.vertices)
    n, _ = vertex_normals(v, f)
    mesh = Mesh(v, f, n, [])
    camera = Camera.framing(args.resolution)
    res = (args.resolution, args.resolution)
    print(f"mesh: {len(v)} vertices, {len(f)} faces; image {args.resolution}x{args.resolution}")

    results = {}
    for backend in ("compiled", "python"):
        if backend == "compiled" and BACKEND != "compiled":
            print("compiled: not built (skipped)")
            continue
        t, out = best_time(lambda: rasterize_mesh(mesh, camera, res, backend), args.repeat)
        results[backend] = (t, out)
        print(f"{backend:>8}: {t * 1e3:8.2f} ms (best of {args.repeat})")

    if len(results) == 2:
        (tc, oc), (tp, op) = results["compiled"], results["python"]
        same = all(np.array_equal(a, b) for a, b in zip(oc, op))
        print(f" speedup: {tp / tc:.1f}x, outputs bit-identical: {same}")


if __name__ == "__main__":
    main()
