#!/usr/bin/env python3
"""Benchmark the jit-compiled hot kernels against the pure-numpy fallback.

Run without arguments: the script re-executes itself twice in
subprocesses (once normally, once with HBE_NO_NUMBA=1) and prints a
comparison table.  Run with --worker to execute the timed workload in
the current interpreter and emit JSON.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeats: int, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_workload() -> dict:
    from hbe._accel import USING_NUMBA
    from hbe.ballcarving import sample_ball_carving
    from hbe.hbe_core import build_index, make_exponential_hbe
    from hbe.kernels import KernelSpec, eval_kernel_many, point_set_from_coords

    rng = np.random.default_rng(0)
    results = {"using_numba": USING_NUMBA}

    # kernel-weight evaluation over a large batch
    kernel = KernelSpec("exponential", 1.0)
    x = np.zeros(16)
    ys = rng.standard_normal((200_000, 16))
    results["kernel_weights_200k_s"] = _time(
        lambda: eval_kernel_many(kernel, x, ys), repeats=5
    )

    # ball-carving fit of one hash table (small: the fallback path is
    # orders of magnitude slower here)
    coords = 0.3 * rng.standard_normal((300, 12))

    def fit_one():
        h = sample_ball_carving(12, 4.0, 1, 12, coords.shape[0],
                                np.random.default_rng(1))
        h.fit(coords)

    results["ball_carving_fit_300_s"] = _time(fit_one, repeats=3)

    # end-to-end table builds for a line-partition scheme
    P = point_set_from_coords(0.2 * rng.standard_normal((2_000, 8)))
    scheme = make_exponential_hbe(max(P.R, 1.0), 0.5)
    index = build_index(P, kernel, scheme, N=1 << 30, master_seed=3,
                        materialize=False)

    def build_tables():
        for i in range(50):
            index.table(i)

    results["lazy_table_builds_50_s"] = _time(build_tables, repeats=3)
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--worker", action="store_true",
                        help="run the workload in-process, print JSON")
    args = parser.parse_args()
    if args.worker:
        print(json.dumps(run_workload()))
        return

    rows = {}
    for label, extra_env in (("numba", {}), ("numpy", {"HBE_NO_NUMBA": "1"})):
        env = dict(os.environ, **extra_env)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker"],
            env=env, capture_output=True, text=True, check=True,
        )
        rows[label] = json.loads(out.stdout.strip().splitlines()[-1])

    print(f"{'workload':34s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for key in rows["numba"]:
        if key == "using_numba":
            continue
        a, b = rows["numba"][key], rows["numpy"][key]
        print(f"{key:34s} {a * 1e3:10.2f}ms {b * 1e3:10.2f}ms {b / a:8.2f}x")
    if not rows["numba"]["using_numba"]:
        print("note: numba unavailable; both columns ran the numpy fallback")


if __name__ == "__main__":
    main()
