"""Compare the numba kernels with the pure-numpy fallback.

Each path runs in its own interpreter because the backend is fixed at
import time by ``HMPLAN_DISABLE_NUMBA``. Usage::

    python benchmarks/bench_kernels.py [--size 40] [--repeat 3] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _cases(size: int):
    import numpy as np

    from hmplan import _kernels, morphology as M
    from hmplan.capability import Capability, Variant, build_primitive
    from hmplan.solid import GridSpec, VoxelSolid, box_solid

    rng = np.random.default_rng(0)
    g = GridSpec((size, size, size))
    s = VoxelSolid(g, rng.random(g.dims) < 0.4)
    tool = M.ball_offsets(3)
    stack = rng.random((12, size ** 3)) < 0.5
    disc = box_solid(g, (size / 2 - 3, 2, size / 2 - 3), (size / 2 + 3, size - 2, size / 2 + 3))
    tg = GridSpec.centered((5, 5, 21), 1.0)
    mmn = box_solid(tg, (-2.5, -2.5, -2.5), (2.5, 2.5, 2.5))
    shank = box_solid(tg, (-1.5, -1.5, 2.5), (1.5, 1.5, 10.5))
    cap = Capability(Variant.MAXIMAL_OVER_CUT, mmn, g, shank)
    part = box_solid(g, (4, 4, 4), (size - 4, size - 4, size - 8))

    return {
        f"dilate {size}^3 by a radius-3 ball (direct)": lambda: M.minkowski_offsets(s, "sum", tool, "direct"),
        f"erode {size}^3 by a radius-3 ball (direct)": lambda: M.minkowski_offsets(s, "difference", tool, "direct"),
        f"atom codes, 12 primitives on {size}^3": lambda: _kernels.encode_codes(stack),
        f"revolve a bar, 180 samples on {size}^3": lambda: M.revolve(disc, "y", (size / 2, 0, size / 2), 180),
        f"over-cut primitive with shank on {size}^3 (direct)": lambda: build_primitive(cap, part, method="direct"),
    }


def worker(size: int, repeat: int) -> dict:
    from hmplan import _kernels

    out = {"numba": _kernels.USE_NUMBA, "cases": {}}
    for name, fn in _cases(size).items():
        t0 = time.perf_counter()
        fn()
        first = time.perf_counter() - t0
        best = min(_timed(fn) for _ in range(repeat))
        out["cases"][name] = {"first_s": first, "best_s": best}
    return out


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _spawn(disable: bool, size: int, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("HMPLAN_DISABLE_NUMBA", None)
    if disable:
        env["HMPLAN_DISABLE_NUMBA"] = "1"
    cmd = [sys.executable, __file__, "--worker", "--size", str(size), "--repeat", str(repeat)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if res.returncode != 0:
        raise SystemExit(f"benchmark worker failed:\n{res.stderr}")
    return json.loads(res.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write results here")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.size < 16:
        ap.error("--size must be at least 16 (the test part needs room for the tool)")
    if args.worker:
        print(json.dumps(worker(args.size, args.repeat)))
        return 0

    fast = _spawn(False, args.size, args.repeat)
    slow = _spawn(True, args.size, args.repeat)
    if not fast["numba"]:
        print("numba is not importable here; both runs use numpy")
    width = max(len(k) for k in fast["cases"])
    print(f"{'case':<{width}}  {'numba s':>9}  {'(jit+run)':>9}  {'numpy s':>9}  {'speedup':>7}")
    rows = []
    for name, f in fast["cases"].items():
        n = slow["cases"][name]
        speed = n["best_s"] / f["best_s"] if f["best_s"] > 0 else float("inf")
        rows.append({"case": name, "numba_s": f["best_s"], "numba_first_s": f["first_s"], "numpy_s": n["best_s"],
                     "speedup": speed})
        print(f"{name:<{width}}  {f['best_s']:9.4f}  {f['first_s']:9.3f}  {n['best_s']:9.4f}  {speed:7.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"size": args.size, "repeat": args.repeat, "rows": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
