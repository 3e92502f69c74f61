"""Time the compiled kernels against the pure Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Every kernel is run on identical inputs in each backend; outputs are checked
for bit-equality before timings are reported.
"""

import argparse
import json
import timeit

import numpy as np

from mtinstruct.kernels import implementations
from mtinstruct.mixer import stream_states
from mtinstruct.rng import Xoshiro256, build_alias_table


def cases(scale):
    rng = np.random.default_rng(0)
    prob, alias = build_alias_table([0.5, 0.2, 0.15, 0.1, 0.05])
    prob, alias = np.asarray(prob), np.asarray(alias, dtype=np.int64)
    state = Xoshiro256(1).state
    steps = 200_000 * scale
    choices = rng.integers(0, 5, size=steps).astype(np.int64)
    counts = np.array([1000, 37, 5, 20_000, 3])
    _, states = stream_states(1, 5)
    lo = rng.integers(0, 60, size=(50_000 * scale, 2, 2)).astype(float)
    boxes = np.concatenate([lo, lo + rng.integers(0, 41, size=lo.shape)], axis=2)
    a, b = boxes[:, 0].copy(), boxes[:, 1].copy()
    grid = rng.normal(size=(24, 24, 256))
    return {
        f"alias_draws ({steps} steps)": lambda impl: impl.alias_draws(state, prob, alias, steps)[0],
        f"assign_records ({steps} steps)": lambda impl: impl.assign_records(choices, counts, states),
        f"iou_pairs ({len(a)} pairs)": lambda impl: impl.iou_pairs(a, b),
        "bilinear_resize (24->32, d=256)": lambda impl: impl.bilinear_resize(grid, 32),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1, help="multiply input sizes")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    impls = implementations()
    if "cython" not in impls:
        print("compiled extension not available; timing the fallback only")
    rows = []
    for name, fn in cases(args.scale).items():
        outs = {k: fn(impl) for k, impl in impls.items()}
        ref = outs["python"]
        same = all(np.array_equal(ref, o) for o in outs.values())
        times = {k: min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) for k, impl in impls.items()}
        rows.append({"kernel": name, "identical": same, "seconds": times})

    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'python':>10}  {'cython':>10}  {'speedup':>8}  identical")
    for r in rows:
        py = r["seconds"]["python"]
        cy = r["seconds"].get("cython")
        cy_s = f"{cy:10.4f}" if cy is not None else f"{'-':>10}"
        sp = f"{py / cy:7.1f}x" if cy else f"{'-':>8}"
        print(f"{r['kernel']:<{width}}  {py:10.4f}  {cy_s}  {sp}  {r['identical']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["identical"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
