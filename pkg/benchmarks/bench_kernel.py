"""Compare the compiled and numpy jump-chain kernels on identical inputs.

Usage: python3 benchmarks/bench_kernel.py [--trials N] [--repeat R] [--intensity I]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from caraman import _kernel, _rng
from caraman.experiment import build_rate_matrix, protocol_for


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--intensity", type=float, default=8.7e8, help="W/m^2; higher means more jumps per trial")
    ap.add_argument("--horizon", type=float, default=1.0, help="s")
    args = ap.parse_args()

    matrix = build_rate_matrix(protocol_for("+3/2", "sigma-", args.intensity))
    cum = matrix.cumulative()
    init = np.ones(args.trials, dtype=np.int64)
    keys = _rng.trial_keys(1, _rng.STREAM_DYNAMICS, 0, np.arange(args.trials))

    kernels = {"python": _kernel.python_kernel}
    if _kernel.compiled_kernel is not None:
        kernels["cython"] = _kernel.compiled_kernel
    else:
        print("compiled kernel not built; timing the numpy kernel only")

    results, timings = {}, {}
    for name, fn in kernels.items():
        results[name] = fn(cum, init, keys, args.horizon)
        timings[name] = min(timeit.repeat(lambda: fn(cum, init, keys, args.horizon), number=1, repeat=args.repeat))

    print(f"{args.trials} trials, horizon {args.horizon} s, intensity {args.intensity:.3g} W/m^2")
    for name, t in timings.items():
        print(f"  {name:<7} {t * 1e3:9.2f} ms  {args.trials / t:12.4g} trials/s")
    if len(results) == 2:
        same = np.array_equal(results["python"], results["cython"])
        print(f"  speedup {timings['python'] / timings['cython']:.1f}x, identical outputs: {same}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()
