"""Time the compiled assignment kernel against its numpy twin.

    python3 benchmarks/bench_assignment.py --sizes 32,64,128,256 --repeats 5

Both kernels run the same shortest-augmenting-path algorithm; the script
checks that they return identical permutations before timing them.
"""
import argparse
import statistics
import time

import numpy as np
from scipy.optimize import linear_sum_assignment

from gconda.ot import _lsa_py

try:
    from gconda.ot._lsa import assign as assign_compiled
except ImportError:
    assign_compiled = None


def best_of(fn, cost, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(cost)
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", default="16,32,64,128,256")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    kernels = [("python", _lsa_py.assign)]
    if assign_compiled is not None:
        kernels.insert(0, ("cython", assign_compiled))
    else:
        print("compiled kernel not built; timing the numpy fallback only")
    kernels.append(("scipy", lambda c: linear_sum_assignment(c)[1]))

    print(f"{'n':>5} " + " ".join(f"{name + ' ms':>12}" for name, _ in kernels) + f" {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        cost = rng.random((n, n))
        perms = [np.asarray(fn(cost)) for _, fn in kernels]
        ref = cost[np.arange(n), perms[-1]].sum()
        for (name, _), p in zip(kernels, perms):
            if abs(cost[np.arange(n), p].sum() - ref) > 1e-9:
                raise SystemExit(f"{name} kernel is not optimal at n={n}")
        if assign_compiled is not None and not np.array_equal(perms[0], perms[1]):
            raise SystemExit(f"compiled and numpy kernels disagree at n={n}")
        best = [best_of(fn, cost, args.repeats)[0] for _, fn in kernels]
        speed = f"{best[1] / best[0]:8.1f}x" if assign_compiled is not None else f"{'-':>8}"
        print(f"{n:>5} " + " ".join(f"{1e3 * b:12.3f}" for b in best) + f" {speed}")


if __name__ == "__main__":
    main()
