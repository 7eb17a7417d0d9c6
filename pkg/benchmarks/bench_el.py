"""Timing of the empirical likelihood Newton kernel: compiled versus NumPy fallback.

Usage::

    python benchmarks/bench_el.py [--repeats 200] [--sizes 50,200,1000,5000] [--q 1,3]

Prints one row per (n, q) with microseconds per solve (best of three passes) for each backend,
the speed-up, and the largest difference in ``log R`` between the two.
"""

import argparse
import timeit

import numpy as np

from hybridlik import el


def constraint_matrix(n, q, seed):
    rng = np.random.default_rng(seed)
    # a mean slightly off the sample mean so Newton needs a few steps
    return rng.standard_normal((n, q)) + 0.1


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--sizes", default="50,200,1000,5000")
    ap.add_argument("--q", default="1,3")
    args = ap.parse_args(argv)
    if "compiled" not in el._BACKENDS:
        print("compiled kernel not built; only the fallback is available")
    backends = [b for b in ("compiled", "python") if b in el._BACKENDS]
    print(f"{'n':>6} {'q':>3} " + " ".join(f"{b + ' us':>12}" for b in backends)
          + f" {'speed-up':>9} {'max |dlogR|':>12}")
    for n in map(int, args.sizes.split(",")):
        for q in map(int, args.q.split(",")):
            mats = [constraint_matrix(n, q, s) for s in range(args.repeats)]
            times, vals = {}, {}
            for b in backends:
                vals[b] = np.array([el.solve_el(M, backend=b).log_ratio for M in mats])
                per = timeit.repeat(lambda: [el.solve_el(M, backend=b) for M in mats],
                                    number=1, repeat=3)
                times[b] = 1e6 * min(per) / args.repeats
            speed = times["python"] / times["compiled"] if len(backends) == 2 else float("nan")
            diff = np.max(np.abs(vals[backends[0]] - vals[backends[-1]]))
            print(f"{n:>6} {q:>3} " + " ".join(f"{times[b]:>12.1f}" for b in backends)
                  + f" {speed:>9.2f} {diff:>12.2e}")


if __name__ == "__main__":
    main()
