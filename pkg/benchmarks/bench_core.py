"""Compiled core versus numpy fallback on the pairwise right-hand side.

Usage: python3 benchmarks/bench_core.py [--sizes 400 1600] [--repeat 5] [--threads 1]
"""

import argparse
import time

import numpy as np

from eulalign import backend
from eulalign.kernels import Domain, Kernel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[400, 1600, 3200])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    cases = [("algebraic, free", Kernel.algebraic(1.0), Domain.free()),
             ("bump, torus", Kernel.bump(1.5), Domain.torus([2 * np.pi, 2 * np.pi]))]
    backend.set_num_threads(args.threads)
    names = backend.available()
    print(f"backends: {', '.join(names)}; threads={args.threads}")
    print(f"{'case':<18}{'N':>6}{'grad':>6}" + "".join(f"{n + ' [ms]':>16}" for n in names)
          + ("   speed-up" if len(names) == 2 else ""))
    for label, kernel, domain in cases:
        for N in args.sizes:
            pos = rng.uniform(0, 2 * np.pi, (N, 2))
            vel = rng.normal(size=(N, 2))
            mass = np.full(N, 1.0 / N)
            for grad in (False, True):
                row = []
                for name in names:
                    with backend.using(name):
                        row.append(best_of(lambda: backend.pair_sums(pos, vel, mass, kernel, domain, grad),
                                           args.repeat))
                line = f"{label:<18}{N:>6}{str(grad):>6}" + "".join(f"{1e3 * t:>16.2f}" for t in row)
                if len(row) == 2:
                    line += f"{row[1] / row[0]:>10.1f}x"
                print(line)


if __name__ == "__main__":
    main()
