"""Compare the compiled and numpy saddle kernels on full solves.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints best-of-N wall time per backend and checks that both backends return
bit-identical fields.
"""

import argparse
import time

import numpy as np

from mtgame.game import catalog_instance
from mtgame.grid import MultitimeGrid
from mtgame.kernels import available_backends
from mtgame.solver import SolverOptions, solve

CASES = [
    ("remark1", 1, 50, 41, 21),
    ("remark1", 1, 99, 81, 41),
    ("separable_isaacs", 1, 99, 81, 41),
    ("remark1", 2, 50, 41, 21),
]


def bench(name, m, nt, nx, k, backend, repeat):
    inst = catalog_instance(name, m=m, k=k)
    grid = MultitimeGrid.for_instance(inst, nt, -1.0, 1.0, nx)
    opts = SolverOptions(backend=backend)
    best, res = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        res = solve(inst, grid, opts)
        best = min(best, time.perf_counter() - start)
    return best, res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':<34}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}  identical")
    for name, m, nt, nx, k in CASES:
        times, fields = {}, {}
        for b in backends:
            times[b], res = bench(name, m, nt, nx, k, b, args.repeat)
            fields[b] = (res["upper"][0].values, res["lower"][0].values)
        same = all(
            np.array_equal(fields[b][i], fields[backends[0]][i]) for b in backends for i in range(2)
        )
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        label = f"{name} m={m} {nt}x{nx} k={k}"
        print(f"{label:<34}" + "".join(f"{times[b]:>11.3f}s" for b in backends) + f"{speed:>9.2f}x  {same}")


if __name__ == "__main__":
    main()
