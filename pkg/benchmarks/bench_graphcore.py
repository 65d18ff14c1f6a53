"""Compiled vs pure-Python graph core timings.

    python benchmarks/bench_graphcore.py [--sizes 10 25 40] [--repeat 3]

Times all-pairs BFS on square lattices (the lattice benchmark's hot path),
Dijkstra on a weighted random graph, and connected components. Results from
both backends are checked for equality before timing is reported.
"""
import argparse
import importlib.util
import time

import numpy as np

from mvgam import graphcore
from mvgam.lattice import make_lattice


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def weighted_graph(n, seed=0):
    rng = np.random.default_rng(seed)
    W = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 8 / n), 1)
    return W + W.T


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 25, 40])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if importlib.util.find_spec("mvgam._graphcore") is None:
        print("compiled extension not built; only the Python backend is available")
        return 1
    cases = []
    for s in args.sizes:
        A = make_lattice(s, s, "square").adjacency
        cases.append((f"bfs lattice {s}x{s}",
                      lambda b, A=A: graphcore.shortest_path_distances(A, False, backend=b)))
        cases.append((f"components lattice {s}x{s}",
                      lambda b, A=A: graphcore.connected_components(A, backend=b)))
        W = weighted_graph(s * s)
        cases.append((f"dijkstra random n={s * s}",
                      lambda b, W=W: graphcore.shortest_path_distances(W, True, backend=b)))
    print(f"{'case':<28}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for name, fn in cases:
        tp, rp = best_of(lambda: fn("python"), args.repeat)
        tc, rc = best_of(lambda: fn("cython"), args.repeat)
        if not np.array_equal(rp, rc):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<28}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
