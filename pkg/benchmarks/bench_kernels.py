"""Compiled vs NumPy kernels on graph-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times ``csr_spmm`` (normalized adjacency times a feature block) and
``topk_rows`` (top-lambda neighbour selection on a cosine block) for every
available backend and checks that they return the same result.
"""
import argparse
import timeit

import numpy as np

from corgcn import kernels
from corgcn.decompose import cosine_matrix
from corgcn.graph import Graph, normalize_adjacency


def spmm_case(n, avg_deg, d, rng):
    m = n * avg_deg // 2
    g = Graph.from_edges(n, rng.integers(0, n, m), rng.integers(0, n, m))
    a = normalize_adjacency(g)
    return (a.indptr, a.indices, a.data, rng.normal(size=(n, d)))


def bench(fn, args, repeat):
    t = timeit.Timer(lambda: fn(*args))
    loops, _ = t.autorange()
    return min(t.repeat(repeat, loops)) / loops


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    impls = kernels.implementations()
    print(f"backends: {', '.join(impls)} (selected at import: {kernels.BACKEND})\n")
    print(f"{'kernel':<10}{'case':<26}" + "".join(f"{name:>12}" for name in impls) + "   speedup")

    cases = []
    for n, deg, d in [(1000, 10, 64), (3106, 12, 64), (3106, 12, 960), (20000, 10, 64)]:
        cases.append(("csr_spmm", f"n={n} deg={deg} d={d}",
                      lambda impl, a=spmm_case(n, deg, d, rng): kernels.csr_spmm(*a, impl=impl)))
    for b, lam in [(512, 7), (1024, 7), (3106, 7), (3106, 19)]:
        block = cosine_matrix(rng.normal(size=(b, 64)))
        cases.append(("topk_rows", f"B={b} lambda={lam}",
                      lambda impl, s=block, k=lam: kernels.topk_rows(s, k, impl=impl)))

    for kernel, label, run in cases:
        outs = [run(impl) for impl in impls.values()]
        for o in outs[1:]:
            if not np.allclose(o, outs[0], rtol=1e-12, atol=1e-12):
                raise SystemExit(f"{kernel} {label}: backends disagree")
        times = [bench(run, (impl,), args.repeat) for impl in impls.values()]
        ratio = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else ""
        print(f"{kernel:<10}{label:<26}" + "".join(f"{1e3 * t:10.2f}ms" for t in times)
              + f"  {ratio}")


if __name__ == "__main__":
    main()
