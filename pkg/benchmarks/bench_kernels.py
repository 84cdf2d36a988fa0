"""Time the numba kernels against the numpy fallbacks on batch-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Inputs mirror a training batch: 16 closed 500-face meshes (8000 nodes) and
feature widths from the first GCN layer up to a wide DC-block input.
"""

import argparse
import timeit

import numpy as np

from mdcgcn import kernels, shapes
from mdcgcn.graph import batch_graphs, mesh_to_graph
from mdcgcn.mesh import build_edge_table


def batch_operator(meshes=16):
    m = shapes.geodesic_sphere(5)
    g = mesh_to_graph(m, build_edge_table(m))
    return batch_graphs([g] * meshes).op


def best_of(fn, repeat):
    fn()  # warm up (and compile, for numba)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--meshes", type=int, default=16)
    args = parser.parse_args()

    if not kernels._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare against")
    rng = np.random.default_rng(0)
    op = batch_operator(args.meshes)
    n = op.n
    offsets = np.arange(0, n + 1, 500, dtype=np.int64)
    print(f"{n} nodes, {op.nnz} operator entries, {args.repeat} repeats (best time)")
    print(f"{'kernel':<14}{'width':>7}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}  max |diff|")
    for width in (57, 64, 256, 1024):
        x = rng.normal(size=(n, width))
        index = rng.integers(0, n // 4, size=n)
        cases = [
            ("csr_spmm", lambda f: f(op.indptr, op.indices, op.data, x),
             kernels.csr_spmm_numpy, kernels.csr_spmm_numba),
            ("segment_sum", lambda f: f(x, offsets), kernels.segment_sum_numpy, kernels.segment_sum_numba),
            ("scatter_add", lambda f: f(index, x, n // 4), kernels.scatter_add_rows_numpy,
             kernels.scatter_add_rows_numba),
        ]
        for name, call, np_fn, nb_fn in cases:
            t_np = best_of(lambda: call(np_fn), args.repeat)
            t_nb = best_of(lambda: call(nb_fn), args.repeat)
            diff = np.abs(call(np_fn) - call(nb_fn)).max()
            print(f"{name:<14}{width:>7}{1e3 * t_np:>11.2f}{1e3 * t_nb:>11.2f}{t_np / t_nb:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
