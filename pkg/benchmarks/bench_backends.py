"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_backends.py [--n 5000] [--repeat 3] [--out table.csv]

Every row runs the same inputs through both paths, checks the outputs agree,
and reports the best-of-``repeat`` wall time.  The first numba call of each
kernel is made before timing so compilation is excluded.
"""

import argparse
import csv
import sys
import time

import numpy as np

from bhtsne import TsneConfig, _accel, forces, knn, quadtree
from bhtsne.affinity import calibrate, joint_affinities
from bhtsne.core import spmm
from bhtsne.datasets import gaussian_clusters
from bhtsne.optimizer import TrainState, initialize, step


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(n):
    data, _ = gaussian_clusters(n, 50, 4, seed=0)
    graph = knn.knn_exact(data, 90)
    P = joint_affinities(graph, 30.0)
    rng = np.random.default_rng(0)
    Y = (rng.normal(size=(n, 2)) * 10).astype(np.float32)
    tree = quadtree.build(Y)
    index = knn.ann_train(data[: min(n, 4000)], seed=0)
    queries = data[: min(n, 2000)]
    sub = data[:, :2].astype(np.float64)

    def one_step():
        state = TrainState(0, initialize(n, 0))
        state.embedding.coords = Y.copy()
        step(state, P, TsneConfig())
        return state.embedding.coords

    return {
        "calibrate": lambda: calibrate(graph.distances, 30.0)[1],
        "kmeans_assign": lambda: knn._assign(sub, sub[:256])[0],
        "ann_search": lambda: knn.ann_search(index, queries, 32, 10).indices,
        "bh_traverse": lambda: quadtree.traverse_all(tree, 0.5)[0],
        "compute_pq": lambda: forces.compute_pq(P, Y),
        "spmm": lambda: spmm(P.P, Y),
        "exact_z": lambda: np.array([forces.exact_z(Y[: min(n, 4000)])]),
        "full_step": one_step,
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    rows = []
    for name, fn in cases(args.n).items():
        results = {}
        for backend in ("numba", "numpy"):
            previous = _accel.set_backend(backend)
            try:
                fn()  # warm-up (compiles under numba)
                results[backend] = best_of(fn, args.repeat)
            finally:
                _accel.set_backend(previous)
        (t_jit, a), (t_np, b) = results["numba"], results["numpy"]
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        agree = bool(np.allclose(a, b, rtol=1e-5, atol=1e-9))
        rows.append({"kernel": name, "n": args.n, "numba_s": f"{t_jit:.5f}",
                     "numpy_s": f"{t_np:.5f}", "speedup": f"{t_np / t_jit:.1f}",
                     "outputs_agree": agree})

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
