"""Scaling benchmark on synthetic Gaussian clusters."""

import csv
import statistics
from dataclasses import replace

from . import _accel
from .datasets import gaussian_clusters
from .optimizer import run

LOOP_STAGES = ("tree", "repulsive", "pq", "attractive", "update")

COLUMNS = (
    "n", "d", "iters", "backend", "knn_s", "affinity_s",
    "tree_s", "repulsive_s", "pq_s", "attractive_s", "update_s",
    "loop_s", "stage_sum_s", "per_iter_mean_s", "per_iter_median_s",
    "kl_check_iter", "kl_check", "kl_final",
)


def bench_one(n, config, d=50, clusters=4, spread=1.0):
    data, _ = gaussian_clusters(n, d, clusters, spread, seed=config.seed)
    result = run(data, config)
    t = result.timings
    per_iter = result.per_iter_seconds
    check_iter = config.exaggeration_iters + 50
    history = dict(result.kl_history)
    return {
        "n": n,
        "d": d,
        "iters": result.iterations,
        "backend": _accel.backend(),
        "knn_s": t.get("knn", 0.0),
        "affinity_s": t.get("affinity", 0.0),
        **{f"{s}_s": t.get(s, 0.0) for s in LOOP_STAGES},
        "loop_s": sum(per_iter),
        "stage_sum_s": sum(t.get(s, 0.0) for s in LOOP_STAGES),
        "per_iter_mean_s": sum(per_iter) / len(per_iter),
        "per_iter_median_s": statistics.median(per_iter),
        "kl_check_iter": check_iter if check_iter in history else "",
        "kl_check": history.get(check_iter, ""),
        "kl_final": result.final_kl,
    }


def bench(sizes, config, d=50, clusters=4, spread=1.0):
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError(f"sizes must be ascending (got {sizes})")
    return [bench_one(n, replace(config), d, clusters, spread) for n in sizes]


def write_report(rows, path_or_file):
    def _write(fh):
        writer = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
