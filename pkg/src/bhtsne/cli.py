"""Command-line interface: ``embed``, ``bench``, ``synth`` and ``metrics``.

Exit codes: 0 success, 2 bad flags, 3 input error, 4 numerical divergence.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel, io
from .bench import bench, write_report
from .core import DivergenceError, TsneConfig
from .datasets import gaussian_clusters
from .optimizer import StageError, affinities_for, run

EXIT_OK = 0
EXIT_FLAGS = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4

REPORT_VERSION = 1


class UsageError(Exception):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(problems))


def _infer_format(path):
    name = str(path).lower()
    if name.endswith(".csv"):
        return "csv"
    if "idx" in name or name.endswith("ubyte") or name.endswith("ubyte.gz"):
        return "idx"
    return "raw_f32"


def _add_config_flags(p):
    d = TsneConfig()
    p.add_argument("--perplexity", type=float, default=d.perplexity)
    p.add_argument("--k", type=int, default=None, help="neighbours per point (default max(3*perplexity, 32))")
    p.add_argument("--theta", type=float, default=d.theta, help="Barnes-Hut opening angle; 0 is exact")
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--iters", type=int, default=d.max_iters)
    p.add_argument("--exaggeration", type=float, default=d.exaggeration_factor)
    p.add_argument("--exagg-iters", type=int, default=d.exaggeration_iters)
    p.add_argument("--momentum", type=float, default=d.momentum_initial)
    p.add_argument("--final-momentum", type=float, default=d.momentum_final)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (fallback: TSNE_THREADS)")
    p.add_argument("--ann", choices=("exact", "ivfpq"), default=d.ann_mode)
    p.add_argument("--tau", type=int, default=d.tau_probes, help="inverted lists probed per query")
    p.add_argument("--dtype", choices=("float32", "float64"), default=d.dtype)
    p.add_argument("--min-grad-norm", type=float, default=None)
    p.add_argument("--quiet", action="store_true")


def _config_from(args):
    threads = args.threads
    problems = []
    if threads is None and os.environ.get("TSNE_THREADS"):
        try:
            threads = int(os.environ["TSNE_THREADS"])
        except ValueError:
            problems.append(f"TSNE_THREADS must be an integer (got {os.environ['TSNE_THREADS']!r})")
    cfg = TsneConfig(
        perplexity=args.perplexity,
        k_neighbors=args.k,
        theta=args.theta,
        learning_rate=args.lr,
        momentum_initial=args.momentum,
        momentum_final=args.final_momentum,
        exaggeration_factor=args.exaggeration,
        exaggeration_iters=args.exagg_iters,
        max_iters=args.iters,
        seed=args.seed,
        ann_mode=args.ann,
        tau_probes=args.tau,
        dtype=args.dtype,
        min_grad_norm=args.min_grad_norm,
        threads=threads,
        verbose=not args.quiet,
    )
    problems += cfg.problems()
    if args.min_grad_norm is not None and args.min_grad_norm < 0:
        problems.append(f"--min-grad-norm must be >= 0 (got {args.min_grad_norm})")
    return cfg, problems


def _load_input(args):
    fmt = args.format or _infer_format(args.input)
    return io.load(args.input, fmt, labels_path=getattr(args, "labels", None))


# ---------------------------------------------------------------- embed


def cmd_embed(args):
    config, problems = _config_from(args)
    if args.out_format not in ("csv", "raw_f32"):
        problems.append(f"--out-format must be csv or raw_f32 (got {args.out_format!r})")
    if problems:
        raise UsageError(problems)
    t0 = time.perf_counter()
    dataset = _load_input(args)
    t_load = time.perf_counter() - t0
    result = run(dataset.data, config)
    io.save_embedding(result.coords, dataset.labels, args.out, args.out_format)
    if args.plot:
        io.plot(result.coords, dataset.labels, args.plot)
    if args.report:
        report = {
            "version": REPORT_VERSION,
            "input": {
                "path": str(args.input),
                "format": args.format or _infer_format(args.input),
                "n": int(dataset.n),
                "d": int(dataset.d),
                "labels": dataset.labels is not None,
            },
            "config": config.to_dict(),
            "backend": _accel.backend(),
            "iterations": int(result.iterations),
            "timings_s": {"load": t_load, **result.timings,
                          "total": time.perf_counter() - t0},
            "kl": {
                "final": result.final_kl,
                "kind": result.kl_kind,
                "history": [[int(i), float(v)] for i, v in result.kl_history],
            },
            "outputs": {"embedding": str(args.out), "plot": str(args.plot) if args.plot else None},
        }
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- synth


def cmd_synth(args):
    problems = []
    if args.n < 1:
        problems.append(f"--n must be >= 1 (got {args.n})")
    if args.d < 1:
        problems.append(f"--d must be >= 1 (got {args.d})")
    if args.clusters < 1:
        problems.append(f"--clusters must be >= 1 (got {args.clusters})")
    if args.spread < 0:
        problems.append(f"--spread must be >= 0 (got {args.spread})")
    if problems:
        raise UsageError(problems)
    data, labels = gaussian_clusters(args.n, args.d, args.clusters, args.spread, args.seed)
    if str(args.out).lower().endswith(".csv"):
        header = ",".join([f"x{i}" for i in range(args.d)] + ["label"])
        rows = [",".join(repr(float(v)) for v in row) + f",{lab}" for row, lab in zip(data, labels)]
        Path(args.out).write_text(header + "\n" + "\n".join(rows) + "\n")
    else:
        io.write_raw_f32(args.out, data, labels)
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args):
    config, problems = _config_from(args)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        sizes = []
        problems.append(f"--sizes must be comma-separated integers (got {args.sizes!r})")
    if sizes and sizes != sorted(sizes):
        problems.append(f"--sizes must be ascending (got {args.sizes})")
    if any(s < 2 for s in sizes):
        problems.append("--sizes entries must be >= 2")
    if problems:
        raise UsageError(problems)
    rows = bench(sizes, config, d=args.d, clusters=args.clusters)
    if args.out:
        write_report(rows, args.out)
    else:
        write_report(rows, sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------- metrics


def cmd_metrics(args):
    from .forces import kl_divergence
    from .metrics import knn_preservation, loo_1nn_accuracy

    problems = []
    if args.k < 1:
        problems.append(f"--k must be >= 1 (got {args.k})")
    if problems:
        raise UsageError(problems)
    emb_fmt = args.embedding_format or _infer_format(args.embedding)
    emb = io.load(args.embedding, emb_fmt)
    original = _load_input(args)
    if emb.n != original.n:
        raise io.DataFormatError(
            f"embedding has {emb.n} points but {args.input} has {original.n}"
        )
    if emb.d != 2:
        raise io.DataFormatError(f"embedding must be 2-D (got {emb.d} columns)")
    labels = original.labels if original.labels is not None else emb.labels
    report = {"n": int(emb.n), "k": int(args.k)}
    report["knn_preservation"] = knn_preservation(original.data, emb.data, args.k)
    report["label_agreement_1nn"] = loo_1nn_accuracy(emb.data, labels) if labels is not None else None
    config = TsneConfig(perplexity=args.perplexity)
    P = affinities_for(original.data, config)
    report["kl_sparse_support"] = kl_divergence(P, emb.data.astype(np.float64))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser():
    parser = argparse.ArgumentParser(prog="bhtsne", description="Barnes-Hut t-SNE")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="embed a dataset in 2-D")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=io.FORMATS, default=None)
    p.add_argument("--labels", default=None, help="idx label file (idx input only)")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", default="csv")
    p.add_argument("--plot", default=None, help="SVG scatter output path")
    p.add_argument("--report", default=None, help="JSON run report path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("synth", help="write Gaussian-cluster data (raw_f32, or csv by suffix)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="per-stage timings over problem sizes (CSV)")
    p.add_argument("--sizes", default="10000,20000,40000")
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench, iters=500, quiet=True)

    p = sub.add_parser("metrics", help="quality metrics of an embedding")
    p.add_argument("--embedding", required=True)
    p.add_argument("--embedding-format", choices=("csv", "raw_f32"), default=None)
    p.add_argument("--input", required=True, help="original high-dimensional data")
    p.add_argument("--format", choices=io.FORMATS, default=None)
    p.add_argument("--labels", default=None, help="idx label file (idx input only)")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--perplexity", type=float, default=TsneConfig().perplexity)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits 2 on malformed flags
    try:
        return args.func(args)
    except UsageError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_FLAGS
    except (FileNotFoundError, io.DataFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except StageError as exc:
        if isinstance(exc.cause, (FileNotFoundError, io.DataFormatError, ValueError)) and exc.stage == "input":
            print(f"input error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
