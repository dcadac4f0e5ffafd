"""Training loop: neighbours, affinities, then gradient descent with
momentum, per-coordinate gains and an early-exaggeration phase."""

import sys
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import _accel, forces, quadtree
from .affinity import SparseAffinities, exaggerate, joint_affinities, symmetrize
from .core import DivergenceError, Embedding, TsneConfig, TsneError, as_data_matrix, seeded_rng
from .knn import knn_graph

INIT_STD = 1e-4
GAIN_STEP = 0.2
GAIN_DECAY = 0.8
MIN_GAIN = 0.01
DENSE_KL_LIMIT = 4096


class StageError(TsneError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class Timer:
    """Accumulates monotonic wall time per named stage."""

    def __init__(self):
        self.totals = defaultdict(float)

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0


@dataclass
class TrainState:
    iter: int
    embedding: Embedding
    phase: str = "exaggerated"
    kl_history: list = field(default_factory=list)
    last_grad: np.ndarray = None
    last_z: float = float("nan")


@dataclass
class RunResult:
    embedding: Embedding
    kl_history: list
    kl_kind: str
    timings: dict
    affinities: SparseAffinities
    iterations: int
    per_iter_seconds: list

    @property
    def coords(self):
        return self.embedding.coords

    @property
    def final_kl(self):
        return self.kl_history[-1][1] if self.kl_history else None


def initialize(n, seed, dtype=np.float32):
    if n < 2:
        raise ValueError(f"need at least 2 points (got {n})")
    coords = seeded_rng(seed).normal(0.0, INIT_STD, size=(n, 2)).astype(dtype)
    return Embedding(coords)


def step(state, P, config, timer=None):
    """One gradient update of ``state`` in place; returns ``state``."""
    timer = timer or Timer()
    emb = state.embedding
    Y = emb.coords
    with timer("tree"):
        tree = quadtree.build(Y)
    with timer("repulsive"):
        rep, z_est = forces.repulsive_forces(tree, Y, config.theta)
    with timer("pq"):
        pq = forces.compute_pq(P, Y)
    with timer("attractive"):
        attr = forces.attractive_forces(P, pq, Y)
    with timer("update"), np.errstate(over="ignore", invalid="ignore"):
        # overflow is caught below as a divergence, with context
        grad = 4.0 * (attr + rep)
        momentum = config.momentum_initial if state.phase == "exaggerated" else config.momentum_final
        dtype = Y.dtype
        g = grad.astype(dtype)
        flip = np.sign(g) != np.sign(emb.velocity)
        emb.gains = np.where(flip, emb.gains + dtype.type(GAIN_STEP), emb.gains * dtype.type(GAIN_DECAY))
        np.maximum(emb.gains, dtype.type(MIN_GAIN), out=emb.gains)
        emb.velocity = dtype.type(momentum) * emb.velocity - dtype.type(config.learning_rate) * emb.gains * g
        Y = Y + emb.velocity
        if not np.all(np.isfinite(Y)):
            raise DivergenceError(state.iter + 1, float(np.nanmax(np.abs(grad))), config.learning_rate)
        Y -= Y.mean(axis=0, dtype=np.float64).astype(dtype)
        emb.coords = Y
    state.iter += 1
    state.last_grad = grad
    state.last_z = z_est
    return state


def objective(P, Y, theta=0.5):
    """KL diagnostic: exact normalization up to the dense limit, Barnes-Hut
    estimate above it.  Returns ``(kl, kind)``."""
    n = Y.shape[0]
    if n <= DENSE_KL_LIMIT:
        return forces.kl_divergence(P, Y), "exact"
    tree = quadtree.build(Y)
    _, z = quadtree.traverse_all(tree, theta)
    return forces.kl_divergence(P, Y, z=float(z.sum())), "sparse_bh"


def kl_schedule(n, config):
    cadence = 50 if n <= DENSE_KL_LIMIT else 250
    marks = set(range(cadence, config.max_iters + 1, cadence))
    if config.exaggeration_iters + 50 <= config.max_iters:
        marks.add(config.exaggeration_iters + 50)
    marks.add(config.max_iters)
    return marks


@contextmanager
def _stage(name):
    try:
        yield
    except (DivergenceError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _progress(it, kl, grad, t0):
    max_grad = float(np.abs(grad).max()) if grad is not None else float("nan")
    elapsed = (time.perf_counter() - t0) * 1e3
    print(f"iter={it} kl={kl:.6f} max_grad={max_grad:.6g} elapsed_ms={elapsed:.0f}",
          file=sys.stderr, flush=True)


def affinities_for(data, config, timer=None):
    timer = timer or Timer()
    dtype = np.dtype(config.dtype)
    with _stage("knn"), timer("knn"):
        n = data.shape[0]
        k = min(int(config.k_neighbors), n - 1)
        graph = knn_graph(data, k, mode=config.ann_mode, tau=config.tau_probes,
                          seed=config.seed, n_lists=config.ann_lists, rerank=config.ann_rerank)
    with _stage("affinity"), timer("affinity"):
        perplexity = min(config.perplexity, max(1.0, k - 1.0))
        if k == 1:
            # a single neighbour carries all the mass
            P = symmetrize(np.ones((n, 1)), graph, dtype=dtype)
        else:
            P = joint_affinities(graph, perplexity, dtype=dtype)
    return P


def run(data=None, config=None, affinities=None, callback=None):
    """Full pipeline.  Pass either ``data`` or precomputed ``affinities``."""
    config = (config or TsneConfig()).validate()
    timer = Timer()
    _accel.set_threads(config.threads)
    dtype = np.dtype(config.dtype)
    if affinities is None:
        if data is None:
            raise ValueError("need data or affinities")
        with _stage("input"):
            data = as_data_matrix(data)
        P = affinities_for(data, config, timer)
    else:
        P = affinities
    n = P.n
    with _stage("init"):
        state = TrainState(0, initialize(n, config.seed, dtype))
    marks = kl_schedule(n, config)
    kl_kind = "exact" if n <= DENSE_KL_LIMIT else "sparse_bh"
    per_iter = []
    t0 = time.perf_counter()
    with _stage("optimize"):
        P_run = exaggerate(P, config.exaggeration_factor) if config.exaggeration_iters > 0 else P
        if config.exaggeration_iters == 0:
            state.phase = "normal"
        for it in range(config.max_iters):
            if state.phase == "exaggerated" and it == config.exaggeration_iters:
                state.phase = "normal"
                P_run = P
            ts = time.perf_counter()
            step(state, P_run, config, timer)
            per_iter.append(time.perf_counter() - ts)
            if state.iter in marks:
                with timer("diagnostics"):
                    kl, kl_kind = objective(P, state.embedding.coords, config.theta)
                state.kl_history.append((state.iter, kl))
                if config.verbose:
                    _progress(state.iter, kl, state.last_grad, t0)
            if callback is not None:
                callback(state)
            if (config.min_grad_norm is not None and state.phase == "normal"
                    and np.linalg.norm(state.last_grad) < config.min_grad_norm):
                if not state.kl_history or state.kl_history[-1][0] != state.iter:
                    kl, kl_kind = objective(P, state.embedding.coords, config.theta)
                    state.kl_history.append((state.iter, kl))
                break
    return RunResult(
        embedding=state.embedding,
        kl_history=state.kl_history,
        kl_kind=kl_kind,
        timings=dict(timer.totals),
        affinities=P,
        iterations=state.iter,
        per_iter_seconds=per_iter,
    )
