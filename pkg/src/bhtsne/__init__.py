"""Barnes-Hut t-SNE with exact and IVF-PQ approximate neighbour search."""

from ._accel import backend, set_backend, set_threads
from .affinity import SparseAffinities, calibrate, calibrate_row, exaggerate, symmetrize
from .core import (
    DivergenceError,
    Embedding,
    SparseMatrix,
    TsneConfig,
    seeded_rng,
    sparse_from_triplets,
)
from .forces import attractive_forces, compute_pq, gradient, kl_divergence, repulsive_forces
from .knn import AnnIndex, KnnGraph, ann_search, ann_train, knn_exact
from .optimizer import RunResult, initialize, run, step
from .quadtree import QuadTree, bh_traverse, build

__version__ = "0.1.0"


def fit_transform(data, **config):
    """Embed ``data`` in 2-D with :class:`TsneConfig` keyword overrides."""
    return run(data, TsneConfig(**config)).coords
