"""Embedding quality measures and embedding comparison."""

import numpy as np
from scipy.linalg import orthogonal_procrustes
from scipy.optimize import linear_sum_assignment

from .knn import kmeans, knn_exact
from .core import seeded_rng


def knn_preservation(data, embedding, k):
    """Mean fraction of each point's ``k`` input-space neighbours that are
    also among its ``k`` embedding-space neighbours."""
    high = knn_exact(data, k).indices
    low = knn_exact(embedding, k).indices
    hits = sum(np.intersect1d(h, l, assume_unique=True).size for h, l in zip(high, low))
    return hits / (high.shape[0] * k)


def loo_1nn_accuracy(embedding, labels):
    """Leave-one-out 1-nearest-neighbour label agreement."""
    labels = np.asarray(labels)
    nn = knn_exact(embedding, 1).indices[:, 0]
    return float(np.mean(labels[nn] == labels))


def matched_accuracy(pred, labels):
    """Accuracy after the best one-to-one matching of cluster ids to labels."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    p_ids, p_inv = np.unique(pred, return_inverse=True)
    l_ids, l_inv = np.unique(labels, return_inverse=True)
    table = np.zeros((p_ids.size, l_ids.size), dtype=np.int64)
    np.add.at(table, (p_inv, l_inv), 1)
    r, c = linear_sum_assignment(-table)
    return float(table[r, c].sum() / labels.size)


def kmeans_label_accuracy(embedding, labels, clusters=None, seed=0, restarts=5):
    labels = np.asarray(labels)
    clusters = clusters or np.unique(labels).size
    rng = seeded_rng(seed)
    best = None
    for _ in range(restarts):
        _, pred, inertia = kmeans(np.asarray(embedding, dtype=np.float64), clusters, rng,
                                  max_iter=100, tol=1e-8)
        if best is None or inertia < best[0]:
            best = (inertia, pred)
    return matched_accuracy(best[1], labels)


def procrustes_align(reference, other):
    """Rigidly align ``other`` onto ``reference`` (rotation/reflection and
    translation, no scaling).  Returns the aligned copy of ``other``."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(other, dtype=np.float64)
    a_mean = a.mean(axis=0)
    b_mean = b.mean(axis=0)
    rot, _ = orthogonal_procrustes(b - b_mean, a - a_mean)
    return (b - b_mean) @ rot + a_mean
