"""Synthetic Gaussian-cluster data."""

import numpy as np

from .core import seeded_rng


def gaussian_clusters(n, d, clusters=4, spread=1.0, seed=0, dtype=np.float32):
    """Equal-sized isotropic Gaussian clusters.

    Centres are uniform in a hypercube of side ``10 * spread``; the last
    cluster absorbs any remainder of ``n / clusters``.  Returns
    ``(data, labels)``.
    """
    if clusters < 1:
        raise ValueError(f"clusters must be >= 1 (got {clusters})")
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be positive (got n={n}, d={d})")
    if spread < 0:
        raise ValueError(f"spread must be >= 0 (got {spread})")
    rng = seeded_rng(seed)
    side = 10.0 * spread if spread > 0 else 10.0
    centers = rng.uniform(0.0, side, size=(clusters, d))
    size = n // clusters
    labels = np.minimum(np.arange(n) // max(size, 1), clusters - 1).astype(np.int32)
    data = centers[labels] + rng.normal(0.0, 1.0, size=(n, d)) * spread
    return data.astype(dtype), labels
