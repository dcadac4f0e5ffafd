"""High-dimensional affinities from a neighbour graph.

Each point gets a Gaussian bandwidth chosen so that the entropy of its
conditional distribution over its ``k`` neighbours matches the requested
perplexity; the conditionals are then symmetrized into a sparse joint
distribution.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import jit, prange
from .core import SparseMatrix, sparse_from_triplets

log = logging.getLogger(__name__)

LOG2_SIGMA_LO = -40.0
LOG2_SIGMA_HI = 40.0
MAX_BISECT = 200
REL_TOL = 1e-5  # tighter than the 1e-4 contract so rounding never crosses it


@dataclass(frozen=True)
class AffinityRow:
    sigma: float
    conditional: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class SparseAffinities:
    P: SparseMatrix

    @property
    def sum_p(self):
        return float(self.P.values.astype(np.float64).sum())

    @property
    def n(self):
        return self.P.rows

    @property
    def nnz(self):
        return self.P.nnz


# Row state: 0 converged, 1 degenerate (all distances equal), 2 hit the cap.


@jit
def _row_probs(shifted, beta, out):
    total = 0.0
    for j in range(shifted.shape[0]):
        out[j] = math.exp(-shifted[j] * beta)
        total += out[j]
    h = 0.0
    for j in range(shifted.shape[0]):
        out[j] /= total
        if out[j] > 0.0:
            h -= out[j] * math.log2(out[j])
    return h


@jit(parallel=True)
def _calibrate_numba(dist, perplexity, lo0, hi0, max_iter, rel_tol, log2_sigma, probs, status):
    n, k = dist.shape
    target = math.log2(perplexity)
    for i in prange(n):
        row = dist[i]
        dmin = row[0]
        dmax = row[0]
        for j in range(k):
            dmin = min(dmin, row[j])
            dmax = max(dmax, row[j])
        shifted = np.empty(k)
        for j in range(k):
            shifted[j] = row[j] - dmin
        out = probs[i]
        if dmax == dmin:
            for j in range(k):
                out[j] = 1.0 / k
            log2_sigma[i] = 0.0
            status[i] = 1
            continue
        lo = lo0
        hi = hi0
        best_err = np.inf
        best_s = 0.0
        done = False
        for _ in range(max_iter):
            s = 0.5 * (lo + hi)
            beta = 0.5 * 2.0 ** (-2.0 * s)
            h = _row_probs(shifted, beta, out)
            err = abs(2.0 ** h - perplexity) / perplexity
            if err < best_err:
                best_err = err
                best_s = s
            if err <= rel_tol:
                done = True
                break
            if h > target:
                hi = s
            else:
                lo = s
        if not done:
            beta = 0.5 * 2.0 ** (-2.0 * best_s)
            _row_probs(shifted, beta, out)
            status[i] = 2
        else:
            status[i] = 0
            best_s = s
        log2_sigma[i] = best_s


def _calibrate_numpy(dist, perplexity, lo0, hi0, max_iter, rel_tol, log2_sigma, probs, status):
    n, k = dist.shape
    target = math.log2(perplexity)
    shifted = dist - dist.min(axis=1, keepdims=True)
    flat = shifted.max(axis=1) == 0
    lo = np.full(n, lo0)
    hi = np.full(n, hi0)
    best_err = np.full(n, np.inf)
    best_s = np.zeros(n)
    active = ~flat
    converged = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        s = 0.5 * (lo[idx] + hi[idx])
        beta = 0.5 * 2.0 ** (-2.0 * s)
        p = np.exp(-shifted[idx] * beta[:, None])
        p /= p.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=1)
        err = np.abs(2.0 ** h - perplexity) / perplexity
        better = err < best_err[idx]
        best_err[idx[better]] = err[better]
        best_s[idx[better]] = s[better]
        ok = err <= rel_tol
        converged[idx[ok]] = True
        probs[idx[ok]] = p[ok]
        active[idx[ok]] = False
        up = h > target
        hi[idx[up & ~ok]] = s[up & ~ok]
        lo[idx[~up & ~ok]] = s[~up & ~ok]
    capped = ~flat & ~converged
    if capped.any():
        idx = np.flatnonzero(capped)
        beta = 0.5 * 2.0 ** (-2.0 * best_s[idx])
        p = np.exp(-shifted[idx] * beta[:, None])
        probs[idx] = p / p.sum(axis=1, keepdims=True)
    probs[flat] = 1.0 / k
    best_s[flat] = 0.0
    log2_sigma[:] = best_s
    status[:] = np.where(flat, 1, np.where(capped, 2, 0))


def calibrate(distances, perplexity):
    """Vectorized bandwidth search over rows of squared neighbour distances.

    Returns ``(sigma, conditional, status)`` where ``status`` is 0 for a
    converged row, 1 for a degenerate row (all distances equal: uniform
    probabilities, sigma meaningless) and 2 when the iteration cap was hit.
    """
    dist = np.ascontiguousarray(distances, dtype=np.float64)
    if dist.ndim != 2:
        raise ValueError("distances must be 2-D (rows x k)")
    n, k = dist.shape
    if k < 2:
        raise ValueError(f"need at least 2 neighbours per row (got {k})")
    if not 0 < perplexity < k:
        raise ValueError(f"perplexity must lie in (0, k={k}) (got {perplexity})")
    if np.any(dist < 0) or not np.all(np.isfinite(dist)):
        raise ValueError("distances must be finite and non-negative")
    log2_sigma = np.empty(n)
    probs = np.empty((n, k))
    status = np.empty(n, dtype=np.int8)
    kernel = _calibrate_numba if _accel.use_numba() else _calibrate_numpy
    kernel(dist, float(perplexity), LOG2_SIGMA_LO, LOG2_SIGMA_HI, MAX_BISECT, REL_TOL,
           log2_sigma, probs, status)
    capped = int((status == 2).sum())
    if capped:
        log.warning("perplexity search hit the iteration cap on %d row(s)", capped)
    return 2.0 ** log2_sigma, probs, status


def calibrate_row(distances, perplexity):
    sigma, probs, status = calibrate(np.asarray(distances, dtype=np.float64)[None, :], perplexity)
    return AffinityRow(float(sigma[0]), probs[0], bool(status[0] == 1))


def entropy_bits(p):
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def symmetrize(conditional, graph, dtype=np.float64):
    """Joint affinities ``P_ij = (p_{j|i} + p_{i|j}) / 2n`` on the union pattern.

    Each unordered pair's value is computed once and written to both
    triangles, so the result is bitwise symmetric.
    """
    conditional = np.asarray(conditional, dtype=np.float64)
    idx = np.asarray(graph.indices)
    if conditional.shape != idx.shape:
        raise ValueError(
            f"conditional probabilities {conditional.shape} do not align with graph {idx.shape}"
        )
    n, k = idx.shape
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = idx.reshape(-1).astype(np.int64)
    vals = conditional.reshape(-1)
    valid = (cols >= 0) & (cols != rows)
    rows, cols, vals = rows[valid], cols[valid], vals[valid]
    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    keys, inverse = np.unique(lo * n + hi, return_inverse=True)
    pair = np.bincount(inverse, weights=vals, minlength=keys.size) / (2.0 * n)
    a, b = keys // n, keys % n
    P = sparse_from_triplets(
        n, n, (np.concatenate([a, b]), np.concatenate([b, a]), np.concatenate([pair, pair])),
        dtype=dtype,
    )
    return SparseAffinities(P)


def exaggerate(affinities, factor):
    if not factor > 0:
        raise ValueError(f"exaggeration factor must be > 0 (got {factor})")
    return SparseAffinities(affinities.P.scaled(factor))


def joint_affinities(graph, perplexity, dtype=np.float64):
    """Calibrate every row of ``graph`` and symmetrize."""
    _, probs, _ = calibrate(graph.distances, perplexity)
    return symmetrize(probs, graph, dtype=dtype)
