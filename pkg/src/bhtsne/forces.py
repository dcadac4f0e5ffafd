"""Gradient of the t-SNE objective split into attractive and repulsive parts.

With the unnormalized kernel ``w_ij = (1 + ||y_i - y_j||^2)^-1`` and
``Z = sum_{k != l} w_kl``:

    attractive_i = sum_j P_ij w_ij (y_i - y_j)
    repulsive_i  = -(1 / Z) sum_j w_ij^2 (y_i - y_j)
    gradient_i   = 4 (attractive_i + repulsive_i)

The attractive sum only touches the nonzeros of ``P``; the repulsive sum and
``Z`` come from the Barnes-Hut traversal.
"""

from dataclasses import dataclass

import numpy as np

from . import _accel, quadtree
from ._accel import jit, prange
from .affinity import SparseAffinities


def _matrix(P):
    return P.P if isinstance(P, SparseAffinities) else P


@dataclass
class GradientBuffers:
    attractive: np.ndarray
    repulsive: np.ndarray
    z_estimate: float
    pq_values: np.ndarray

    def gradient(self):
        return 4.0 * (self.attractive + self.repulsive)


@jit(parallel=True)
def _pq_numba(offsets, cols, vals, y, out):
    for i in prange(offsets.shape[0] - 1):
        yi0 = np.float64(y[i, 0])
        yi1 = np.float64(y[i, 1])
        for p in range(offsets[i], offsets[i + 1]):
            j = cols[p]
            d0 = yi0 - y[j, 0]
            d1 = yi1 - y[j, 1]
            out[p] = vals[p] / (1.0 + d0 * d0 + d1 * d1)


def _pq_numpy(offsets, cols, vals, y, out):
    rows = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    diff = y[rows].astype(np.float64) - y[cols]
    out[:] = vals / (1.0 + (diff * diff).sum(axis=1))


def compute_pq(P, Y):
    """``P_ij / (1 + ||y_i - y_j||^2)`` at every stored entry of ``P``."""
    A = _matrix(P)
    out = np.empty(A.nnz, dtype=np.float64)
    kernel = _pq_numba if _accel.use_numba() else _pq_numpy
    kernel(A.row_offsets, A.col_indices, A.values, np.ascontiguousarray(Y), out)
    return out


def attractive_forces(P, pq_values, Y):
    """Row-sum-scaled ``Y`` minus the sparse product ``(P*Q) Y``."""
    PQ = _matrix(P).with_values(pq_values)
    return PQ.row_sums()[:, None] * np.asarray(Y, dtype=np.float64) - PQ.matmul(Y)


def repulsive_forces(tree, Y, theta):
    """Barnes-Hut repulsion and the matching estimate of ``Z``.

    ``tree`` must have been built on ``Y``.
    """
    force, z = quadtree.traverse_all(tree, theta)
    z_est = float(np.sum(z))
    assert z_est > 0 or len(z) < 2, "normalization estimate must be positive"
    return -force / z_est, z_est


def gradient_terms(P, Y, theta, tree=None):
    if tree is None:
        tree = quadtree.build(Y)
    rep, z_est = repulsive_forces(tree, Y, theta)
    pq = compute_pq(P, Y)
    attr = attractive_forces(P, pq, Y)
    return GradientBuffers(attr, rep, z_est, pq)


def gradient(P, Y, theta=0.5):
    """``4 (attractive + repulsive)`` per point, in 64-bit."""
    return gradient_terms(P, Y, theta).gradient()


@jit(parallel=True)
def _z_rows_numba(y, out):
    n = y.shape[0]
    for i in prange(n):
        acc = 0.0
        yi0 = np.float64(y[i, 0])
        yi1 = np.float64(y[i, 1])
        for j in range(n):
            if j != i:
                d0 = yi0 - y[j, 0]
                d1 = yi1 - y[j, 1]
                acc += 1.0 / (1.0 + d0 * d0 + d1 * d1)
        out[i] = acc


def _z_rows_numpy(y, out, block=1024):
    y = y.astype(np.float64)
    for s in range(0, y.shape[0], block):
        d = y[s:s + block, None, :] - y[None, :, :]
        w = 1.0 / (1.0 + (d * d).sum(axis=2))
        idx = np.arange(w.shape[0])
        w[idx, idx + s] = 0.0
        out[s:s + block] = w.sum(axis=1)


def exact_z(Y):
    """``sum_{k != l} (1 + ||y_k - y_l||^2)^-1`` by direct O(n^2) summation."""
    Y = np.ascontiguousarray(Y)
    rows = np.empty(Y.shape[0])
    (_z_rows_numba if _accel.use_numba() else _z_rows_numpy)(Y, rows)
    return float(rows.sum())


def kl_divergence(P, Y, z=None):
    """``sum P_ij log(P_ij / q_ij)`` over the stored entries of ``P``.

    ``z`` defaults to the exact normalization; pass an estimate (e.g. the
    Barnes-Hut one) to avoid the quadratic cost.
    """
    A = _matrix(P)
    if z is None:
        z = exact_z(Y)
    p = A.values.astype(np.float64)
    rows = A.row_ids()
    Y = np.asarray(Y, dtype=np.float64)
    diff = Y[rows] - Y[A.col_indices]
    q = 1.0 / (1.0 + (diff * diff).sum(axis=1)) / z
    keep = p > 0
    return float(np.sum(p[keep] * np.log(p[keep] / q[keep])))
