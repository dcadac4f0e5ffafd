"""Shared types, configuration, seeded randomness and the CSR substrate."""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from ._accel import jit, prange

UINT64_MASK = (1 << 64) - 1


class TsneError(Exception):
    """Base class for package errors."""


class DivergenceError(TsneError):
    """Coordinates became non-finite during optimization."""

    def __init__(self, iteration, max_grad, learning_rate):
        self.iteration = iteration
        self.max_grad = max_grad
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite coordinates at iteration {iteration} "
            f"(max |gradient| = {max_grad:.6g}, learning rate = {learning_rate:g})"
        )


def seeded_rng(seed):
    """Counter-based generator; any integer seed, including 0, is valid.

    Negative seeds are folded into the unsigned 64-bit range.
    """
    return np.random.Generator(np.random.Philox(int(seed) & UINT64_MASK))


def spawn_rngs(seed, count):
    """Independent, reproducible sub-streams for per-chunk work."""
    ss = np.random.SeedSequence(int(seed) & UINT64_MASK)
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(count)]


def as_data_matrix(values, dtype=None):
    """Validate an ``n x d`` point array and return it C-contiguous.

    Raises ``ValueError`` for fewer than two points, zero dimensions or any
    non-finite entry (the first offending row is named).
    """
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"data must be 2-D (n x d), got shape {arr.shape}")
    n, d = arr.shape
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    if d < 1:
        raise ValueError("need at least 1 dimension")
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
    arr = np.ascontiguousarray(arr, dtype=dtype)
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argmax(bad.any(axis=1)))
        raise ValueError(f"non-finite value in row {row}")
    return arr


@dataclass
class TsneConfig:
    perplexity: float = 50.0
    k_neighbors: int | None = None
    theta: float = 0.5
    learning_rate: float = 200.0
    momentum_initial: float = 0.5
    momentum_final: float = 0.8
    exaggeration_factor: float = 12.0
    exaggeration_iters: int = 250
    max_iters: int = 1000
    seed: int = 42
    ann_mode: str = "exact"
    tau_probes: int = 10
    dtype: str = "float32"
    min_grad_norm: float | None = None
    threads: int | None = None
    ann_lists: int | None = None
    ann_rerank: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.k_neighbors is None:
            self.k_neighbors = max(int(math.ceil(3 * self.perplexity)), 32)

    @property
    def float_dtype(self):
        return np.dtype(self.dtype)

    def problems(self):
        """Every invalid field, as human-readable strings (empty when valid)."""
        out = []
        if not self.perplexity > 0:
            out.append(f"perplexity must be > 0 (got {self.perplexity})")
        if int(self.k_neighbors) < 1:
            out.append(f"k_neighbors must be >= 1 (got {self.k_neighbors})")
        elif self.perplexity > 0 and self.perplexity >= self.k_neighbors:
            out.append(
                f"perplexity ({self.perplexity}) must be below k_neighbors ({self.k_neighbors})"
            )
        if not self.theta >= 0:
            out.append(f"theta must be >= 0 (got {self.theta})")
        if not self.learning_rate > 0:
            out.append(f"learning_rate must be > 0 (got {self.learning_rate})")
        for name in ("momentum_initial", "momentum_final"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                out.append(f"{name} must be in [0, 1) (got {v})")
        if not self.exaggeration_factor >= 1:
            out.append(f"exaggeration_factor must be >= 1 (got {self.exaggeration_factor})")
        if self.exaggeration_iters < 0:
            out.append(f"exaggeration_iters must be >= 0 (got {self.exaggeration_iters})")
        if self.max_iters < 1:
            out.append(f"max_iters must be >= 1 (got {self.max_iters})")
        if self.ann_mode not in ("exact", "ivfpq"):
            out.append(f"ann_mode must be 'exact' or 'ivfpq' (got {self.ann_mode!r})")
        if self.tau_probes < 1:
            out.append(f"tau_probes must be >= 1 (got {self.tau_probes})")
        if self.dtype not in ("float32", "float64"):
            out.append(f"dtype must be float32 or float64 (got {self.dtype!r})")
        if self.threads is not None and self.threads < 1:
            out.append(f"threads must be >= 1 (got {self.threads})")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))
        if self.k_neighbors < math.ceil(3 * self.perplexity):
            warnings.warn(
                f"k_neighbors={self.k_neighbors} is below 3*perplexity="
                f"{math.ceil(3 * self.perplexity)}; calibration may be coarse",
                stacklevel=2,
            )
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class Embedding:
    coords: np.ndarray
    velocity: np.ndarray = None
    gains: np.ndarray = None

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros_like(self.coords)
        if self.gains is None:
            self.gains = np.ones_like(self.coords)

    @property
    def n(self):
        return self.coords.shape[0]

    def copy(self):
        return Embedding(self.coords.copy(), self.velocity.copy(), self.gains.copy())


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed-row matrix with strictly increasing columns inside each row."""

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    @property
    def shape(self):
        return (self.rows, self.cols)

    def row_ids(self):
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.row_offsets))

    def check(self):
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.rows + 1,) or ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be a non-decreasing array of length rows+1 from 0")
        if ci.shape != (ro[-1],) or self.values.shape != (ro[-1],):
            raise ValueError("col_indices/values length must equal nnz")
        if ci.size and (ci.min() < 0 or ci.max() >= self.cols):
            raise ValueError("column index out of range")
        step = np.diff(ci)
        inner = np.ones(step.size, dtype=bool)
        cuts = ro[1:-1]
        inner[cuts[(cuts > 0) & (cuts < ci.size)] - 1] = False
        if np.any(step[inner] <= 0):
            raise ValueError("columns must be strictly increasing within each row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        return self

    def with_values(self, values):
        return SparseMatrix(self.rows, self.cols, self.row_offsets, self.col_indices, values)

    def to_dense(self):
        out = np.zeros((self.rows, self.cols), dtype=self.values.dtype)
        out[self.row_ids(), self.col_indices] = self.values
        return out

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense)
        r, c = np.nonzero(dense)
        offsets = np.zeros(dense.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=dense.shape[0]), out=offsets[1:])
        return cls(dense.shape[0], dense.shape[1], offsets, c.astype(np.int64), dense[r, c].copy())

    def matmul(self, dense):
        """Sparse times dense, accumulated in 64-bit."""
        return spmm(self, dense)

    def row_sums(self):
        return spmm_row_sums(self)

    def scaled(self, factor):
        return self.with_values(self.values * self.values.dtype.type(factor))


def sparse_from_triplets(rows, cols, triplets, dtype=np.float64):
    """Assemble a :class:`SparseMatrix`, summing duplicate coordinates.

    ``triplets`` is either an iterable of ``(i, j, v)`` or a tuple of three
    equal-length arrays ``(i, j, v)``.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and isinstance(triplets[0], np.ndarray):
        ii, jj, vv = triplets
    else:
        triplets = list(triplets)
        ii = np.array([t[0] for t in triplets], dtype=np.int64)
        jj = np.array([t[1] for t in triplets], dtype=np.int64)
        vv = np.array([t[2] for t in triplets], dtype=np.float64)
    ii = np.asarray(ii, dtype=np.int64)
    jj = np.asarray(jj, dtype=np.int64)
    vv = np.asarray(vv)
    bad = (ii < 0) | (ii >= rows) | (jj < 0) | (jj >= cols)
    if bad.any():
        where = np.flatnonzero(bad)[:10]
        pairs = ", ".join(f"({ii[w]}, {jj[w]})" for w in where)
        raise IndexError(f"{int(bad.sum())} triplet(s) out of range for {rows}x{cols}: {pairs}")
    keys = ii * cols + jj
    uniq, inverse = np.unique(keys, return_inverse=True)
    summed = np.bincount(inverse, weights=vv.astype(np.float64), minlength=uniq.size)
    r = uniq // cols
    offsets = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=rows), out=offsets[1:])
    return SparseMatrix(rows, cols, offsets, (uniq % cols).astype(np.int64), summed.astype(dtype))


@jit(parallel=True)
def _spmm_numba(offsets, cols, vals, dense, out):
    n_rows = offsets.shape[0] - 1
    width = dense.shape[1]
    for i in prange(n_rows):
        for c in range(width):
            acc = 0.0
            for p in range(offsets[i], offsets[i + 1]):
                acc += np.float64(vals[p]) * np.float64(dense[cols[p], c])
            out[i, c] = acc


def _spmm_numpy(offsets, cols, vals, dense, out):
    rows = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    contrib = vals.astype(np.float64)[:, None] * dense[cols].astype(np.float64)
    for c in range(dense.shape[1]):
        out[:, c] = np.bincount(rows, weights=contrib[:, c], minlength=offsets.size - 1)


def spmm(A, dense):
    dense = np.asarray(dense)
    squeeze = dense.ndim == 1
    if squeeze:
        dense = dense[:, None]
    if dense.shape[0] != A.cols:
        raise ValueError(f"shape mismatch: {A.shape} @ {dense.shape}")
    out = np.zeros((A.rows, dense.shape[1]), dtype=np.float64)
    kernel = _spmm_numba if _accel.use_numba() else _spmm_numpy
    kernel(A.row_offsets, A.col_indices, A.values, np.ascontiguousarray(dense), out)
    return out[:, 0] if squeeze else out


def spmm_row_sums(A):
    return spmm(A, np.ones(A.cols, dtype=A.values.dtype))
