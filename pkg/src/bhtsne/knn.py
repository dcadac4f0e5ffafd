"""Exact and approximate (IVF + product quantization) nearest neighbours.

All distances are squared Euclidean.  The approximate index follows the
inverted-file / asymmetric-distance design: a coarse k-means quantizer
partitions the points into inverted lists, the residual of every point with
respect to its coarse centroid is product-quantized, and a query scans the
``tau`` closest lists ranking candidates by ``||x - q(y)||^2`` through
per-subspace lookup tables.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import jit, prange
from .core import as_data_matrix, seeded_rng

_BLOCK = 1024


@dataclass(frozen=True)
class KnnGraph:
    indices: np.ndarray
    distances: np.ndarray

    @property
    def n(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


def _sq_dists(block, data, data_sq):
    d2 = (block * block).sum(axis=1)[:, None] - 2.0 * (block @ data.T) + data_sq[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def knn_exact(data, k):
    """Brute-force ``k`` nearest neighbours of every point, excluding itself.

    Ties are broken toward the lower index.  The candidate shortlist comes
    from the BLAS expansion; shortlisted distances are then recomputed from
    explicit differences so duplicates report exactly zero.
    """
    data = as_data_matrix(data)
    n = data.shape[0]
    k = int(k)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    x = data.astype(np.float64, copy=False)
    x_sq = (x * x).sum(axis=1)
    extra = min(n - 1, k + max(8, k // 4))
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _BLOCK):
        stop = min(n, start + _BLOCK)
        d2 = _sq_dists(x[start:stop], x, x_sq)
        rows = np.arange(stop - start)
        d2[rows, rows + start] = np.inf
        if extra < n - 1:
            cand = np.argpartition(d2, extra - 1, axis=1)[:, :extra]
            # pull in everything tied with the shortlist boundary
            bound = np.take_along_axis(d2, cand, axis=1).max(axis=1)
        else:
            cand = None
        for r in range(stop - start):
            i = start + r
            if cand is None:
                c = np.flatnonzero(np.arange(n) != i)
            else:
                c = np.flatnonzero(d2[r] <= bound[r] * (1 + 1e-9) + 1e-12)
                c = c[c != i]
            exact = ((x[c] - x[i]) ** 2).sum(axis=1)
            order = np.lexsort((c, exact))[:k]
            indices[i] = c[order]
            distances[i] = exact[order]
    return KnnGraph(indices, distances)


def recall(approx, exact):
    """Mean fraction of each row's true neighbours found by ``approx``."""
    k = exact.k
    hits = 0
    for start in range(0, exact.n, _BLOCK):
        a = approx.indices[start:start + _BLOCK, :k, None]
        e = exact.indices[start:start + _BLOCK, None, :]
        hits += int((a == e).any(axis=1).sum())
    return hits / (exact.n * k)


# --------------------------------------------------------------------------
# k-means


@jit
def _assign_numba(x, centroids_t, labels, dist):
    # centroids transposed to (d, k) so the inner loop runs over contiguous k
    n, d = x.shape
    k = centroids_t.shape[1]
    acc = np.empty(k)
    for i in range(n):
        acc[:] = 0.0
        for t in range(d):
            xt = x[i, t]
            for c in range(k):
                diff = xt - centroids_t[t, c]
                acc[c] += diff * diff
        arg = 0
        best = acc[0]
        for c in range(1, k):
            if acc[c] < best:
                best = acc[c]
                arg = c
        labels[i] = arg
        dist[i] = best


def _assign(x, centroids):
    labels = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0], dtype=np.float64)
    if _accel.use_numba():
        _assign_numba(np.ascontiguousarray(x), np.ascontiguousarray(centroids.T), labels, dist)
        return labels, dist
    c_sq = (centroids * centroids).sum(axis=1)
    for start in range(0, x.shape[0], 4 * _BLOCK):
        blk = x[start:start + 4 * _BLOCK]
        d2 = (blk * blk).sum(axis=1)[:, None] - 2.0 * (blk @ centroids.T) + c_sq[None, :]
        lab = np.argmin(d2, axis=1)
        labels[start:start + blk.shape[0]] = lab
        dist[start:start + blk.shape[0]] = np.maximum(d2[np.arange(blk.shape[0]), lab], 0.0)
    return labels, dist


@jit
def _pp_pick(closest, target):
    # first index whose running sum exceeds target (searchsorted, side="right")
    acc = 0.0
    for i in range(closest.shape[0]):
        acc += closest[i]
        if acc > target:
            return i
    return closest.shape[0] - 1


@jit
def _kmeans_pp_numba(x, first, draws, centers):
    n, d = x.shape
    closest = np.empty(n)
    for i in range(n):
        acc = 0.0
        for t in range(d):
            diff = x[i, t] - x[first, t]
            acc += diff * diff
        closest[i] = acc
    centers[0] = x[first]
    for c in range(1, centers.shape[0]):
        total = 0.0
        for i in range(n):
            total += closest[i]
        if total <= 0:
            idx = min(int(draws[c - 1] * n), n - 1)
        else:
            idx = _pp_pick(closest, draws[c - 1] * total)
        centers[c] = x[idx]
        for i in range(n):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - x[idx, t]
                acc += diff * diff
            if acc < closest[i]:
                closest[i] = acc


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    first = int(rng.integers(n))
    draws = rng.random(k - 1)
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    if _accel.use_numba():
        _kmeans_pp_numba(np.ascontiguousarray(x), first, draws, centers)
        return centers
    centers[0] = x[first]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        running = np.cumsum(closest)
        total = running[-1]
        if total <= 0:
            idx = min(int(draws[c - 1] * n), n - 1)
        else:
            idx = min(int(np.searchsorted(running, draws[c - 1] * total, side="right")), n - 1)
        centers[c] = x[idx]
        np.minimum(closest, ((x - centers[c]) ** 2).sum(axis=1), out=closest)
    return centers


def kmeans(x, k, rng, max_iter=25, tol=1e-4):
    """Lloyd's k-means with k-means++ seeding.

    When the data hold no more than ``k`` distinct rows the distinct rows
    themselves are returned (padded by repetition), which is the exact
    fixed point.  Empty clusters are re-seeded from the point farthest from
    its centroid.

    Returns ``(centroids, labels, inertia)``.
    """
    x = np.asarray(x, dtype=np.float64)
    uniq = np.unique(x, axis=0)
    if uniq.shape[0] <= k:
        centroids = np.concatenate([uniq, np.repeat(uniq[:1], k - uniq.shape[0], axis=0)])
        labels, dist = _assign(x, centroids)
        return centroids, labels, float(dist.sum())
    centroids = _kmeans_pp(x, k, rng)
    labels, dist = _assign(x, centroids)
    inertia = dist.sum()
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=x[:, t], minlength=k)
                         for t in range(x.shape[1])], axis=1)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            far = np.argsort(-dist, kind="stable")
            for slot, c in enumerate(np.flatnonzero(~nonempty)):
                centroids[c] = x[far[slot]]
        labels, dist = _assign(x, centroids)
        new_inertia = dist.sum()
        if inertia > 0 and abs(inertia - new_inertia) / inertia < tol:
            inertia = new_inertia
            break
        inertia = new_inertia
    return centroids, labels, float(inertia)


# --------------------------------------------------------------------------
# IVF-PQ index


@dataclass(frozen=True)
class AnnIndex:
    centroids: np.ndarray      # (n_lists, d_pad)
    codebooks: np.ndarray      # (m, 2**b, d_pad // m)
    list_offsets: np.ndarray   # (n_lists + 1,)
    list_ids: np.ndarray       # (n,) point ids grouped by list
    list_codes: np.ndarray     # (n, m) uint8 codes aligned with list_ids
    d: int
    m: int
    b: int

    @property
    def n(self):
        return self.list_ids.shape[0]

    @property
    def n_lists(self):
        return self.centroids.shape[0]

    @property
    def d_pad(self):
        return self.centroids.shape[1]

    def list_sizes(self):
        return np.diff(self.list_offsets)

    def assignment(self):
        """Coarse cell of every point."""
        out = np.empty(self.n, dtype=np.int64)
        out[self.list_ids] = np.repeat(np.arange(self.n_lists), self.list_sizes())
        return out

    def pad(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] == self.d_pad:
            return x
        return np.concatenate([x, np.zeros((x.shape[0], self.d_pad - x.shape[1]))], axis=1)

    def reconstruct(self):
        """``q(y) = q1(y) + q2(y - q1(y))`` for every point, in id order."""
        ds = self.d_pad // self.m
        out = np.empty((self.n, self.d_pad))
        coarse = self.centroids[np.repeat(np.arange(self.n_lists), self.list_sizes())]
        for j in range(self.m):
            out[self.list_ids, j * ds:(j + 1) * ds] = (
                coarse[:, j * ds:(j + 1) * ds] + self.codebooks[j][self.list_codes[:, j]]
            )
        return out[:, :self.d]


def default_pq_m(d):
    return int(min(32, max(1, d // 2)))


def default_n_lists(n):
    return max(1, int(round(np.sqrt(n))))


def ann_train(data, m=None, b=8, seed=0, n_lists=None, max_iter=25):
    """Train the coarse quantizer and residual product quantizer, then add
    every point to its inverted list."""
    data = as_data_matrix(data)
    n, d = data.shape
    n_lists = default_n_lists(n) if n_lists is None else int(n_lists)
    m = default_pq_m(d) if m is None else int(m)
    if not 1 <= b <= 8:
        raise ValueError(f"bits per code must be in [1, 8] (got {b})")
    if m < 1:
        raise ValueError(f"m must be >= 1 (got {m})")
    if n < n_lists:
        raise ValueError(
            f"{n} points cannot train {n_lists} coarse centroids; lower n_lists to at most {n}"
        )
    d_pad = -(-d // m) * m
    x = np.zeros((n, d_pad))
    x[:, :d] = data
    rng = seeded_rng(seed)
    centroids, assign, _ = kmeans(x, n_lists, rng, max_iter=max_iter)
    resid = x - centroids[assign]
    ds = d_pad // m
    ksub = 1 << b
    codebooks = np.empty((m, ksub, ds))
    codes = np.empty((n, m), dtype=np.uint8)
    for j in range(m):
        sub = resid[:, j * ds:(j + 1) * ds]
        cb, lab, _ = kmeans(sub, ksub, rng, max_iter=max_iter)
        codebooks[j] = cb
        codes[:, j] = lab
    order = np.argsort(assign, kind="stable")
    offsets = np.zeros(n_lists + 1, dtype=np.int64)
    np.cumsum(np.bincount(assign, minlength=n_lists), out=offsets[1:])
    return AnnIndex(
        centroids=centroids,
        codebooks=codebooks,
        list_offsets=offsets,
        list_ids=order.astype(np.int64),
        list_codes=np.ascontiguousarray(codes[order]),
        d=d,
        m=m,
        b=b,
    )


def adc_tables(index, residual):
    """Lookup tables ``T[j, c] = ||r_j - codebook_j[c]||^2`` for one residual."""
    ds = index.d_pad // index.m
    r = residual.reshape(index.m, 1, ds)
    return ((r - index.codebooks) ** 2).sum(axis=2)


def entry_terms(index):
    """Query-independent part of every stored point's ADC distance.

    With ``y ~ c + r`` (coarse centroid plus PQ residual),
    ``||x - c - r||^2 = ||x - c||^2 + (||r||^2 + 2<c, r>) - 2<x, r>``.  The
    bracket depends only on the stored point, and ``-2<x, r>`` splits over
    subspaces into one small table per query, so probing a list never has to
    rebuild residual lookup tables.  Returned in list order.
    """
    ds = index.d_pad // index.m
    cells = np.repeat(np.arange(index.n_lists), index.list_sizes())
    out = np.zeros(index.n)
    for j in range(index.m):
        cw = index.codebooks[j][index.list_codes[:, j]]
        cj = index.centroids[cells, j * ds:(j + 1) * ds]
        out += (cw * (cw + 2.0 * cj)).sum(axis=1)
    return out


def query_tables(index, x):
    """``T[j, s] = -2 <x_j, codebook_j[s]>`` for one padded query."""
    ds = index.d_pad // index.m
    return -2.0 * np.einsum("jsu,ju->js", index.codebooks, x.reshape(index.m, ds))


@jit
def _probe_order(x, centroids):
    nl = centroids.shape[0]
    dc = np.empty(nl)
    for c in range(nl):
        acc = 0.0
        for t in range(x.shape[0]):
            diff = x[t] - centroids[c, t]
            acc += diff * diff
        dc[c] = acc
    return np.argsort(dc, kind="mergesort"), dc


@jit
def _worse(da, ia, db, ib):
    return da > db or (da == db and ia > ib)


@jit
def _heap_push(heap_d, heap_i, size, d, i):
    """Bounded max-heap keyed on (distance, id); returns the new size."""
    cap = heap_d.shape[0]
    if size < cap:
        pos = size
        size += 1
    elif _worse(heap_d[0], heap_i[0], d, i):
        # replace the root and sift down
        pos = 0
        while True:
            child = 2 * pos + 1
            if child >= size:
                break
            if child + 1 < size and _worse(heap_d[child + 1], heap_i[child + 1],
                                           heap_d[child], heap_i[child]):
                child += 1
            if not _worse(heap_d[child], heap_i[child], d, i):
                break
            heap_d[pos] = heap_d[child]
            heap_i[pos] = heap_i[child]
            pos = child
        heap_d[pos] = d
        heap_i[pos] = i
        return size
    else:
        return size
    # sift up
    while pos > 0:
        parent = (pos - 1) // 2
        if not _worse(d, i, heap_d[parent], heap_i[parent]):
            break
        heap_d[pos] = heap_d[parent]
        heap_i[pos] = heap_i[parent]
        pos = parent
    heap_d[pos] = d
    heap_i[pos] = i
    return size


@jit(parallel=True)
def _search_numba(queries, self_ids, centroids, codebooks, offsets, ids, codes, terms, k, tau,
                  out_idx, out_dist):
    nq = queries.shape[0]
    m = codebooks.shape[0]
    ksub = codebooks.shape[1]
    ds = codebooks.shape[2]
    nl = centroids.shape[0]
    for q in prange(nq):
        x = queries[q]
        probes, dc = _probe_order(x, centroids)
        lut = np.empty((m, ksub))
        for j in range(m):
            for s in range(ksub):
                acc = 0.0
                for u in range(ds):
                    acc += x[j * ds + u] * codebooks[j, s, u]
                lut[j, s] = -2.0 * acc
        heap_d = np.empty(k)
        heap_i = np.empty(k, dtype=np.int64)
        size = 0
        done = 0
        t = tau
        while True:
            for p in range(done, t):
                c = probes[p]
                base = dc[c]
                for e in range(offsets[c], offsets[c + 1]):
                    if ids[e] == self_ids[q]:
                        continue
                    acc = base + terms[e]
                    for j in range(m):
                        acc += lut[j, codes[e, j]]
                    size = _heap_push(heap_d, heap_i, size, max(acc, 0.0), ids[e])
            done = t
            if size >= k or t >= nl:
                break
            t = min(nl, 2 * t)
        hd = heap_d[:size]
        hi = heap_i[:size]
        by_id = np.argsort(hi, kind="mergesort")
        hd = hd[by_id]
        hi = hi[by_id]
        order = np.argsort(hd, kind="mergesort")
        for r in range(k):
            if r < size:
                out_idx[q, r] = hi[order[r]]
                out_dist[q, r] = hd[order[r]]
            else:
                out_idx[q, r] = -1
                out_dist[q, r] = np.inf


def _search_numpy(queries, self_ids, index, terms, k, tau, out_idx, out_dist):
    nl = index.n_lists
    offsets = index.list_offsets
    m_range = np.arange(index.m)
    for q in range(queries.shape[0]):
        x = queries[q]
        dc = ((index.centroids - x) ** 2).sum(axis=1)
        probes = np.argsort(dc, kind="stable")
        lut = query_tables(index, x)
        t = tau
        while True:
            ids_parts, d_parts = [], []
            for c in probes[:t]:
                lo, hi = offsets[c], offsets[c + 1]
                if lo == hi:
                    continue
                ids_parts.append(index.list_ids[lo:hi])
                d_parts.append(dc[c] + terms[lo:hi] + lut[m_range, index.list_codes[lo:hi]].sum(axis=1))
            cand_id = np.concatenate(ids_parts) if ids_parts else np.empty(0, np.int64)
            cand_d = np.concatenate(d_parts) if d_parts else np.empty(0)
            keep = cand_id != self_ids[q]
            cand_id, cand_d = cand_id[keep], np.maximum(cand_d[keep], 0.0)
            if cand_id.size >= k or t >= nl:
                break
            t = min(nl, 2 * t)
        order = np.lexsort((cand_id, cand_d))[:k]
        got = order.size
        out_idx[q, :got] = cand_id[order]
        out_dist[q, :got] = cand_d[order]
        out_idx[q, got:] = -1
        out_dist[q, got:] = np.inf


def ann_search(index, data, k, tau, self_ids=None, rerank=False):
    """Approximate ``k``-NN of each row of ``data`` against the index.

    When ``self_ids`` is omitted, row ``i`` of ``data`` is taken to be indexed
    point ``i`` and is excluded from its own result.  Probes are doubled for
    any query whose ``tau`` lists hold fewer than ``k`` candidates.  With
    ``rerank`` the shortlist distances are replaced by exact ones computed
    from ``data`` (only valid when querying the indexed points themselves).
    """
    data = as_data_matrix(data)
    tau = int(tau)
    k = int(k)
    if not 1 <= tau <= index.n_lists:
        raise ValueError(f"tau must be in [1, {index.n_lists}] (got {tau})")
    if not 1 <= k < index.n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={index.n})")
    nq = data.shape[0]
    if self_ids is None:
        self_ids = np.arange(nq, dtype=np.int64)
    self_ids = np.asarray(self_ids, dtype=np.int64)
    queries = np.ascontiguousarray(index.pad(data))
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_dist = np.empty((nq, k))
    terms = entry_terms(index)
    if _accel.use_numba():
        _search_numba(queries, self_ids, np.ascontiguousarray(index.centroids),
                      np.ascontiguousarray(index.codebooks), index.list_offsets,
                      index.list_ids, np.ascontiguousarray(index.list_codes), terms,
                      k, tau, out_idx, out_dist)
    else:
        _search_numpy(queries, self_ids, index, terms, k, tau, out_idx, out_dist)
    if rerank:
        x = data.astype(np.float64)
        for q in range(nq):
            exact = ((x[out_idx[q]] - x[q]) ** 2).sum(axis=1)
            order = np.lexsort((out_idx[q], exact))
            out_idx[q] = out_idx[q][order]
            out_dist[q] = exact[order]
    return KnnGraph(out_idx, out_dist)


def knn_graph(data, k, mode="exact", tau=10, seed=0, n_lists=None, rerank=False):
    """Neighbour graph used by the affinity stage."""
    if mode == "exact":
        return knn_exact(data, k)
    if mode == "ivfpq":
        n = np.asarray(data).shape[0]
        index = ann_train(data, seed=seed, n_lists=n_lists)
        return ann_search(index, data, k, min(tau, index.n_lists), rerank=rerank)
    raise ValueError(f"unknown knn mode {mode!r}")


# --------------------------------------------------------------------------
# persistence
#
# Little-endian layout, version 1:
#   8s   magic  b"BHIVFPQ\0"
#   u32  version
#   u64  n
#   u32  d, d_pad, n_lists, m, b
#   f64  centroids   [n_lists, d_pad]
#   f64  codebooks   [m, 2**b, d_pad/m]
#   i64  list_offsets[n_lists + 1]
#   i64  list_ids    [n]
#   u8   list_codes  [n, m]

INDEX_MAGIC = b"BHIVFPQ\0"
INDEX_VERSION = 1
_HEADER = struct.Struct("<8sIQIIIII")


def save_index(index, path):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.n, index.d, index.d_pad,
                              index.n_lists, index.m, index.b))
        fh.write(np.ascontiguousarray(index.centroids, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(index.codebooks, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(index.list_offsets, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(index.list_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(index.list_codes, dtype=np.uint8).tobytes())


def load_index(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, d, d_pad, n_lists, m, b = _HEADER.unpack_from(raw)
    if magic != INDEX_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    ds = d_pad // m
    blocks = [
        ("<f8", (n_lists, d_pad)),
        ("<f8", (m, 1 << b, ds)),
        ("<i8", (n_lists + 1,)),
        ("<i8", (n,)),
        ("u1", (n, m)),
    ]
    pos = _HEADER.size
    arrays = []
    for dt, shape in blocks:
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dt).itemsize
        if pos + nbytes > len(raw):
            raise ValueError(f"{path}: truncated at byte {pos}")
        arrays.append(np.frombuffer(raw, dtype=dt, count=count, offset=pos).reshape(shape).copy())
        pos += nbytes
    centroids, codebooks, offsets, ids, codes = arrays
    return AnnIndex(centroids.astype(np.float64), codebooks.astype(np.float64),
                    offsets.astype(np.int64), ids.astype(np.int64), codes, d, m, b)
