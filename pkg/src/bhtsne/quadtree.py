"""2-D quadtree over the embedding and the Barnes-Hut traversal.

The tree is built from Morton (Z-order) keys: sorting the keys places every
cell's points in one contiguous run, so a cell is just ``[start, end)`` in
the sorted order and its children are the sub-runs sharing the next two key
bits.  Traversal then walks queries in the same Morton order, which keeps
neighbouring queries on neighbouring cells.
"""

from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import jit, prange

LEVELS = 30  # bits per axis; cells finer than span / 2**30 become buckets
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_M8 = np.uint64(0x00FF00FF00FF00FF)
_M16 = np.uint64(0x0000FFFF0000FFFF)


def _spread_bits(v):
    v = v.astype(np.uint64) & np.uint64(0xFFFFFFFF)
    v = (v | (v << np.uint64(16))) & _M16
    v = (v | (v << np.uint64(8))) & _M8
    v = (v | (v << np.uint64(4))) & _M4
    v = (v | (v << np.uint64(2))) & _M2
    v = (v | (v << np.uint64(1))) & _M1
    return v


def morton_keys(coords, origin, side, levels=LEVELS):
    """Interleaved cell coordinates (x in even bits, y in odd bits)."""
    scale = float(1 << levels)
    cells = np.floor((np.asarray(coords, dtype=np.float64) - origin) / side * scale)
    cells = np.clip(cells, 0, scale - 1).astype(np.uint64)
    return _spread_bits(cells[:, 0]) | (_spread_bits(cells[:, 1]) << np.uint64(1))


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float


@dataclass(frozen=True)
class QuadTree:
    """Flat node arrays; node 0 is the root, nodes are stored level by level."""

    box: BoundingBox           # padded square root cell
    order: np.ndarray          # sorted position -> point id
    position: np.ndarray       # point id -> sorted position
    points: np.ndarray         # coordinates in sorted order (float64)
    children: np.ndarray       # (m, 4), -1 for an empty quadrant
    start: np.ndarray
    end: np.ndarray
    center: np.ndarray         # (m, 2) centre of mass
    radius: np.ndarray         # half side of the cell
    level: np.ndarray
    is_leaf: np.ndarray

    @property
    def n_nodes(self):
        return self.start.shape[0]

    @property
    def count(self):
        return self.end - self.start

    @property
    def depth(self):
        return int(self.level.max())

    def leaf_point(self, node):
        """Point ids held by ``node`` (a leaf) in sorted order."""
        return self.order[self.start[node]:self.end[node]]


def bounding_box(coords):
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    return BoundingBox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def _centers(pts, start, end):
    # runs on one level are sorted and disjoint, so the interleaved
    # [s0, e0, s1, e1, ...] reduction only ever walks each point once
    padded = np.concatenate([pts, np.zeros((1, 2))])
    bounds = np.column_stack([start, end]).ravel()
    sums = np.add.reduceat(padded, bounds, axis=0)[::2]
    return sums / (end - start)[:, None]


def build(coords):
    """Quadtree over ``coords`` (n x 2). Rejects non-finite input."""
    y = np.asarray(coords, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2 or y.shape[0] < 1:
        raise ValueError(f"coords must be n x 2 with n >= 1, got {y.shape}")
    bad = ~np.isfinite(y).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite coordinate at point {int(np.argmax(bad))}")
    n = y.shape[0]
    tight = bounding_box(y)
    span = max(tight.max_x - tight.min_x, tight.max_y - tight.min_y)
    half = 0.5 * span + 1e-5 * span if span > 0 else 1.0
    cx = 0.5 * (tight.min_x + tight.max_x)
    cy = 0.5 * (tight.min_y + tight.max_y)
    origin = np.array([cx - half, cy - half])
    keys = morton_keys(y, origin, 2.0 * half)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    pts = np.ascontiguousarray(y[order])

    starts_all, ends_all, levels_all, leaf_all = [], [], [], []
    parent_links = []  # (parent ids, slots, child ids) per level
    seg_start = np.array([0], dtype=np.int64)
    seg_end = np.array([n], dtype=np.int64)
    next_id = 0
    level = 0
    while seg_start.size:
        ids = np.arange(next_id, next_id + seg_start.size)
        next_id += seg_start.size
        size = seg_end - seg_start
        leaf = (size == 1) | (level == LEVELS) | (sk[seg_start] == sk[seg_end - 1])
        starts_all.append(seg_start)
        ends_all.append(seg_end)
        levels_all.append(np.full(seg_start.size, level, dtype=np.int64))
        leaf_all.append(leaf)
        inner = ~leaf
        if not inner.any():
            break
        p_start, p_end, p_ids = seg_start[inner], seg_end[inner], ids[inner]
        shift = np.uint64(2 * (LEVELS - level - 1))
        prefix = sk >> shift
        change = np.empty(n, dtype=bool)
        change[0] = True
        change[1:] = prefix[1:] != prefix[:-1]
        marks = np.zeros(n + 1, dtype=np.int64)
        np.add.at(marks, p_start, 1)
        np.add.at(marks, p_end, -1)
        inside = np.cumsum(marks[:-1]) > 0
        c_start = np.flatnonzero(change & inside)
        owner = np.searchsorted(p_start, c_start, side="right") - 1
        c_end = np.empty_like(c_start)
        same = owner[1:] == owner[:-1]
        c_end[:-1] = np.where(same, c_start[1:], p_end[owner[:-1]])
        c_end[-1] = p_end[owner[-1]]
        slots = ((sk[c_start] >> shift) & np.uint64(3)).astype(np.int64)
        parent_links.append((p_ids[owner], slots, np.arange(next_id, next_id + c_start.size)))
        seg_start, seg_end = c_start, c_end
        level += 1

    start = np.concatenate(starts_all)
    end = np.concatenate(ends_all)
    lev = np.concatenate(levels_all)
    is_leaf = np.concatenate(leaf_all)
    m = start.size
    children = np.full((m, 4), -1, dtype=np.int64)
    for parents, slots, kids in parent_links:
        children[parents, slots] = kids
    center = np.concatenate([_centers(pts, s, e) for s, e in zip(starts_all, ends_all)])
    position = np.empty(n, dtype=np.int64)
    position[order] = np.arange(n)
    return QuadTree(
        box=BoundingBox(float(origin[0]), float(origin[1]),
                        float(origin[0] + 2 * half), float(origin[1] + 2 * half)),
        order=order.astype(np.int64),
        position=position,
        points=pts,
        children=children,
        start=start,
        end=end,
        center=center,
        radius=half / np.exp2(lev.astype(np.float64)),
        level=lev,
        is_leaf=is_leaf,
    )


# --------------------------------------------------------------------------
# traversal


@jit
def _exact_pair(qx, qy, px, py, acc):
    dx = qx - px
    dy = qy - py
    w = 1.0 / (1.0 + dx * dx + dy * dy)
    acc[0] += w * w * dx
    acc[1] += w * w * dy
    acc[2] += w


@jit
def _traverse_one(qx, qy, qpos, theta2, children, start, end, center, radius2, is_leaf,
                  points, stack, acc):
    acc[0] = 0.0
    acc[1] = 0.0
    acc[2] = 0.0
    top = 1
    stack[0] = 0
    while top > 0:
        top -= 1
        node = stack[top]
        s = start[node]
        e = end[node]
        if is_leaf[node]:
            for p in range(s, e):
                if p != qpos:
                    _exact_pair(qx, qy, points[p, 0], points[p, 1], acc)
            continue
        dx = qx - center[node, 0]
        dy = qy - center[node, 1]
        d2 = dx * dx + dy * dy
        if not (s <= qpos < e) and radius2[node] < theta2 * d2:
            cnt = e - s
            w = 1.0 / (1.0 + d2)
            acc[0] += cnt * w * w * dx
            acc[1] += cnt * w * w * dy
            acc[2] += cnt * w
            continue
        for c in range(4):
            child = children[node, c]
            if child >= 0:
                stack[top] = child
                top += 1


@jit(parallel=True)
def _traverse_numba(queries, qpos, theta2, children, start, end, center, radius2, is_leaf,
                    points, stack_size, force, z):
    for i in prange(queries.shape[0]):
        stack = np.empty(stack_size, dtype=np.int64)
        acc = np.zeros(3)
        _traverse_one(queries[i, 0], queries[i, 1], qpos[i], theta2, children, start, end,
                      center, radius2, is_leaf, points, stack, acc)
        force[i, 0] = acc[0]
        force[i, 1] = acc[1]
        z[i] = acc[2]


def _traverse_numpy(queries, qpos, theta2, tree, force, z):
    nq = queries.shape[0]
    radius2 = tree.radius ** 2
    q = np.arange(nq)
    node = np.zeros(nq, dtype=np.int64)
    fx = np.zeros(nq)
    fy = np.zeros(nq)
    zz = np.zeros(nq)

    def add(qi, dx, dy, cnt):
        d2 = dx * dx + dy * dy
        w = 1.0 / (1.0 + d2)
        np.add.at(fx, qi, cnt * w * w * dx)
        np.add.at(fy, qi, cnt * w * w * dy)
        np.add.at(zz, qi, cnt * w)

    while q.size:
        s = tree.start[node]
        e = tree.end[node]
        leaf = tree.is_leaf[node]
        if leaf.any():
            lq, ls, le = q[leaf], s[leaf], e[leaf]
            sizes = le - ls
            pq = np.repeat(lq, sizes)
            pp = np.repeat(ls - np.cumsum(sizes) + sizes, sizes) + np.arange(sizes.sum())
            keep = pp != qpos[pq]
            pq, pp = pq[keep], pp[keep]
            add(pq, queries[pq, 0] - tree.points[pp, 0], queries[pq, 1] - tree.points[pp, 1], 1.0)
        inner = ~leaf
        q, node, s, e = q[inner], node[inner], s[inner], e[inner]
        dx = queries[q, 0] - tree.center[node, 0]
        dy = queries[q, 1] - tree.center[node, 1]
        contains = (s <= qpos[q]) & (qpos[q] < e)
        far = ~contains & (radius2[node] < theta2 * (dx * dx + dy * dy))
        add(q[far], dx[far], dy[far], (e - s)[far].astype(np.float64))
        q, node = q[~far], node[~far]
        kids = tree.children[node]
        valid = kids >= 0
        q = np.repeat(q, valid.sum(axis=1))
        node = kids[valid]
    force[:, 0] = fx
    force[:, 1] = fy
    z[:] = zz


def traverse(tree, queries, theta, query_positions):
    """Barnes-Hut sums for a batch of queries.

    ``query_positions[i]`` is the sorted position of the tree point that
    query ``i`` coincides with (its own leaf entry is skipped), or -1 for a
    free query.  Returns ``(force, z)`` with ``force[i] = sum N_c (y - y_c) /
    (1 + D^2)^2`` and ``z[i] = sum N_c / (1 + D^2)`` over accepted cells.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    qpos = np.ascontiguousarray(query_positions, dtype=np.int64)
    nq = queries.shape[0]
    force = np.empty((nq, 2))
    z = np.empty(nq)
    theta2 = float(theta) ** 2
    if _accel.use_numba():
        _traverse_numba(queries, qpos, theta2, tree.children, tree.start, tree.end,
                        tree.center, tree.radius ** 2, tree.is_leaf, tree.points,
                        4 * (tree.depth + 2), force, z)
    else:
        _traverse_numpy(queries, qpos, theta2, tree, force, z)
    return force, z


def traverse_all(tree, theta):
    """Barnes-Hut sums for every tree point, returned in point-id order."""
    n = tree.points.shape[0]
    force_sorted, z_sorted = traverse(tree, tree.points, theta, np.arange(n))
    force = np.empty_like(force_sorted)
    z = np.empty_like(z_sorted)
    force[tree.order] = force_sorted
    z[tree.order] = z_sorted
    return force, z


def bh_traverse(tree, query, theta, point_id=None):
    """Single-query traversal; ``point_id`` names the tree point to skip."""
    if not theta >= 0:
        raise ValueError(f"theta must be >= 0 (got {theta})")
    pos = -1 if point_id is None else int(tree.position[point_id])
    force, z = traverse(tree, np.asarray(query, dtype=np.float64).reshape(1, 2), theta, [pos])
    return force[0], float(z[0])
