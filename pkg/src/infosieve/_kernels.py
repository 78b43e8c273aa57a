"""Hot numeric kernels in two flavours: numba @njit loops and pure numpy.

Public names (``pairwise_dist``, ``pairwise_dist_grad``, ``nearest_centroid``,
``hungarian_square``) are bound at import time to the flavour selected by
:mod:`infosieve.backend`.  Both flavours implement identical math; see
``benchmarks/bench_backends.py`` for a speed comparison.
"""

import numpy as np

from .backend import use_numba


# ---------------------------------------------------------------------------
# pure-numpy flavour
# ---------------------------------------------------------------------------

def _np_pairwise_dist(a, b):
    """Euclidean distance matrix D[i, j] = |a_i - b_j| for row vectors.

    The Gram-matrix identity cancels catastrophically for near-coincident
    rows (a self-distance would come out ~1e-8, defeating the zero-distance
    gradient guard), so pairs in the cancellation zone are recomputed with
    the direct difference.
    """
    x2 = np.sum(a * a, axis=1)
    y2 = np.sum(b * b, axis=1)
    sq = x2[:, None] + y2[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    close = sq <= 1e-10 * (x2[:, None] + y2[None, :])
    if close.any():
        bi, bj = np.nonzero(close)
        diff = a[bi] - b[bj]
        sq[bi, bj] = np.sum(diff * diff, axis=1)
    return np.sqrt(sq)


def _np_pairwise_dist_grad(a, b, dist, gout):
    """Backward pass of _np_pairwise_dist; zero subgradient where dist == 0."""
    w = np.where(dist > 0.0, gout / np.where(dist > 0.0, dist, 1.0), 0.0)
    ga = np.sum(w, axis=1)[:, None] * a - w @ b
    gb = np.sum(w, axis=0)[:, None] * b - w.T @ a
    return ga, gb


def _np_nearest_centroid(x, c):
    """Index of the nearest centroid per point plus the squared distance."""
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(c * c, axis=1)[None, :]
        - 2.0 * (x @ c.T)
    )
    np.maximum(sq, 0.0, out=sq)
    idx = np.argmin(sq, axis=1)
    return idx.astype(np.int64), sq[np.arange(len(x)), idx]


def _np_hungarian_square(cost):
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting path method with row/column potentials, O(n^3).
    Index 0 of the working arrays is a virtual column. Returns row_to_col.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: 1-based row matched to col j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col


# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------

if use_numba():
    from numba import njit

    # reassoc/contract let LLVM vectorise the reductions without the nan/inf
    # assumptions of full fastmath (overflow must still propagate to the
    # non-finite-loss abort path); the reduction order is fixed per build
    _FM = {"reassoc", "contract"}

    @njit(cache=True, fastmath=_FM)
    def _nb_pairwise_dist(a, b):
        na, d = a.shape
        nb = b.shape[0]
        out = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                s = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    s += diff * diff
                out[i, j] = np.sqrt(s)
        return out

    @njit(cache=True, fastmath=_FM)
    def _nb_pairwise_dist_grad(a, b, dist, gout):
        # fused weight computation; the rank-d products go through BLAS
        na = a.shape[0]
        nb = b.shape[0]
        w = np.zeros((na, nb))
        row = np.zeros(na)
        col = np.zeros(nb)
        for i in range(na):
            for j in range(nb):
                if dist[i, j] > 0.0:
                    wij = gout[i, j] / dist[i, j]
                    w[i, j] = wij
                    row[i] += wij
                    col[j] += wij
        ga = row.reshape(-1, 1) * a - np.dot(w, b)
        gb = col.reshape(-1, 1) * b - np.dot(w.T.copy(), a)
        return ga, gb

    @njit(cache=True, fastmath=_FM)
    def _nb_nearest_centroid(x, c):
        n, d = x.shape
        k = c.shape[0]
        idx = np.empty(n, dtype=np.int64)
        sqd = np.empty(n)
        for i in range(n):
            best = np.inf
            arg = 0
            for j in range(k):
                s = 0.0
                for m in range(d):
                    diff = x[i, m] - c[j, m]
                    s += diff * diff
                if s < best:
                    best = s
                    arg = j
            idx[i] = arg
            sqd[i] = best
        return idx, sqd

    @njit(cache=True)
    def _nb_hungarian_square(cost):
        n = cost.shape[0]
        u = np.zeros(n + 1)
        v = np.zeros(n + 1)
        p = np.zeros(n + 1, dtype=np.int64)
        way = np.zeros(n + 1, dtype=np.int64)
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            minv = np.full(n + 1, np.inf)
            used = np.zeros(n + 1, dtype=np.bool_)
            while True:
                used[j0] = True
                i0 = p[j0]
                delta = np.inf
                j1 = 0
                for j in range(1, n + 1):
                    if not used[j]:
                        cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(n + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if p[j0] == 0:
                    break
            while j0 != 0:
                j1 = way[j0]
                p[j0] = p[j1]
                j0 = j1
        row_to_col = np.empty(n, dtype=np.int64)
        for j in range(1, n + 1):
            row_to_col[p[j] - 1] = j - 1
        return row_to_col

    pairwise_dist = _nb_pairwise_dist
    pairwise_dist_grad = _nb_pairwise_dist_grad
    nearest_centroid = _nb_nearest_centroid
    hungarian_square = _nb_hungarian_square
else:
    pairwise_dist = _np_pairwise_dist
    pairwise_dist_grad = _np_pairwise_dist_grad
    nearest_centroid = _np_nearest_centroid
    hungarian_square = _np_hungarian_square
