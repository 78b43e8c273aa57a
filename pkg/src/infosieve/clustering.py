"""k-means family, Hungarian assignment, and discovery accuracy accounting.

Evaluation follows the shared-matching protocol: one Hungarian matching
is computed over the whole unlabeled set and the per-subset (known and
novel) accuracies reuse it, so the three numbers are mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernels


@dataclass
class ClusterAssignment:
    centroids: np.ndarray  # [K, d]
    assign: np.ndarray  # [N] cluster ids
    objective: float  # sum of squared distances
    n_iter: int = 0
    objective_history: list = field(default_factory=list)
    cluster_classes: list | None = None  # class owning each pinned cluster, if any


def _kpp_init(x: np.ndarray, k: int, rng: np.random.Generator,
              seeds: np.ndarray | None = None) -> np.ndarray:
    """k-means++ seeding, optionally continuing from fixed seed centroids."""
    centroids = [] if seeds is None else [c for c in seeds]
    if not centroids:
        centroids.append(x[rng.integers(len(x))])
    while len(centroids) < k:
        _, sqd = _kernels.nearest_centroid(x, np.asarray(centroids))
        total = sqd.sum()
        if total <= 0:
            centroids.append(x[rng.integers(len(x))])
            continue
        centroids.append(x[rng.choice(len(x), p=sqd / total)])
    return np.asarray(centroids[len(seeds) if seeds is not None else 0:])


def _fix_empty(x, centroids, assign, sqd):
    """Re-seed each empty cluster from the point farthest from its centroid."""
    counts = np.bincount(assign, minlength=len(centroids))
    taken: set[int] = set()
    for k in np.flatnonzero(counts == 0):
        order = np.argsort(-sqd, kind="stable")
        far = next(int(i) for i in order if int(i) not in taken)
        taken.add(far)
        centroids[k] = x[far]
    return centroids


def kmeans(x: np.ndarray, k: int, init_seed: int = 0, max_iter: int = 100,
           tol: float = 0.0, n_init: int = 1) -> ClusterAssignment:
    """k-means++ seeding plus Lloyd iterations (the canonical single run).

    ``n_init`` > 1 keeps the best of several seeded runs by objective;
    the default stays at one run, which is what the baseline rows mean.
    """
    best = None
    for restart in range(max(1, n_init)):
        cand = _kmeans_once(x, k, init_seed + restart, max_iter, tol)
        if best is None or cand.objective < best.objective:
            best = cand
    return best


def _kmeans_once(x: np.ndarray, k: int, init_seed: int, max_iter: int,
                 tol: float) -> ClusterAssignment:
    """One Lloyd run from a k-means++ start; objective never increases."""
    x = np.asarray(x, dtype=np.float64)
    if k < 1 or k > len(x):
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={len(x)}")
    rng = np.random.default_rng(init_seed)
    centroids = _kpp_init(x, k, rng)
    assign = np.full(len(x), -1, dtype=np.int64)
    history: list[float] = []
    for it in range(max_iter):
        new_assign, sqd = _kernels.nearest_centroid(x, centroids)
        obj = float(sqd.sum())
        history.append(obj)
        if np.array_equal(new_assign, assign) or (
            len(history) > 1 and history[-2] - obj <= tol
        ):
            assign = new_assign
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        centroids = _fix_empty(x, centroids, assign, sqd)
    return ClusterAssignment(centroids, assign, history[-1], len(history), history)


def ss_kmeans(x: np.ndarray, labeled: Mapping[int, int], k: int, seed: int = 0,
              max_iter: int = 100, n_init: int = 10) -> ClusterAssignment:
    """Semi-supervised k-means: labeled points stay pinned to their class cluster.

    Clusters 0..C-1 own the known classes in sorted order; remaining
    clusters are seeded k-means++-style from the unlabeled points.  The
    best of ``n_init`` restarts (by objective) is returned.
    """
    best = None
    for restart in range(max(1, n_init)):
        cand = _ss_kmeans_once(x, labeled, k, seed + restart, max_iter)
        if best is None or cand.objective < best.objective:
            best = cand
    return best


def _ss_kmeans_once(x: np.ndarray, labeled: Mapping[int, int], k: int, seed: int,
                    max_iter: int) -> ClusterAssignment:
    x = np.asarray(x, dtype=np.float64)
    classes = sorted(set(labeled.values()))
    if len(classes) > k:
        raise ValueError(f"{len(classes)} labeled classes exceed K={k}")
    if k > len(x):
        raise ValueError(f"need K <= N, got K={k}, N={len(x)}")
    class_idx = {c: j for j, c in enumerate(classes)}
    pinned = np.full(len(x), -1, dtype=np.int64)
    for i, c in labeled.items():
        pinned[i] = class_idx[c]
    free = np.flatnonzero(pinned < 0)

    seeds = np.array([x[[i for i in labeled if class_idx[labeled[i]] == j]].mean(axis=0)
                      for j in range(len(classes))])
    rng = np.random.default_rng(seed)
    if k > len(classes):
        if len(free) == 0:
            raise ValueError("no unlabeled points to seed the extra clusters")
        extra = _kpp_init(x[free], k, rng, seeds=seeds)
        centroids = np.vstack([seeds, extra])
    else:
        centroids = seeds

    assign = pinned.copy()
    history: list[float] = []
    for it in range(max_iter):
        near, sqd_near = _kernels.nearest_centroid(x, centroids)
        new_assign = np.where(pinned >= 0, pinned, near)
        diff = x - centroids[new_assign]
        obj = float((diff * diff).sum())
        history.append(obj)
        if np.array_equal(new_assign, assign) and it > 0:
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        # only free clusters can be empty; re-seed from farthest unlabeled point
        counts = np.bincount(assign, minlength=k)
        if (counts[len(classes):] == 0).any() and len(free):
            far_order = free[np.argsort(-sqd_near[free], kind="stable")]
            taken: set[int] = set()
            for j in np.flatnonzero(counts == 0):
                if j < len(classes):
                    continue
                fi = next(int(i) for i in far_order if int(i) not in taken)
                taken.add(fi)
                centroids[j] = x[fi]
    return ClusterAssignment(centroids, assign, history[-1], len(history), history,
                             cluster_classes=classes)


def balanced_kmeans(x: np.ndarray, k: int, seed: int = 0,
                    max_iter: int = 100) -> ClusterAssignment:
    """k-means with near-equal cluster sizes via greedy capped assignment.

    Target sizes differ by at most one (N mod K clusters get the extra
    point), so every size sits inside the ceil(N/K) +- 1 band.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
    caps = np.full(k, n // k, dtype=np.int64)
    caps[: n % k] += 1
    rng = np.random.default_rng(seed)
    centroids = _kpp_init(x, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        sq = (
            np.sum(x * x, axis=1)[:, None]
            + np.sum(centroids * centroids, axis=1)[None, :]
            - 2.0 * (x @ centroids.T)
        )
        np.maximum(sq, 0.0, out=sq)
        order = np.argsort(sq, axis=None, kind="stable")
        new_assign = np.full(n, -1, dtype=np.int64)
        room = caps.copy()
        placed = 0
        for flat in order:
            i, j = divmod(int(flat), k)
            if new_assign[i] < 0 and room[j] > 0:
                new_assign[i] = j
                room[j] -= 1
                placed += 1
                if placed == n:
                    break
        obj = float(sq[np.arange(n), new_assign].sum())
        history.append(obj)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centroids[j] = x[assign == j].mean(axis=0)
    return ClusterAssignment(centroids, assign, history[-1], len(history), history)


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Optimal one-to-one assignment minimising total cost.

    Rectangular matrices are padded square with zeros; only real cells
    are reported.  Returns (row indices, matched column per row, total).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"cost must be a non-empty 2-D matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    s = max(n, m)
    padded = np.zeros((s, s))
    padded[:n, :m] = cost
    row_to_col = _kernels.hungarian_square(padded)
    rows = np.array([i for i in range(n) if row_to_col[i] < m], dtype=np.int64)
    cols = row_to_col[rows]
    return rows, cols, float(cost[rows, cols].sum())


@dataclass
class GcdMetrics:
    acc_all: float
    acc_known: float
    acc_novel: float
    matching: dict  # cluster id -> class id
    n_all: int = 0
    n_known: int = 0
    n_novel: int = 0

    def as_dict(self) -> dict:
        return {
            "acc_all": self.acc_all,
            "acc_known": self.acc_known,
            "acc_novel": self.acc_novel,
            "n_all": self.n_all,
            "n_known": self.n_known,
            "n_novel": self.n_novel,
        }


def gcd_accuracy(pred_clusters, gt_labels, known_classes,
                 labeled_idx=None) -> GcdMetrics:
    """All/Known/Novel accuracy under one shared cluster-to-class matching.

    ``labeled_idx`` rows are excluded first; the matching maximises total
    agreement over everything that remains.  Known covers samples whose
    class is in ``known_classes``, novel the rest.  Empty subsets score 0.
    """
    pred = np.asarray(pred_clusters)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError(f"{pred.shape} predictions vs {gt.shape} labels")
    keep = np.ones(len(pred), dtype=bool)
    if labeled_idx is not None and len(labeled_idx):
        keep[np.asarray(labeled_idx, dtype=np.int64)] = False
    pred, gt = pred[keep], gt[keep]
    if len(pred) == 0:
        raise ValueError("no unlabeled samples to score")

    clusters = np.unique(pred)
    class_ids = np.unique(gt)
    counts = np.zeros((len(clusters), len(class_ids)))
    cluster_pos = {c: i for i, c in enumerate(clusters)}
    class_pos = {c: j for j, c in enumerate(class_ids)}
    for p, t in zip(pred, gt):
        counts[cluster_pos[p], class_pos[t]] += 1

    rows, cols, _ = hungarian(-counts)
    matching = {int(clusters[r]): int(class_ids[c]) for r, c in zip(rows, cols)}
    mapped = np.array([matching.get(int(p), None) is not None and matching[int(p)] == t
                       for p, t in zip(pred, gt)])

    known = np.isin(gt, list(known_classes))
    novel = ~known

    def acc(mask):
        return float(mapped[mask].mean()) if mask.any() else 0.0

    return GcdMetrics(
        acc_all=float(mapped.mean()),
        acc_known=acc(known),
        acc_novel=acc(novel),
        matching=matching,
        n_all=int(len(pred)),
        n_known=int(known.sum()),
        n_novel=int(novel.sum()),
    )
