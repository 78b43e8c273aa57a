"""Synthetic hierarchical datasets, discovery splits, views, and embedding files.

The generator draws a complete binary tree of categories; every tree node
owns a random direction whose magnitude shrinks geometrically with depth,
and a sample is the sum of directions along its leaf's root path plus
Gaussian noise.  With zero noise the ground-truth tree is exactly
recoverable, which gives the tree tooling a known answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trees import TreeNode, trie_from_codes


@dataclass
class HierDataset:
    features: np.ndarray  # [N, D]
    labels: np.ndarray  # [N] int category ids
    gt_tree: TreeNode | None
    seed: int | None
    noise_sigma: float
    label_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise ValueError("features must be [N, D] with one label per row")
        if not np.isfinite(self.features).all():
            raise ValueError("non-finite feature entries")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def has_gt_tree(self) -> bool:
        return self.gt_tree is not None


@dataclass
class GcdSplit:
    known_classes: frozenset
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray

    def __post_init__(self):
        self.labeled_idx = np.asarray(sorted(self.labeled_idx), dtype=np.int64)
        self.unlabeled_idx = np.asarray(sorted(self.unlabeled_idx), dtype=np.int64)

    def check(self, labels: np.ndarray) -> None:
        lab, unl = set(self.labeled_idx), set(self.unlabeled_idx)
        if lab & unl:
            raise ValueError("labeled and unlabeled index sets overlap")
        if lab | unl != set(range(len(labels))):
            raise ValueError("split does not partition the dataset")
        bad = [i for i in self.labeled_idx if labels[i] not in self.known_classes]
        if bad:
            raise ValueError(f"labeled samples {bad} belong to unknown classes")


def gen_hier_dataset(seed: int, depth: int, per_leaf: int, dim: int,
                     noise_sigma: float, level_scale: float = 0.7) -> HierDataset:
    """Hierarchical Gaussian dataset over a complete binary category tree."""
    if depth < 1 or per_leaf < 1:
        raise ValueError(f"need depth >= 1 and per_leaf >= 1, got {depth}, {per_leaf}")
    if dim < depth:
        raise ValueError(f"need dim >= depth, got dim={dim}, depth={depth}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    n_leaves = 2**depth

    # one direction per tree node, level by level; depth-L nodes scale as level_scale^L
    level_vecs = []
    for level in range(depth + 1):
        vecs = rng.normal(size=(2**level, dim))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        level_vecs.append(vecs * level_scale**level)

    leaf_means = np.zeros((n_leaves, dim))
    for leaf in range(n_leaves):
        for level in range(depth + 1):
            leaf_means[leaf] += level_vecs[level][leaf >> (depth - level)]

    labels = np.repeat(np.arange(n_leaves), per_leaf)
    noise = rng.normal(0.0, noise_sigma, size=(n_leaves * per_leaf, dim)) if noise_sigma else 0.0
    features = leaf_means[labels] + noise

    gt_tree = trie_from_codes({c: format(c, f"0{depth}b") for c in range(n_leaves)})
    return HierDataset(features, labels, gt_tree, seed, noise_sigma)


def gcd_split(ds: HierDataset, known_class_frac: float, labeled_frac: float,
              seed: int) -> GcdSplit:
    """Pick known classes, label a fraction of each, leave the rest unlabeled."""
    if not (0 < known_class_frac <= 1 and 0 < labeled_frac <= 1):
        raise ValueError("fractions must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    classes = ds.classes
    n_known = int(known_class_frac * len(classes))
    if n_known == 0:
        raise ValueError("known_class_frac selects zero known classes")
    known = frozenset(int(c) for c in rng.permutation(classes)[:n_known])

    labeled: list[int] = []
    for c in sorted(known):
        idx = np.flatnonzero(ds.labels == c)
        n_lab = int(labeled_frac * len(idx))
        if n_lab == 0:
            raise ValueError(
                f"class {c}: labeled_frac={labeled_frac} rounds to zero labeled samples"
            )
        labeled.extend(int(i) for i in rng.choice(idx, size=n_lab, replace=False))

    unlabeled = sorted(set(range(ds.n)) - set(labeled))
    if not unlabeled:
        raise ValueError("no discovery task: every sample would be labeled")
    split = GcdSplit(known, np.array(labeled), np.array(unlabeled))
    split.check(ds.labels)
    return split


def augment(x: np.ndarray, seed: int, sigma_aug: float, drop_frac: float) -> np.ndarray:
    """Gaussian-noise view with a fixed count of zeroed coordinates."""
    if not (0 <= drop_frac < 1):
        raise ValueError("drop_frac must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    out = x + rng.normal(0.0, sigma_aug, size=x.shape) if sigma_aug else x.copy()
    n_drop = int(round(drop_frac * x.shape[-1]))
    if n_drop:
        drop = rng.choice(x.shape[-1], size=n_drop, replace=False)
        out[..., drop] = 0.0
    return out


# ---------------------------------------------------------------------------
# embedding file format: line 1 "emb v1 <N> <D>", then "id,label,f0,...,f{D-1}"
# ---------------------------------------------------------------------------

def save_embedding_file(path, ds: HierDataset) -> None:
    names = ds.label_names
    with open(path, "w") as fh:
        fh.write(f"emb v1 {ds.n} {ds.dim}\n")
        for i in range(ds.n):
            token = names[ds.labels[i]] if names else str(int(ds.labels[i]))
            feats = ",".join(repr(float(v)) for v in ds.features[i])
            fh.write(f"{i},{token},{feats}\n")


def load_embedding_file(path) -> HierDataset:
    """Read an embedding file; the result carries no ground-truth tree."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty embedding file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "emb":
        raise ValueError(f"{path}: malformed header {lines[0]!r}")
    if head[1] != "v1":
        raise ValueError(f"{path}: unknown header version {head[1]!r} (expected v1)")
    n, d = int(head[2]), int(head[3])
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: header promises {n} rows, found {len(lines) - 1}")

    ids, tokens, rows = [], [], []
    for ln_no, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 2 + d:
            raise ValueError(
                f"{path}:{ln_no}: expected {2 + d} fields (id,label,{d} floats), "
                f"found {len(parts)}"
            )
        ids.append(parts[0])
        tokens.append(parts[1])
        try:
            rows.append([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{ln_no}: bad float field ({exc})") from exc
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")

    if all(t.lstrip("-").isdigit() for t in tokens):
        labels = np.array([int(t) for t in tokens])
        names = None
    else:
        names = sorted(set(tokens))
        index = {t: i for i, t in enumerate(names)}
        labels = np.array([index[t] for t in tokens])
    return HierDataset(np.array(rows), labels, gt_tree=None, seed=None,
                       noise_sigma=0.0, label_names=names)
