"""Contrastive, length, binarity and classification losses plus their mixture.

Contrastive similarity is negative Euclidean distance over temperature on
a full anchor-by-candidate score matrix.  The paired-view loss is the
symmetric cross-entropy against the diagonal; the supervised variant
targets same-label candidates (self excluded) while keeping the full row,
self included, in the softmax support.  Optional label smoothing spreads
target mass uniformly over all candidates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

logger = logging.getLogger(__name__)


@dataclass
class LossWeights:
    """Loss coefficients; a zero coefficient removes its term entirely."""

    alpha: float = 1.0  # feature-level contrastive
    beta: float = 1.0  # code-level contrastive
    delta: float = 0.1  # code length
    gamma: float = 0.01  # categorizer cross-entropy
    zeta: float = 0.01  # code binarity
    mu: float = 0.01  # mask binarity
    lambda_in: float = 0.35  # supervised share, feature level
    lambda_code: float = 0.35  # supervised share, code level
    p: float = 1.0  # length-loss norm order
    tau: float = 0.1  # contrastive temperature
    smoothing: float = 0.0  # contrastive label smoothing

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")
        if not (0.0 <= self.lambda_in <= 1.0 and 0.0 <= self.lambda_code <= 1.0):
            raise ValueError("mixing weights must lie in [0, 1]")
        if self.p < 1.0:
            raise ValueError("norm order p must be >= 1")
        if self.tau <= 0.0:
            raise ValueError("temperature must be > 0")
        if not (0.0 <= self.smoothing <= 1.0):
            raise ValueError("smoothing must lie in [0, 1]")


def _scores(anchors: Tensor, candidates: Tensor, tau: float) -> Tensor:
    return ad.mul(ad.pairwise_dist(anchors, candidates), -1.0 / tau)


def _target_ce(scores: Tensor, targets: np.ndarray, row_mass: np.ndarray) -> Tensor:
    """Sum over rows of row_mass*logsumexp - <targets, scores>."""
    lse = ad.logsumexp(scores)
    picked = ad.tsum(ad.mul(scores, targets), axis=1)
    return ad.tsum(ad.add(ad.mul(lse, row_mass), ad.mul(picked, -1.0)))


def info_nce_unsup(view1, view2, tau: float, smoothing: float = 0.0) -> Tensor:
    """Symmetric paired-view loss on the B-by-B Euclidean score matrix."""
    v1, v2 = as_tensor(view1), as_tensor(view2)
    b = v1.data.shape[0]
    if v2.data.shape != v1.data.shape:
        raise ValueError(f"view shapes differ: {v1.data.shape} vs {v2.data.shape}")
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives)")
    targets = (1.0 - smoothing) * np.eye(b) + smoothing / b
    ones = np.ones(b)
    fwd = _target_ce(_scores(v1, v2, tau), targets, ones)
    rev = _target_ce(_scores(v2, v1, tau), targets, ones)
    return ad.mul(ad.add(fwd, rev), 0.5 / b)


def info_nce_sup(embeddings, labels, tau: float, smoothing: float = 0.0) -> Tensor:
    """Same-label contrastive pull over one embedding set.

    Positives for anchor i are the other same-label rows; the softmax
    runs over the whole row including self.  Anchors without positives
    drop out; if none remain the term is zero (and logged).
    """
    emb = as_tensor(embeddings)
    labels = np.asarray(labels)
    b = emb.data.shape[0]
    if len(labels) != b:
        raise ValueError(f"{len(labels)} labels for {b} embeddings")
    same = labels[:, None] == labels[None, :]
    if np.issubdtype(labels.dtype, np.signedinteger):
        valid = labels >= 0  # negative ids mean "no label": never a positive pair
        same &= valid[:, None] & valid[None, :]
    np.fill_diagonal(same, False)
    n_pos = same.sum(axis=1)
    anchors = n_pos > 0
    if not anchors.any():
        logger.warning("supervised contrastive term vacuous: no label occurs twice")
        return Tensor(0.0)
    targets = np.zeros((b, b))
    targets[anchors] = same[anchors] / n_pos[anchors, None]
    targets = (1.0 - smoothing) * targets
    targets[anchors] += smoothing / b
    row_mass = anchors.astype(float)
    ce = _target_ce(_scores(emb, emb, tau), targets, row_mass)
    return ad.mul(ce, 1.0 / anchors.sum())


@dataclass
class MixedLoss:
    total: Tensor
    unsup: Tensor
    sup: Tensor


def _mix(unsup: Tensor, sup: Tensor, lam: float) -> Tensor:
    return ad.add(ad.mul(unsup, 1.0 - lam), ad.mul(sup, lam))


def loss_c_in(feat_v1, feat_v2, labels, w: LossWeights) -> MixedLoss:
    """Feature-level mixture: paired-view loss plus a supervised pull
    over the stacked views of the labeled subset (label < 0 = unlabeled)."""
    labels = np.asarray(labels)
    unsup = info_nce_unsup(feat_v1, feat_v2, w.tau, w.smoothing) \
        if w.lambda_in < 1.0 else Tensor(0.0)
    lidx = np.flatnonzero(labels >= 0)
    if w.lambda_in == 0.0:
        sup = Tensor(0.0)
    elif len(lidx) >= 2:
        stacked = ad.concat_rows(
            [ad.gather_rows(as_tensor(feat_v1), lidx), ad.gather_rows(as_tensor(feat_v2), lidx)]
        )
        sup = info_nce_sup(stacked, np.concatenate([labels[lidx], labels[lidx]]),
                           w.tau, w.smoothing)
    else:
        logger.debug("feature-level supervised term vacuous: %d labeled samples", len(lidx))
        sup = Tensor(0.0)
    return MixedLoss(_mix(unsup, sup, w.lambda_in), unsup, sup)


def loss_c_code(codes_v1, codes_v2, truncated_codes, labels_and_pseudo,
                w: LossWeights) -> MixedLoss:
    """Code-level mixture: paired-view loss on raw bit vectors plus a
    supervised pull on truncated codes under true-or-pseudo labels."""
    unsup = info_nce_unsup(codes_v1, codes_v2, w.tau, w.smoothing) \
        if w.lambda_code < 1.0 else Tensor(0.0)
    sup = info_nce_sup(truncated_codes, labels_and_pseudo, w.tau, w.smoothing) \
        if w.lambda_code > 0.0 else Tensor(0.0)
    return MixedLoss(_mix(unsup, sup, w.lambda_code), unsup, sup)


def loss_length(masks, base: float, p: float = 1.0) -> Tensor:
    """Mean over the batch of the L_p norm of base^k-weighted masks."""
    if p < 1.0:
        raise ValueError("norm order p must be >= 1")
    m = as_tensor(masks)
    if m.data.ndim == 1:
        m = _as_row(m)
    length = m.data.shape[1]
    powers = np.cumprod(np.full(length, float(base)))
    weighted = ad.mul(m, powers)
    if p == 1.0:
        norms = ad.tsum(weighted, axis=1)  # weighted masks are non-negative
    else:
        norms = ad.power(ad.tsum(ad.power(weighted, p), axis=1), 1.0 / p)
    return ad.tmean(norms)


def _as_row(t: Tensor) -> Tensor:
    out = Tensor(t.data[None, :], parents=(t,))
    out._bwd = lambda g: (g[0],)
    return out


def _binary_condition(values, name: str) -> Tensor:
    v = as_tensor(values)
    if v.data.min() < -1e-9 or v.data.max() > 1.0 + 1e-9:
        raise ValueError(f"{name} condition expects values in [0, 1], "
                         f"got range [{v.data.min()}, {v.data.max()}]")
    away = ad.mul(v, ad.add(ad.mul(v, -1.0), 1.0))  # v(1-v)
    return ad.tsum(ad.mul(away, away))


def loss_code_cond(bits) -> Tensor:
    """Sum of bits^2 (1-bits)^2; zero exactly on binary codes."""
    return _binary_condition(bits, "code")


def loss_mask_cond(soft_mask) -> Tensor:
    """Sum of m^2 (1-m)^2; zero exactly on binary masks."""
    return _binary_condition(soft_mask, "mask")


def loss_cat(logits, labels) -> Tensor:
    """Mean cross-entropy of known-class logits for labeled samples."""
    lg = as_tensor(logits)
    labels = np.asarray(labels)
    b, c = lg.data.shape
    if len(labels) != b:
        raise ValueError(f"{len(labels)} labels for {b} logit rows")
    if (labels < 0).any() or (labels >= c).any():
        bad = labels[(labels < 0) | (labels >= c)]
        raise ValueError(f"classifier loss got non-class labels {bad!r} (unlabeled sample?)")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    picked = ad.tsum(ad.mul(lg, onehot), axis=1)
    return ad.tmean(ad.add(ad.logsumexp(lg), ad.mul(picked, -1.0)))


@dataclass
class LossParts:
    """Raw scalar terms feeding the final mixture; absent terms stay zero."""

    c_in_u: Tensor | float = 0.0
    c_in_s: Tensor | float = 0.0
    c_code_u: Tensor | float = 0.0
    c_code_s: Tensor | float = 0.0
    length: Tensor | float = 0.0
    cat: Tensor | float = 0.0
    code_cond: Tensor | float = 0.0
    mask_cond: Tensor | float = 0.0


@dataclass
class LossBreakdown:
    c_in_u: float
    c_in_s: float
    c_code_u: float
    c_code_s: float
    length: float
    cat: float
    code_cond: float
    mask_cond: float
    total: float
    node: Tensor | None = None  # graph root for backprop; not serialised

    def as_dict(self) -> dict:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name != "node"
        }


def loss_final(parts: LossParts, w: LossWeights) -> LossBreakdown:
    """Weighted total: contrastive mixtures plus length, classifier and
    binarity terms; any zero coefficient drops its term from the graph."""
    vals = {}
    for f in fields(parts):
        v = getattr(parts, f.name)
        scalar = float(v.data) if isinstance(v, Tensor) else float(v)
        if not np.isfinite(scalar):
            raise FloatingPointError(f"loss term {f.name} is non-finite ({scalar})")
        vals[f.name] = scalar

    terms = []

    def accumulate(coeff, tensor_or_float):
        if coeff != 0.0:
            terms.append(ad.mul(as_tensor(tensor_or_float), coeff))

    accumulate(w.alpha * (1.0 - w.lambda_in), parts.c_in_u)
    accumulate(w.alpha * w.lambda_in, parts.c_in_s)
    accumulate(w.beta * (1.0 - w.lambda_code), parts.c_code_u)
    accumulate(w.beta * w.lambda_code, parts.c_code_s)
    accumulate(w.delta, parts.length)
    accumulate(w.gamma, parts.cat)
    accumulate(w.zeta, parts.code_cond)
    accumulate(w.mu, parts.mask_cond)

    total = Tensor(0.0)
    for t in terms:
        total = ad.add(total, t)
    return LossBreakdown(total=float(total.data), node=total, **vals)
