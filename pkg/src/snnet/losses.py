"""Classification and metric-learning objectives.

The triplet objective pulls same-label embeddings together and pushes the
others at least `margin` away; the adapted variant glues each anchor to the
embedding of its sub-sampled copy while repelling negatives closer than
`margin_prime`. Mining is batch-all: every valid triplet is enumerated and
only strictly positive losses enter the average.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .autodiff import Tensor, as_tensor, clamp, log, mul, record_op, relu, sqrt, sub, sum_all, sum_axis


@dataclass(frozen=True)
class MarginConfig:
    margin: float = 1.0
    margin_prime: float = 1.0

    def __post_init__(self):
        for name, value in (("margin", self.margin), ("margin_prime", self.margin_prime)):
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be finite and positive")


@dataclass
class TripletBatch:
    """Embeddings, binary labels, and row-aligned embeddings of sub-sampled
    copies of the same light-curves."""

    embeddings: Tensor
    labels: np.ndarray
    subsampled_embeddings: Tensor

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.data.ndim != 2:
            raise ValueError("embeddings must be [B, m]")
        if self.subsampled_embeddings.shape != self.embeddings.shape:
            raise ValueError("sub-sampled embeddings must align row-for-row")
        if self.labels.shape != (self.embeddings.shape[0],):
            raise ValueError("one label per embedding row required")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")


class MiningResult(NamedTuple):
    loss: Tensor
    n_useful: int
    n_useful_prime: int
    triplet_mean: float
    adapted_mean: float


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log p(true class); probabilities clamped to [1e-12, 1]."""
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = probs.shape
    if labels.shape != (batch,):
        raise ValueError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    onehot = np.zeros((batch, classes))
    onehot[np.arange(batch), labels] = 1.0
    picked = sum_axis(mul(probs, Tensor(onehot)), axis=1)
    return mul(sum_all(log(clamp(picked, 1e-12, 1.0))), -1.0 / batch)


def _pair_distance(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = sub(a, b)
    return sqrt(sum_all(mul(diff, diff)))


def l2_distance(a, b) -> float:
    """Euclidean distance between two equal-length vectors."""
    return _pair_distance(as_tensor(a), as_tensor(b)).item()


def triplet_loss(anchor, positive, negative, margin: float) -> Tensor:
    """max(d(a,p) - d(a,n) + margin, 0) as a differentiable scalar."""
    if margin <= 0.0:
        raise ValueError("margin must be positive")
    a, p, n = as_tensor(anchor), as_tensor(positive), as_tensor(negative)
    d_ap = _pair_distance(a, p)
    d_an = _pair_distance(a, n)
    return relu(sub(d_ap, d_an) + margin)


def adapted_triplet_loss(anchor, anchor_sub, negative, margin_prime: float) -> Tensor:
    """d(a, a') + max(0, margin' - d(a, n)): amalgamates the anchor with its
    sub-sampled copy while keeping negatives at least margin' away."""
    if margin_prime <= 0.0:
        raise ValueError("margin_prime must be positive")
    a, a_sub, n = as_tensor(anchor), as_tensor(anchor_sub), as_tensor(negative)
    d_sub = _pair_distance(a, a_sub)
    d_an = _pair_distance(a, n)
    return d_sub + relu(sub(Tensor(np.asarray(margin_prime)), d_an))


def mine_batch_all(batch: TripletBatch, margins: MarginConfig) -> MiningResult:
    """Enumerate all valid (a, p, n) triplets for the plain loss and all
    (a, a_sub, n) triples for the adapted loss; average the strictly positive
    ones of each and return the sum of the two means.

    A batch without any valid negative pair (single class) yields loss 0 with
    both counts 0 and emits a warning.
    """
    emb, sub_emb, labels = batch.embeddings, batch.subsampled_embeddings, batch.labels
    if labels.min() == labels.max():
        warnings.warn("triplet mining: batch contains a single class; loss is 0")
        zero = np.zeros(())
        return MiningResult(record_op("mine_batch_all", (emb, sub_emb), zero, lambda g: (None, None)), 0, 0, 0.0, 0.0)
    dmat = K.pairwise_dists(emb.data)
    dsub = K.rowwise_dists(emb.data, sub_emb.data)
    sum_t, n_t, sum_a, n_a = K.mine_forward(
        dmat, dsub, labels, margins.margin, margins.margin_prime
    )
    mean_t = sum_t / n_t if n_t > 0 else 0.0
    mean_a = sum_a / n_a if n_a > 0 else 0.0
    total = np.asarray(mean_t + mean_a)

    def bwd(g):
        go = float(g)
        c_t = go / n_t if n_t > 0 else 0.0
        c_a = go / n_a if n_a > 0 else 0.0
        ge = np.zeros_like(emb.data)
        gsub = np.zeros_like(sub_emb.data)
        K.mine_backward(
            emb.data,
            sub_emb.data,
            dmat,
            dsub,
            labels,
            margins.margin,
            margins.margin_prime,
            c_t,
            c_a,
            ge,
            gsub,
        )
        return ge, gsub

    loss = record_op("mine_batch_all", (emb, sub_emb), total, bwd)
    return MiningResult(loss, int(n_t), int(n_a), float(mean_t), float(mean_a))
