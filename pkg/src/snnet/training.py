"""Training loops: CNN on cross-entropy, Siamese trunk on the mined triplet
objective (two forward passes through one set of weights), and the frozen
trunk classification head.

All randomness is drawn from named substreams of the plan seed (init,
shuffle, dropout, augment, subsample), so runs are bit-reproducible and
per-sample augmentation draws do not depend on batch assembly order.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .lightcurves import MIN_CROP_DURATION, crop_augment, encode, subsample_anchor
from .losses import MarginConfig, TripletBatch, cross_entropy, mine_batch_all
from .network import Network, NetworkConfig, build_network
from .optim import Adam, TrainPlan, lr_at
from .rng import substream

ANCHOR_KEEP_PROB = 0.5

logger = logging.getLogger(__name__)


@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float
    n_useful: int | None = None
    n_useful_prime: int | None = None


def write_trace_csv(trace, path):
    siamese = any(row.n_useful is not None for row in trace)
    header = "step,lr,loss,n_useful,n_useful_prime" if siamese else "step,lr,loss"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in trace:
            line = f"{row.step},{row.lr:.17g},{row.loss:.17g}"
            if siamese:
                line += f",{row.n_useful},{row.n_useful_prime}"
            fh.write(line + "\n")


def _finite_loss(loss, step):
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} at step {step}; aborting")
    return value


def _encode_dataset(dataset):
    samples = [encode(curve) for curve in dataset]
    labels = np.array([s.label_index for s in samples], dtype=np.int64)
    if labels.min() == labels.max():
        raise ValueError("training data must contain both classes")
    return samples, labels


def _maybe_augment(sample, plan: TrainPlan, step: int, index: int):
    if sample.valid_w < MIN_CROP_DURATION:
        return sample
    rng = substream(plan.seed, "augment", step, index)
    if rng.random() < plan.augment_prob:
        return crop_augment(sample, rng)
    return sample


def train_cnn(dataset, config: NetworkConfig, plan: TrainPlan):
    """Train the classifier for plan.iterations batch steps; each sampled
    curve gets an independent chance of crop augmentation at each use.
    Returns (network, loss trace)."""
    samples, labels = _encode_dataset(dataset)
    if plan.batch_size > len(samples):
        raise ValueError("batch size exceeds dataset size")
    net = build_network(config, substream(plan.seed, "init"))
    optimizer = Adam(net.parameters())
    shuffle_rng = substream(plan.seed, "shuffle")
    trace = []
    for step in range(plan.iterations):
        idx = shuffle_rng.choice(len(samples), size=plan.batch_size, replace=False)
        batch = [_maybe_augment(samples[i], plan, step, int(i)) for i in idx]
        batch_labels = labels[idx]
        optimizer.zero_grad()
        with Tape():
            probs = net.forward_classifier(
                batch,
                training=True,
                dropout_rate=plan.dropout,
                rng=substream(plan.seed, "dropout", step),
            )
            loss = cross_entropy(probs, batch_labels)
        value = _finite_loss(loss, step)
        loss.backward()
        optimizer.step(lr_at(step, plan))
        trace.append(TraceRow(step=step, lr=lr_at(step, plan), loss=value))
    return net, trace


def _stratified_indices(labels_by_class, batch_size, rng):
    half = batch_size // 2
    sizes = (batch_size - half, half)
    picked = [
        rng.choice(group, size=min(n, len(group)), replace=False)
        for group, n in zip(labels_by_class, sizes)
    ]
    return np.concatenate(picked)


def train_siamese(dataset, config: NetworkConfig, plan: TrainPlan, margins: MarginConfig | None = None):
    """Metric-learning phase: embed each stratified batch and a sub-sampled
    copy of it through the same parameters, mine all useful triplets, and
    take one Adam step on the trunk. Returns (network, loss trace)."""
    margins = margins or MarginConfig()
    samples, labels = _encode_dataset(dataset)
    if plan.batch_size > len(samples):
        raise ValueError("batch size exceeds dataset size")
    by_class = [np.nonzero(labels == c)[0] for c in (0, 1)]
    if min(len(g) for g in by_class) < 2:
        raise ValueError("need at least two curves per class for triplet mining")
    net = build_network(config, substream(plan.seed, "init"))
    optimizer = Adam(net.trunk_parameters())
    shuffle_rng = substream(plan.seed, "shuffle")
    trace = []
    skipped = 0
    for step in range(plan.iterations):
        idx = _stratified_indices(by_class, plan.batch_size, shuffle_rng)
        batch_labels = labels[idx]
        if batch_labels.min() == batch_labels.max():
            skipped += 1
            continue
        batch = [samples[i] for i in idx]
        subsampled = [
            subsample_anchor(samples[i], ANCHOR_KEEP_PROB, substream(plan.seed, "subsample", step, int(i)))
            for i in idx
        ]
        optimizer.zero_grad()
        with Tape():
            emb = net.forward_features(batch)
            emb_sub = net.forward_features(subsampled)
            result = mine_batch_all(
                TripletBatch(emb, batch_labels, emb_sub), margins
            )
        value = _finite_loss(result.loss, step)
        result.loss.backward()
        optimizer.step(lr_at(step, plan))
        trace.append(
            TraceRow(
                step=step,
                lr=lr_at(step, plan),
                loss=value,
                n_useful=result.n_useful,
                n_useful_prime=result.n_useful_prime,
            )
        )
    if skipped:
        logger.warning("siamese training skipped %d single-class batches", skipped)
    return net, trace


def embed_dataset(net: Network, samples, batch_size: int = 64) -> np.ndarray:
    """Inference-mode embeddings of encoded samples, row per sample."""
    chunks = []
    for start in range(0, len(samples), batch_size):
        emb = net.forward_features(samples[start : start + batch_size])
        chunks.append(emb.data)
    return np.concatenate(chunks, axis=0)


def train_head(net: Network, dataset, plan: TrainPlan):
    """Train dense(1024) + dropout + dense(2) + softmax on cross-entropy over
    frozen-trunk embeddings. Trunk parameters are never touched."""
    samples, labels = _encode_dataset(dataset)
    embeddings = embed_dataset(net, samples)
    optimizer = Adam(net.head_parameters())
    shuffle_rng = substream(plan.seed, "head-shuffle")
    batch_size = min(plan.batch_size, len(samples))
    trace = []
    for step in range(plan.iterations):
        idx = shuffle_rng.choice(len(samples), size=batch_size, replace=False)
        optimizer.zero_grad()
        with Tape():
            probs = net.classify_embeddings(
                Tensor(embeddings[idx]),
                training=True,
                dropout_rate=plan.dropout,
                rng=substream(plan.seed, "head-dropout", step),
            )
            loss = cross_entropy(probs, labels[idx])
        value = _finite_loss(loss, step)
        loss.backward()
        optimizer.step(lr_at(step, plan))
        trace.append(TraceRow(step=step, lr=lr_at(step, plan), loss=value))
    return trace
