"""Evaluation: confusion counts, accuracy, ROC curve, and AUC.

The positive class is Ia throughout. AUC is computed by trapezoidal
integration of the ROC curve built at every distinct score threshold, which
equals the probability that a random positive outscores a random negative
with ties counted half.
"""

from dataclasses import dataclass

import numpy as np

from .lightcurves import encode


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr_defined(self):
        return self.tp + self.fn > 0

    @property
    def fpr_defined(self):
        return self.fp + self.tn > 0

    @property
    def tpr(self):
        return self.tp / (self.tp + self.fn) if self.tpr_defined else 0.0

    @property
    def fpr(self):
        return self.fp / (self.fp + self.tn) if self.fpr_defined else 0.0


@dataclass(frozen=True)
class RocCurve:
    """Points from the highest threshold (none positive) down to 0 (all
    positive); both rates are non-decreasing along the curve."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def accuracy(predicted, actual) -> float:
    predicted = list(predicted)
    actual = list(actual)
    if len(predicted) != len(actual):
        raise ValueError("prediction and label lists differ in length")
    if not predicted:
        raise ValueError("cannot compute accuracy of an empty set")
    correct = sum(1 for p, a in zip(predicted, actual) if p == a)
    return correct / len(predicted)


def confusion_at(scores, labels, threshold: float) -> ConfusionCounts:
    """Counts with `predict positive iff score >= threshold`; labels are 1
    for the positive class (Ia), 0 otherwise."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if np.any((scores < 0.0) | (scores > 1.0)):
        raise ValueError("scores must lie in [0, 1]")
    positive = scores >= threshold
    return ConfusionCounts(
        tp=int(np.sum(positive & (labels == 1))),
        fp=int(np.sum(positive & (labels == 0))),
        tn=int(np.sum(~positive & (labels == 0))),
        fn=int(np.sum(~positive & (labels == 1))),
    )


def roc_and_auc(scores, labels):
    """ROC at every distinct score (descending, with sentinels) and its
    trapezoidal area."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.int64)
    cum_tp = np.cumsum(sorted_pos)
    cum_fp = np.cumsum(1 - sorted_pos)
    # Last index of each distinct score group.
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]

    thresholds = [np.inf]
    tpr = [0.0]
    fpr = [0.0]
    for idx in distinct:
        thresholds.append(sorted_scores[idx])
        tpr.append(cum_tp[idx] / n_pos)
        fpr.append(cum_fp[idx] / n_neg)
    if thresholds[-1] != 0.0:
        thresholds.append(0.0)
        tpr.append(1.0)
        fpr.append(1.0)
    curve = RocCurve(
        thresholds=np.asarray(thresholds),
        fpr=np.asarray(fpr),
        tpr=np.asarray(tpr),
    )
    auc = float(np.trapezoid(curve.tpr, curve.fpr))
    return curve, auc


def write_roc_csv(curve: RocCurve, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,fpr,tpr\n")
        for t, f, r in zip(curve.thresholds, curve.fpr, curve.tpr):
            fh.write(f"{t:.17g},{f:.17g},{r:.17g}\n")


@dataclass(frozen=True)
class FoldReport:
    accuracy: float
    auc: float
    roc: RocCurve
    n_test: int


def score_samples(network, samples, batch_size: int = 64) -> np.ndarray:
    """Ia-class softmax probabilities for encoded samples, in order."""
    scores = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        probs = network.forward_classifier(chunk, training=False)
        scores.append(probs.data[:, 1])
    return np.concatenate(scores)


def evaluate_fold(network, test_curves, batch_size: int = 64) -> FoldReport:
    """Score one held-out fold: accuracy at threshold 0.5 plus ROC/AUC."""
    if not test_curves:
        raise ValueError("empty test fold")
    samples = [encode(curve) for curve in test_curves]
    labels = np.array([s.label_index for s in samples], dtype=np.int64)
    scores = score_samples(network, samples, batch_size=batch_size)
    predicted = (scores >= 0.5).astype(np.int64)
    acc = accuracy(predicted.tolist(), labels.tolist())
    curve, auc = roc_and_auc(scores, labels)
    return FoldReport(accuracy=acc, auc=auc, roc=curve, n_test=len(samples))


def aggregate_folds(reports):
    """Cross-fold mean and (population) standard deviation of both metrics."""
    accs = np.array([r.accuracy for r in reports])
    aucs = np.array([r.auc for r in reports])
    return {
        "accuracy_mean": float(accs.mean()),
        "accuracy_std": float(accs.std()),
        "auc_mean": float(aucs.mean()),
        "auc_std": float(aucs.std()),
        "folds": len(reports),
    }
