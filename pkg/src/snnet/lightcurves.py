"""Light-curve domain model and the synthetic two-class generator.

A light-curve is four irregularly sampled flux series (bands g, r, nir, ir)
spanning roughly 100-200 days. The dense encoding is a 4 x T matrix with
missing day-band cells filled with exact zeros and fluxes normalized by the
per-curve absolute maximum; real survey cadence leaves well over 70% of the
cells empty, and the generator is tuned to match.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import substream

BANDS = ("g", "r", "nir", "ir")
BAND_INDEX = {b: i for i, b in enumerate(BANDS)}
LABELS = ("notIa", "Ia")
LABEL_INDEX = {"notIa": 0, "Ia": 1}  # Ia is the positive class everywhere

MIN_CROP_DURATION = 20


class DatasetFormatError(Exception):
    pass


@dataclass(frozen=True)
class Observation:
    day: int
    band: str
    flux: float

    def __post_init__(self):
        if self.day < 0:
            raise ValueError("survey day must be non-negative")
        if self.band not in BAND_INDEX:
            raise ValueError(f"unknown band {self.band!r}")
        if not math.isfinite(self.flux):
            raise ValueError("flux must be finite")


@dataclass
class LightCurve:
    id: str
    label: str
    observations: list
    redshift: float | None = None

    def __post_init__(self):
        if self.label not in LABEL_INDEX:
            raise ValueError(f"unknown label {self.label!r}")
        if not self.observations:
            raise ValueError("light-curve needs at least one observation")
        if len({obs.band for obs in self.observations}) < 2:
            raise ValueError("light-curve needs observations in at least two bands")

    @property
    def duration_days(self) -> int:
        days = [obs.day for obs in self.observations]
        return max(days) - min(days) + 1


@dataclass
class EncodedSample:
    """Dense 4 x T flux matrix; rows follow BANDS order, zeros mark missing."""

    matrix: np.ndarray
    valid_w: int
    label: str
    norm_factor: float
    id: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 4:
            raise ValueError("encoded matrix must be 4 x T")
        if not 1 <= self.valid_w <= self.matrix.shape[1]:
            raise ValueError("valid width out of range")

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]


def encode(curve: LightCurve) -> EncodedSample:
    """Day-sample a curve into its 4 x T matrix.

    The day origin is the first observed day; the scale is the largest
    absolute flux, so every cell lies in [-1, 1] and missing cells are exact
    zeros. If the same day and band is observed twice, the later record wins.
    """
    day0 = min(obs.day for obs in curve.observations)
    width = curve.duration_days
    matrix = np.zeros((4, width))
    for obs in curve.observations:
        matrix[BAND_INDEX[obs.band], obs.day - day0] = obs.flux
    norm = float(np.max(np.abs(matrix)))
    if norm == 0.0:
        raise ValueError(f"curve {curve.id!r} has only zero fluxes; cannot normalize")
    matrix /= norm
    return EncodedSample(matrix, width, curve.label, norm, id=curve.id)


def crop_augment(sample: EncodedSample, rng) -> EncodedSample:
    """Keep a contiguous window of a random fraction in [0.4, 0.8] of the
    duration, uniformly placed. Retained cells and the label are unchanged."""
    width = sample.valid_w
    if width < MIN_CROP_DURATION:
        raise ValueError(f"cannot crop a curve of width {width} < {MIN_CROP_DURATION}")
    fraction = rng.uniform(0.4, 0.8)
    new_width = int(round(fraction * width))
    start = int(rng.integers(0, width - new_width + 1))
    window = sample.matrix[:, start : start + new_width].copy()
    return EncodedSample(window, new_width, sample.label, sample.norm_factor, id=sample.id)


def subsample_anchor(sample: EncodedSample, keep_prob: float, rng) -> EncodedSample:
    """Zero each nonzero cell independently with probability 1 - keep_prob,
    keeping the width; redraws until at least one nonzero cell survives."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in (0, 1]")
    if keep_prob == 1.0:
        return EncodedSample(
            sample.matrix.copy(), sample.valid_w, sample.label, sample.norm_factor, id=sample.id
        )
    nonzero = sample.matrix != 0.0
    if not nonzero.any():
        return EncodedSample(
            sample.matrix.copy(), sample.valid_w, sample.label, sample.norm_factor, id=sample.id
        )
    while True:
        keep = rng.random(sample.matrix.shape) < keep_prob
        if np.any(keep & nonzero):
            break
    return EncodedSample(
        np.where(keep, sample.matrix, 0.0),
        sample.valid_w,
        sample.label,
        sample.norm_factor,
        id=sample.id,
    )


# --- synthetic generation ---


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic two-class pulse generator.

    Ia curves are a single smooth pulse with a tight cross-band amplitude
    signature; notIa curves draw band ratios and timescales from much broader
    ranges and may carry a secondary bump. Cadence gating (nightly visit
    probability, per-band detection, weather gaps) keeps the encoded matrices
    more than 70% empty.
    """

    n_curves: int = 5000
    class_balance: float = 0.5
    duration_min: int = 100
    duration_max: int = 180
    noise_sigma: float = 0.08
    visit_prob: float = 0.42
    band_prob: float = 0.70
    gap_count_max: int = 3
    gap_len_min: int = 5
    gap_len_max: int = 14
    secondary_bump_prob: float = 0.45
    seed: int = 0

    def __post_init__(self):
        if self.n_curves < 1:
            raise ValueError("n_curves must be positive")
        if not 0.0 <= self.class_balance <= 1.0:
            raise ValueError("class_balance must lie in [0, 1]")
        if not MIN_CROP_DURATION <= self.duration_min <= self.duration_max:
            raise ValueError("need duration_max >= duration_min >= 20")
        if self.noise_sigma < 0.05:
            raise ValueError("noise_sigma must be at least 0.05 of the peak")
        if not (0.0 < self.visit_prob <= 1.0 and 0.0 < self.band_prob <= 1.0):
            raise ValueError("visit/band probabilities must lie in (0, 1]")
        if self.visit_prob * self.band_prob > 0.30:
            raise ValueError(
                "infeasible cadence: expected fill exceeds 30% of cells "
                "(the encoding must stay >70% zeros)"
            )
        if not 0 <= self.gap_len_min <= self.gap_len_max:
            raise ValueError("invalid gap length range")


IA_BAND_RATIOS = np.array([0.55, 1.0, 0.85, 0.60])


def _pulse(days, peak_day, rise_sigma, decay_tau):
    rise = np.exp(-0.5 * ((days - peak_day) / rise_sigma) ** 2)
    decay = np.exp(-(days - peak_day) / decay_tau)
    return np.where(days <= peak_day, rise, decay)


def _synth_curve(index, label, cfg: GeneratorConfig) -> LightCurve:
    rng = substream(cfg.seed, "curve", index)
    duration = int(rng.integers(cfg.duration_min, cfg.duration_max + 1))
    days = np.arange(duration, dtype=np.float64)

    if label == "Ia":
        amplitude = rng.uniform(0.7, 1.3)
        ratios = IA_BAND_RATIOS * rng.uniform(0.92, 1.08, size=4)
        peak_day = rng.uniform(0.25, 0.50) * duration
        shape = _pulse(days, peak_day, rng.uniform(8.0, 13.0), rng.uniform(16.0, 26.0))
        redshift = rng.uniform(0.1, 0.8)
    else:
        amplitude = rng.uniform(0.5, 1.4)
        ratios = rng.uniform(0.35, 1.05, size=4)
        peak_day = rng.uniform(0.15, 0.60) * duration
        shape = _pulse(days, peak_day, rng.uniform(4.0, 22.0), rng.uniform(8.0, 45.0))
        if rng.random() < cfg.secondary_bump_prob:
            bump_day = peak_day + rng.uniform(15.0, 45.0)
            bump = rng.uniform(0.25, 0.60) * np.exp(
                -0.5 * ((days - bump_day) / rng.uniform(6.0, 16.0)) ** 2
            )
            shape = shape + bump
        redshift = rng.uniform(0.05, 0.9)

    flux = amplitude * ratios[:, None] * shape[None, :]

    while True:
        visited = rng.random(duration) < cfg.visit_prob
        for _ in range(int(rng.integers(0, cfg.gap_count_max + 1))):
            length = int(rng.integers(cfg.gap_len_min, cfg.gap_len_max + 1))
            if length >= duration:
                continue
            start = int(rng.integers(0, duration - length))
            visited[start : start + length] = False
        detected = visited[None, :] & (rng.random((4, duration)) < cfg.band_prob)
        bands_seen = detected.any(axis=1).sum()
        if detected.sum() >= 2 and bands_seen >= 2:
            break

    noise = rng.normal(0.0, cfg.noise_sigma * amplitude, size=(4, duration))
    observed = flux + noise
    observations = [
        Observation(day=int(d), band=BANDS[b], flux=float(observed[b, d]))
        for b in range(4)
        for d in np.nonzero(detected[b])[0]
    ]
    observations.sort(key=lambda o: (o.day, BAND_INDEX[o.band]))
    return LightCurve(
        id=f"sn{index:05d}", label=label, observations=observations, redshift=float(redshift)
    )


def synth_generate(cfg: GeneratorConfig) -> list:
    """Generate n_curves light-curves with the requested class balance;
    deterministic given cfg.seed (per-curve independent substreams)."""
    n_ia = int(round(cfg.n_curves * cfg.class_balance))
    labels = ["Ia"] * n_ia + ["notIa"] * (cfg.n_curves - n_ia)
    return [_synth_curve(i, label, cfg) for i, label in enumerate(labels)]


def class_counts(dataset) -> dict:
    counts = {label: 0 for label in LABELS}
    for curve in dataset:
        counts[curve.label] += 1
    return counts


def dataset_sparsity(dataset) -> float:
    """Fraction of zero cells across the encoded matrices of a dataset."""
    zeros = 0
    total = 0
    for curve in dataset:
        sample = encode(curve)
        zeros += int(np.count_nonzero(sample.matrix == 0.0))
        total += sample.matrix.size
    return zeros / total if total else 0.0


# --- splits and persistence ---


def kfold_split(dataset, k: int, seed: int) -> list:
    """Stratified-by-label partition into k near-equal folds; returns
    (train, test) dataset pairs with each curve in exactly one test fold."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(dataset):
        raise ValueError(f"k={k} exceeds dataset size {len(dataset)}")
    fold_of = np.zeros(len(dataset), dtype=np.int64)
    for label in LABELS:
        indices = np.array([i for i, c in enumerate(dataset) if c.label == label], dtype=np.int64)
        if indices.size == 0:
            continue
        substream(seed, "kfold", label).shuffle(indices)
        for pos, idx in enumerate(indices):
            fold_of[idx] = pos % k
    splits = []
    for fold in range(k):
        train = [c for i, c in enumerate(dataset) if fold_of[i] != fold]
        test = [c for i, c in enumerate(dataset) if fold_of[i] == fold]
        splits.append((train, test))
    return splits


def save_jsonl(dataset, path):
    """One curve per line: {"id", "label", "redshift", "obs": [[day, band, flux], ...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for curve in dataset:
            record = {
                "id": curve.id,
                "label": curve.label,
                "redshift": curve.redshift,
                "obs": [[obs.day, obs.band, obs.flux] for obs in curve.observations],
            }
            fh.write(json.dumps(record) + "\n")


def load_jsonl(path) -> list:
    dataset = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                observations = [
                    Observation(day=int(day), band=band, flux=float(flux))
                    for day, band, flux in record["obs"]
                ]
                curve = LightCurve(
                    id=str(record["id"]),
                    label=record["label"],
                    observations=observations,
                    redshift=record.get("redshift"),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
            dataset.append(curve)
    return dataset
