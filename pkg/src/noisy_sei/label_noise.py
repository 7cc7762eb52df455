"""Symmetric label corruption of a stratified training split.

The ground truth of which labels were flipped is kept on the dataset
but only reachable through :meth:`NoisyDataset.ground_truth`, which the
training path never calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _rng
from ._rng import SeedLike
from .sim import LabeledSignals

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}


class InvalidRateError(ValueError):
    pass


class SplitError(ValueError):
    pass


def _check_rate(eta: float) -> None:
    if not (0.0 <= eta < 1.0):
        raise InvalidRateError(f"noise rate must lie in [0, 1), got {eta}")


def symmetric_transition(num_classes: int, eta: float) -> np.ndarray:
    """Row-stochastic ``T[j, k] = P(observed=k | true=j)`` for symmetric noise."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    _check_rate(eta)
    t = np.full((num_classes, num_classes), eta / (num_classes - 1))
    np.fill_diagonal(t, 1.0 - eta)
    return t


def stratified_split(labels: np.ndarray, ratios=(0.6, 0.2, 0.2), seed: SeedLike = 0) -> np.ndarray:
    """Per-class shuffled assignment to TRAIN/VAL/TEST.

    Per-class counts are ``round(r * n_c)`` for train and val, the rest goes
    to test.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    labels = np.asarray(labels)
    split = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 5:
            raise SplitError(f"class {c} has {len(idx)} samples; at least 5 are required")
        g = _rng.rng(seed, _rng.STREAM_SPLIT, int(c))
        idx = idx[g.permutation(len(idx))]
        n_train = int(round(ratios[0] * len(idx)))
        n_val = int(round(ratios[1] * len(idx)))
        split[idx[:n_train]] = TRAIN
        split[idx[n_train:n_train + n_val]] = VAL
        split[idx[n_train + n_val:]] = TEST
    return split


@dataclass(frozen=True)
class GroundTruth:
    """Evaluation-only view: true labels and corruption flags."""

    true_labels: np.ndarray
    corrupted: np.ndarray


@dataclass(frozen=True, eq=False)
class NoisyDataset:
    signals: np.ndarray
    observed_labels: np.ndarray
    split: np.ndarray
    noise_rate: float
    num_classes: int
    _truth: GroundTruth | None = None

    def __len__(self):
        return len(self.observed_labels)

    def indices(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)

    def ground_truth(self) -> GroundTruth | None:
        """Hidden labels and flags; ``None`` when the data carries no truth."""
        return self._truth


def flip_count(eta: float, n_train: int) -> int:
    # round first so e.g. 0.3 * 480 = 143.99999... still floors to 144
    return math.floor(round(eta * n_train, 9))


def inject_noise(dataset: LabeledSignals, eta: float, seed: SeedLike) -> NoisyDataset:
    """Flip exactly ``floor(eta * |train|)`` train labels to a uniformly drawn wrong class."""
    _check_rate(eta)
    if dataset.split is None:
        raise SplitError("dataset has no split assignment; call stratified_split first")
    true = np.asarray(dataset.labels, dtype=np.int64)
    c = dataset.num_classes
    train = np.flatnonzero(dataset.split == TRAIN)
    g = _rng.rng(seed, _rng.STREAM_NOISE)
    chosen = np.sort(g.choice(train, size=flip_count(eta, len(train)), replace=False))
    observed = true.copy()
    observed[chosen] = (true[chosen] + g.integers(1, c, size=len(chosen))) % c
    corrupted = observed != true
    return NoisyDataset(dataset.signals, observed, np.asarray(dataset.split), float(eta), c,
                        GroundTruth(true, corrupted))
