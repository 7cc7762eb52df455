"""Neighbourhood label consistency on a frozen feature bank.

Indices here are bank rows (0..N-1), not dataset indices; map through
``FeatureBank.indices`` when persisting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Partition:
    clean: np.ndarray
    discard: np.ndarray
    round: int = 0

    @property
    def size(self) -> int:
        return len(self.clean) + len(self.discard)

    def clean_mask(self) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[self.clean] = True
        return m

    @classmethod
    def from_mask(cls, mask: np.ndarray, round: int = 0) -> "Partition":
        mask = np.asarray(mask, dtype=bool)
        return cls(np.flatnonzero(mask), np.flatnonzero(~mask), round)


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    scores: np.ndarray
    neighbors: np.ndarray
    k: int
    theta: float
    n_min: int


def knn_neighbors(features: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """``(N, k)`` indices of the most cosine-similar other rows.

    Ties in similarity go to the smaller index.
    """
    f = np.asarray(features, dtype=np.float64)
    n = len(f)
    if not (1 <= k < n):
        raise ValueError(f"k must satisfy 1 <= k < N={n}, got {k}")
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        sim = f[s:s + chunk] @ f.T
        rows = np.arange(len(sim))
        sim[rows, s + rows] = -np.inf
        # stable sort keeps ascending index order among equal similarities
        out[s:s + chunk] = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return out


def consistency_scores(neighbors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[neighbors] == labels[:, None]).mean(axis=1)


def partition(scores: np.ndarray, theta: float, labels: np.ndarray, n_min: int) -> Partition:
    """Threshold at ``theta`` (inclusive), then top up thin classes to ``n_min``.

    A class with fewer than ``n_min`` clean members gets its discarded
    samples back in descending score order (ties: smaller index) until it
    reaches ``n_min`` or runs out.
    """
    if not (0 < theta <= 1):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if n_min < 0:
        raise ValueError(f"n_min must be >= 0, got {n_min}")
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    clean = scores >= theta
    for c in np.unique(labels):
        members = labels == c
        short = n_min - int(np.sum(clean & members))
        if short <= 0:
            continue
        cand = np.flatnonzero(members & ~clean)
        cand = cand[np.lexsort((cand, -scores[cand]))]
        clean[cand[:short]] = True
    return Partition.from_mask(clean, 0)


def filter_bank(features: np.ndarray, labels: np.ndarray, k: int = 20, theta: float = 0.4,
                n_min: int = 35) -> tuple[Partition, ConsistencyReport]:
    nbrs = knn_neighbors(features, k)
    scores = consistency_scores(nbrs, labels)
    return partition(scores, theta, labels, n_min), ConsistencyReport(scores, nbrs, k, theta, n_min)
