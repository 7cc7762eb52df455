"""Iterative recovery of discarded-but-plausible samples.

Each round fits a zero-initialised linear softmax classifier on the clean
features, builds unit-norm class prototypes, and moves a discarded sample
back when its predicted label equals its observed label and either the
confidence is high or the confidence is moderate with a prototype match.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from . import engine as E
from .knn_filter import Partition

CRIT_NONE, CRIT_HIGH, CRIT_PROTO = 0, 1, 2
CRITERIA = {CRIT_NONE: "none", CRIT_HIGH: "high-conf", CRIT_PROTO: "low-conf+sim"}
PROTO_NORM_GUARD = 1e-9


@dataclass(frozen=True)
class RescueConfig:
    rounds: int = 3
    theta_high: float = 0.6
    theta_low: float = 0.4
    theta_sim: float = 0.8
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.theta_low > self.theta_high:
            raise ValueError("theta_low must not exceed theta_high")
        if not (-1 <= self.theta_sim <= 1):
            raise ValueError("theta_sim must lie in [-1, 1]")


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    vectors: np.ndarray  # (C, d); zero rows for flagged classes
    valid: np.ndarray  # (C,) bool
    counts: np.ndarray  # (C,) clean members per class


@dataclass(frozen=True, eq=False)
class RescueDecision:
    index: np.ndarray  # bank rows of the evaluated discarded samples
    predicted: np.ndarray
    confidence: np.ndarray
    similarity: np.ndarray
    rescued: np.ndarray
    criterion: np.ndarray


def train_light_classifier(features: np.ndarray, labels: np.ndarray, clean: np.ndarray,
                           num_classes: int, cfg: RescueConfig, seed) -> E.Linear:
    """Linear d_e -> C softmax classifier fitted on ``features[clean]`` only."""
    clean = np.asarray(clean)
    if len(clean) == 0:
        raise ValueError("cannot train the rescue classifier on an empty clean set")
    x = np.asarray(features)[clean]
    y = np.asarray(labels)[clean]
    model = E.Linear(x.shape[1], num_classes, zero_init=True)
    opt = E.Adam(model.parameters(), lr=cfg.lr)
    g = _rng.rng(seed, _rng.STREAM_RESCUE)
    for _ in range(cfg.epochs):
        order = g.permutation(len(x))
        for s in range(0, len(x), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            loss = E.softmax_cross_entropy(model(E.Tensor(x[b])), y[b])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


def predict_proba(model: E.Module, features: np.ndarray) -> np.ndarray:
    with E.no_grad():
        logits = model(E.Tensor(np.asarray(features))).data
    return E.softmax_np(logits.astype(np.float64))


def build_prototypes(features: np.ndarray, labels: np.ndarray, clean: np.ndarray,
                     num_classes: int) -> PrototypeSet:
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    clean = np.asarray(clean, dtype=np.int64)
    vecs = np.zeros((num_classes, f.shape[1]))
    valid = np.zeros(num_classes, dtype=bool)
    counts = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        members = clean[labels[clean] == c]
        counts[c] = len(members)
        if not len(members):
            continue
        mean = f[members].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < PROTO_NORM_GUARD:
            continue
        vecs[c] = mean / norm
        valid[c] = True
    return PrototypeSet(vecs, valid, counts)


def evaluate_discarded(probs: np.ndarray, prototypes: PrototypeSet, features: np.ndarray,
                       discard: np.ndarray):
    """Confidence, predicted label and prototype similarity for each discarded row.

    ``probs`` are class probabilities for the discarded rows, aligned with
    ``discard``.  Similarity is ``-inf`` when the predicted class has no
    valid prototype.
    """
    probs = np.asarray(probs)
    pred = probs.argmax(axis=1)  # first maximum wins ties
    conf = probs[np.arange(len(probs)), pred]
    f = np.asarray(features, dtype=np.float64)[np.asarray(discard, dtype=np.int64)]
    sim = np.einsum("nd,nd->n", f, prototypes.vectors[pred]) if len(pred) else np.zeros(0)
    sim = np.where(prototypes.valid[pred], sim, -np.inf)
    return pred, conf, sim


def decide_rescue(predicted, observed, confidence, similarity, cfg: RescueConfig):
    """Rescue flags and the criterion that fired (label match is mandatory)."""
    predicted, observed = np.asarray(predicted), np.asarray(observed)
    confidence, similarity = np.asarray(confidence), np.asarray(similarity)
    match = predicted == observed
    high = match & (confidence >= cfg.theta_high)
    proto = match & ~high & (confidence >= cfg.theta_low) & (similarity >= cfg.theta_sim)
    criterion = np.where(high, CRIT_HIGH, np.where(proto, CRIT_PROTO, CRIT_NONE))
    return high | proto, criterion


@dataclass
class RescueResult:
    partition: Partition
    rounds: list[Partition] = field(default_factory=list)
    decisions: list[RescueDecision] = field(default_factory=list)

    def audit(self) -> list[dict]:
        return [{"round": r + 1,
                 "evaluated": int(len(d.index)),
                 "rescued": int(d.rescued.sum()),
                 "high_conf": int(np.sum(d.criterion == CRIT_HIGH)),
                 "low_conf_sim": int(np.sum(d.criterion == CRIT_PROTO)),
                 "clean_size": int(len(p.clean)),
                 "discard_size": int(len(p.discard))}
                for r, (d, p) in enumerate(zip(self.decisions, self.rounds))]


def run_rescue_rounds(features: np.ndarray, labels: np.ndarray, initial: Partition,
                      num_classes: int, cfg: RescueConfig, seed) -> RescueResult:
    """R rounds of classify / prototype / rescue.

    The classifier seed does not depend on the round, so a round with an
    unchanged clean set reproduces the previous round exactly.
    """
    labels = np.asarray(labels)
    current = initial
    result = RescueResult(initial)
    for r in range(1, cfg.rounds + 1):
        discard = current.discard
        if len(discard):
            model = train_light_classifier(features, labels, current.clean, num_classes, cfg, seed)
            protos = build_prototypes(features, labels, current.clean, num_classes)
            probs = predict_proba(model, np.asarray(features)[discard])
            pred, conf, sim = evaluate_discarded(probs, protos, features, discard)
            rescued, crit = decide_rescue(pred, labels[discard], conf, sim, cfg)
        else:
            pred = conf = sim = np.zeros(0)
            rescued = np.zeros(0, dtype=bool)
            crit = np.zeros(0, dtype=np.int64)
        mask = current.clean_mask()
        mask[discard[rescued]] = True
        current = Partition.from_mask(mask, r)
        result.rounds.append(current)
        result.decisions.append(RescueDecision(discard, pred, conf, sim, rescued, crit))
    result.partition = current
    return result


def audit_corruption(result: RescueResult, corrupted: np.ndarray) -> list[int]:
    """Per round, how many rescued rows were truly corrupted (evaluation only)."""
    corrupted = np.asarray(corrupted, dtype=bool)
    return [int(np.sum(corrupted[d.index[d.rescued]])) for d in result.decisions]
