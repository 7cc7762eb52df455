"""Momentum-contrast pre-training and frozen feature extraction.

Nothing in this module accepts labels: ``pretrain`` sees only the signal
array, so the learned representation cannot depend on them.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from . import engine as E
from .augment import AugmentConfig, make_views
from .cvnn import ContrastiveNet, Encoder, EncoderConfig, ProjectionHead

log = logging.getLogger(__name__)

FEATURE_EPS = 1e-12
NORM_TOL = 1e-3


@dataclass(frozen=True)
class MoCoConfig:
    proj_dim: int = 16
    momentum: float = 0.99
    temperature: float = 0.03
    queue_size: int = 128
    epochs: int = 100
    lr: float = 3e-3
    batch_size: int = 64

    def __post_init__(self):
        if not (0 <= self.momentum < 1):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.queue_size < 1 or self.batch_size < 2 or self.epochs < 0:
            raise ValueError("queue_size >= 1, batch_size >= 2 and epochs >= 0 are required")
        if self.proj_dim % 4:
            raise ValueError(f"proj_dim must be divisible by 4, got {self.proj_dim}")


class ArchitectureMismatch(ValueError):
    pass


@dataclass(eq=False)
class MoCoState:
    query: ContrastiveNet
    key: ContrastiveNet
    queue: np.ndarray  # (K, d), unit rows
    cursor: int = 0
    momentum: float = 0.99
    temperature: float = 0.03


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def init_state(signal_length: int, enc_cfg: EncoderConfig, cfg: MoCoConfig, seed) -> MoCoState:
    g = _rng.rng(seed, _rng.STREAM_INIT)
    encoder = Encoder(enc_cfg, signal_length, g)
    head = ProjectionHead(enc_cfg.embed_dim, cfg.proj_dim, g)
    query = ContrastiveNet(encoder, head)
    key = query.clone()
    for p in key.parameters():
        p.requires_grad = False
    q = _rng.rng(seed, _rng.STREAM_QUEUE).normal(size=(cfg.queue_size, cfg.proj_dim))
    queue = _unit_rows(q).astype(E.default_dtype())
    return MoCoState(query, key, queue, 0, cfg.momentum, cfg.temperature)


def ema_update(key: E.Module, query: E.Module, momentum: float) -> None:
    """``theta_k <- m * theta_k + (1 - m) * theta_q`` for parameters and batchnorm buffers."""
    k_state, q_state = key.state_dict(), query.state_dict()
    if k_state.keys() != q_state.keys() or any(k_state[n].shape != q_state[n].shape for n in k_state):
        raise ArchitectureMismatch("key and query models differ in architecture")
    for name, k in k_state.items():
        k *= momentum
        k += (1.0 - momentum) * q_state[name]


def _check_unit(name: str, a: np.ndarray):
    # exact zero rows are what normalising a zero vector yields, so they pass
    norms = np.linalg.norm(np.asarray(a, dtype=np.float64).reshape(-1, a.shape[-1]), axis=1)
    dev = np.abs(norms[norms > 0] - 1.0)
    if dev.size and dev.max() > NORM_TOL:
        raise ValueError(f"{name} rows must be unit-norm (max deviation {dev.max():.2e})")


def info_nce(q, k, queue, temperature: float) -> E.Tensor:
    """Mean InfoNCE loss; the positive sits at logit index 0.

    ``k`` and ``queue`` are treated as constants.
    """
    q = E.as_tensor(q)
    k_data = k.data if isinstance(k, E.Tensor) else np.asarray(k, dtype=q.data.dtype)
    queue = np.asarray(queue, dtype=q.data.dtype)
    _check_unit("queries", q.data)
    _check_unit("keys", k_data)
    _check_unit("queue", queue)
    pos = E.tsum(E.mul(q, E.Tensor(k_data, dtype=q.data.dtype)), axis=1, keepdims=True)
    neg = E.matmul(q, E.Tensor(queue.T, dtype=q.data.dtype))
    logits = E.scale(E.concat([pos, neg], axis=1), 1.0 / temperature)
    return E.softmax_cross_entropy(logits, np.zeros(q.shape[0], dtype=np.int64))


def enqueue(queue: np.ndarray, cursor: int, keys: np.ndarray) -> int:
    """Overwrite the oldest queue rows with ``keys``; returns the new cursor."""
    keys = np.asarray(keys)
    _check_unit("keys", keys)
    idx = (cursor + np.arange(len(keys))) % len(queue)
    queue[idx] = keys
    return int((cursor + len(keys)) % len(queue))


@dataclass
class PretrainResult:
    state: MoCoState
    epoch_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def encoder(self) -> Encoder:
        return self.state.query.encoder


def _views(signals, idx, aug_cfg, seed, epoch):
    pairs = [make_views(signals[i], aug_cfg, (seed, _rng.STREAM_AUG, epoch, int(i))) for i in idx]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def train_step(state: MoCoState, opt: E.Adam, v1: np.ndarray, v2: np.ndarray) -> float:
    state.query.train()
    state.key.train()
    q = E.l2_normalize(state.query(E.Tensor(v1)), FEATURE_EPS)
    with E.no_grad():
        k = E.l2_normalize(state.key(E.Tensor(v2)), FEATURE_EPS).data
    loss = info_nce(q, k, state.queue, state.temperature)
    opt.zero_grad()
    loss.backward()
    opt.step()
    ema_update(state.key, state.query, state.momentum)
    state.cursor = enqueue(state.queue, state.cursor, k)
    return loss.item()


def pretrain(signals: np.ndarray, aug_cfg: AugmentConfig, enc_cfg: EncoderConfig,
             cfg: MoCoConfig, seed: int, state: MoCoState | None = None) -> PretrainResult:
    """Train the query encoder on unlabeled ``signals`` of shape (N, 2, L)."""
    signals = np.asarray(signals)
    if len(signals) < 2:
        raise ValueError("pre-training needs at least two signals")
    t0 = time.perf_counter()
    state = state or init_state(signals.shape[-1], enc_cfg, cfg, seed)
    opt = E.Adam(state.query.parameters(), lr=cfg.lr)
    result = PretrainResult(state)
    n = len(signals)
    for epoch in range(cfg.epochs):
        order = _rng.rng(seed, _rng.STREAM_SHUFFLE, epoch).permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            if len(idx) < 2:
                continue
            v1, v2 = _views(signals, idx, aug_cfg, seed, epoch)
            losses.append(train_step(state, opt, v1, v2))
        result.epoch_losses.append(float(np.mean(losses)))
        log.info("moco epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, result.epoch_losses[-1])
    result.seconds = time.perf_counter() - t0
    return result


def normalize_features(z: np.ndarray, eps: float = FEATURE_EPS) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z / (np.linalg.norm(z, axis=1, keepdims=True) + eps)


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Unit-norm backbone embeddings; row ``i`` belongs to dataset sample ``indices[i]``."""

    features: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.features)


def extract_features(encoder: Encoder, signals: np.ndarray, indices: np.ndarray | None = None,
                     batch_size: int = 256) -> FeatureBank:
    """Backbone-only embeddings in eval mode, l2-normalised."""
    signals = np.asarray(signals)
    encoder.eval()
    out = []
    with E.no_grad():
        for s in range(0, len(signals), batch_size):
            out.append(encoder(E.Tensor(signals[s:s + batch_size])).data)
    z = np.concatenate(out) if out else np.zeros((0, encoder.cfg.embed_dim))
    if indices is None:
        indices = np.arange(len(signals))
    return FeatureBank(normalize_features(z).astype(np.float32), np.asarray(indices, dtype=np.int64))
