"""Complex-valued convolutional encoder and the heads built on it.

Feature maps carry complex channels as ``[Re(c_1..c_n) | Im(c_1..c_n)]``
along axis 1.  A raw I/Q signal is therefore one complex channel: row 0
is the real part, row 1 the imaginary part.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import engine as E
from .engine import BatchNorm1d, Dropout, Linear, Module, Parameter, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    num_blocks: int = 3
    filters: int = 8
    kernel_len: int = 7
    embed_dim: int = 64

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.filters < 1 or self.embed_dim < 1:
            raise ValueError("filters and embed_dim must be positive")
        if self.kernel_len % 2 != 1:
            raise ValueError("kernel_len must be odd")

    def check_length(self, length: int) -> int:
        """Sequence length after all poolings; raises if pooling cannot divide ``length``."""
        factor = 2 ** self.num_blocks
        if length < factor or length % factor:
            raise ValueError(f"signal length {length} is incompatible with {self.num_blocks} "
                             f"poolings (needs a multiple of {factor})")
        return length // factor


class ComplexConv1d(Module):
    """Complex convolution from two real kernels.

    Re(y) = W_re * Re(x) - W_im * Im(x)
    Im(y) = W_re * Im(x) + W_im * Re(x)

    Implemented as one real convolution with the block kernel
    ``[[W_re, -W_im], [W_im, W_re]]``.
    """

    def __init__(self, c_in: int, c_out: int, kernel_len: int, rng: np.random.Generator | None = None):
        self.c_in, self.c_out = c_in, c_out
        bound = 1.0 / np.sqrt(2 * c_in * kernel_len)
        shape = (c_out, c_in, kernel_len)
        if rng is None:
            self.w_re = Parameter(np.zeros(shape))
            self.w_im = Parameter(np.zeros(shape))
        else:
            self.w_re = Parameter(rng.uniform(-bound, bound, shape))
            self.w_im = Parameter(rng.uniform(-bound, bound, shape))

    def block_kernel(self) -> Tensor:
        top = E.concat([self.w_re, E.neg(self.w_im)], axis=1)
        bottom = E.concat([self.w_im, self.w_re], axis=1)
        return E.concat([top, bottom], axis=0)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2:
            raise E.ShapeError(f"complex input needs an even channel count, got {x.shape[1]}")
        if x.shape[1] != 2 * self.c_in:
            raise E.ShapeError(f"expected {2 * self.c_in} channels, got {x.shape[1]}")
        return E.conv1d(x, self.block_kernel())


def complex_conv_forward(x, layer: ComplexConv1d) -> Tensor:
    return layer(E.as_tensor(x))


class Encoder(Module):
    """N_b x (complex conv -> ReLU -> batchnorm -> maxpool/2), flatten, linear, ReLU."""

    def __init__(self, cfg: EncoderConfig, signal_length: int, rng: np.random.Generator):
        self.cfg = cfg
        self.signal_length = signal_length
        out_len = cfg.check_length(signal_length)
        self.convs = []
        self.norms = []
        c_in = 1
        for _ in range(cfg.num_blocks):
            self.convs.append(ComplexConv1d(c_in, cfg.filters, cfg.kernel_len, rng))
            self.norms.append(BatchNorm1d(2 * cfg.filters))
            c_in = cfg.filters
        self.fc = Linear(2 * cfg.filters * out_len, cfg.embed_dim, rng)

    def forward(self, x) -> Tensor:
        x = E.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != 2 or x.shape[2] != self.signal_length:
            raise E.ShapeError(f"encoder expects (batch, 2, {self.signal_length}), got {x.shape}")
        for conv, norm in zip(self.convs, self.norms):
            x = E.maxpool1d(norm(E.relu(conv(x))), 2)
        x = E.reshape(x, (x.shape[0], -1))
        return E.relu(self.fc(x))


class ProjectionHead(Module):
    """``W3 s(W2 s(W1 z))`` with ``s`` = batchnorm then ReLU; no biases."""

    def __init__(self, embed_dim: int, proj_dim: int, rng: np.random.Generator,
                 hidden_dim: int | None = None):
        if proj_dim % 4:
            raise ValueError(f"projection dim must be divisible by 4, got {proj_dim}")
        hidden_dim = hidden_dim or 4 * embed_dim
        self.embed_dim = embed_dim
        self.l1 = Linear(embed_dim, hidden_dim, rng, bias=False)
        self.n1 = BatchNorm1d(hidden_dim)
        self.l2 = Linear(hidden_dim, proj_dim // 4, rng, bias=False)
        self.n2 = BatchNorm1d(proj_dim // 4)
        self.l3 = Linear(proj_dim // 4, proj_dim, rng, bias=False)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.embed_dim:
            raise E.ShapeError(f"projection head expects (batch, {self.embed_dim}), got {z.shape}")
        h = E.relu(self.n1(self.l1(z)))
        h = E.relu(self.n2(self.l2(h)))
        return self.l3(h)


def project(z, head: ProjectionHead) -> Tensor:
    return head(E.as_tensor(z))


class ClassifierHead(Module):
    """Linear -> batchnorm -> ReLU -> dropout -> linear to class logits."""

    def __init__(self, embed_dim: int, num_classes: int, rng: np.random.Generator,
                 hidden_dim: int = 256, dropout: float = 0.5):
        self.embed_dim = embed_dim
        self.l1 = Linear(embed_dim, hidden_dim, rng)
        self.n1 = BatchNorm1d(hidden_dim)
        self.drop = Dropout(dropout, rng)
        self.out = Linear(hidden_dim, num_classes, rng)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.embed_dim:
            raise E.ShapeError(f"classifier head expects (batch, {self.embed_dim}), got {z.shape}")
        return self.out(self.drop(E.relu(self.n1(self.l1(z)))))


class ContrastiveNet(Module):
    """Encoder plus projection head; the unit tracked by the momentum encoder."""

    def __init__(self, encoder: Encoder, head: ProjectionHead):
        self.encoder = encoder
        self.head = head

    def forward(self, x) -> Tensor:
        return self.head(self.encoder(x))


class CVNNClassifier(Module):
    """End-to-end classifier on raw I/Q signals."""

    def __init__(self, enc_cfg: EncoderConfig, signal_length: int, num_classes: int,
                 rng: np.random.Generator, hidden_dim: int = 256, dropout: float = 0.5):
        self.encoder = Encoder(enc_cfg, signal_length, rng)
        self.head = ClassifierHead(enc_cfg.embed_dim, num_classes, rng, hidden_dim, dropout)
        self.arch = {"kind": "cvnn_classifier", "encoder": asdict(enc_cfg),
                     "signal_length": signal_length, "num_classes": num_classes,
                     "hidden_dim": hidden_dim, "dropout": dropout}

    def forward(self, x) -> Tensor:
        return self.head(self.encoder(x))


def classify(x, model: Module, batch_size: int = 256) -> np.ndarray:
    """Logits for a batch of inputs, evaluated without graph recording."""
    x = np.asarray(x)
    out = []
    with E.no_grad():
        for s in range(0, len(x), batch_size):
            out.append(model(E.Tensor(x[s:s + batch_size])).data)
    return np.concatenate(out) if out else np.zeros((0, 0))


def probabilities(logits: np.ndarray) -> np.ndarray:
    return E.softmax_np(np.asarray(logits, dtype=np.float64))
