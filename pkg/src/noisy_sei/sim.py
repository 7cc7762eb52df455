"""Synthetic emitter simulator.

Each emitter is a fixed set of transmitter impairments applied to a
random QPSK baseband, followed by a flat-fading channel and AWGN:

    r = h * f_hw(x) + n

Signals are ``(2, L)`` real arrays, row 0 = I, row 1 = Q.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._rng import SeedLike

MIN_LENGTH = 16
NOISELESS = math.inf  # snr_db sentinel: AWGN disabled

RRC_ROLLOFF = 0.35
SAMPLES_PER_SYMBOL = 4
RRC_SPAN = 8  # symbols


class InvalidSpecError(ValueError):
    """A simulator argument violates its documented range."""


@dataclass(frozen=True)
class EmitterProfile:
    iq_gain_imbalance: float = 1.0
    iq_phase_skew: float = 0.0
    phase_noise_step_std: float = 0.0
    pa_cubic_coeff: complex = 0j
    dc_offset: complex = 0j

    def __post_init__(self):
        if not self.iq_gain_imbalance > 0:
            raise InvalidSpecError(f"iq_gain_imbalance must be > 0, got {self.iq_gain_imbalance}")
        if not self.phase_noise_step_std >= 0:
            raise InvalidSpecError(
                f"phase_noise_step_std must be >= 0, got {self.phase_noise_step_std}")


@dataclass(frozen=True)
class ChannelParams:
    fading_coeff_std: float = 0.0
    snr_db: float = NOISELESS

    def __post_init__(self):
        if not self.fading_coeff_std >= 0:
            raise InvalidSpecError(f"fading_coeff_std must be >= 0, got {self.fading_coeff_std}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InvalidSpecError(f"snr_db must be finite or the NOISELESS sentinel, got {self.snr_db}")


@dataclass(frozen=True)
class SynthDatasetSpec:
    num_classes: int
    samples_per_class: int
    signal_length: int
    seed: int
    profiles: tuple[EmitterProfile, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidSpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise InvalidSpecError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.signal_length < MIN_LENGTH:
            raise InvalidSpecError(
                f"signal_length must be >= {MIN_LENGTH}, got {self.signal_length}")
        if len(self.profiles) != self.num_classes:
            raise InvalidSpecError(
                f"profiles must have num_classes={self.num_classes} entries, got {len(self.profiles)}")
        if self.seed < 0:
            raise InvalidSpecError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class LabeledSignals:
    """Signals ``(N, 2, L)`` with integer labels and an optional split.

    ``split`` holds one of TRAIN/VAL/TEST (see ``label_noise``) per sample,
    or is ``None`` before splitting.
    """

    signals: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def with_split(self, split: np.ndarray) -> "LabeledSignals":
        return LabeledSignals(self.signals, self.labels, self.num_classes, np.asarray(split))


def to_complex(x: np.ndarray) -> np.ndarray:
    return x[0] + 1j * x[1]


def from_complex(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag])


def rrc_taps(rolloff: float = RRC_ROLLOFF, sps: int = SAMPLES_PER_SYMBOL,
             span: int = RRC_SPAN) -> np.ndarray:
    """Unit-energy root-raised-cosine filter taps."""
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0.0:
            h[i] = 1.0 + b * (4 / np.pi - 1)
        elif b > 0 and abs(abs(ti) - 1 / (4 * b)) < 1e-12:
            h[i] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                       + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    return h / np.sqrt(np.sum(h ** 2))


def generate_baseband(length: int, seed: SeedLike) -> np.ndarray:
    """Random pulse-shaped QPSK with unit mean power, as a ``(2, length)`` array."""
    if length < MIN_LENGTH:
        raise InvalidSpecError(f"length must be >= {MIN_LENGTH}, got {length}")
    g = _rng.rng(seed)
    taps = rrc_taps()
    n_sym = -(-length // SAMPLES_PER_SYMBOL) + RRC_SPAN
    bits = g.integers(0, 2, size=(2, n_sym))
    symbols = ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)
    up = np.zeros(n_sym * SAMPLES_PER_SYMBOL, dtype=complex)
    up[::SAMPLES_PER_SYMBOL] = symbols
    shaped = np.convolve(up, taps, mode="full")
    # skip the filter transient
    start = len(taps) // 2 + (RRC_SPAN // 2) * SAMPLES_PER_SYMBOL
    x = shaped[start:start + length]
    x = x / np.sqrt(np.mean(np.abs(x) ** 2))
    return from_complex(x)


def apply_impairments(x: np.ndarray, profile: EmitterProfile, seed: SeedLike) -> np.ndarray:
    """Transmitter chain: I/Q imbalance, phase noise, cubic PA, DC offset."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("input signal contains non-finite values")
    g = _rng.rng(seed)
    i, q = x[0], x[1]
    phi = profile.iq_phase_skew
    if profile.iq_gain_imbalance != 1.0 or phi != 0.0:
        i, q = profile.iq_gain_imbalance * i, np.cos(phi) * q - np.sin(phi) * i
    z = i + 1j * q

    steps = g.normal(0.0, 1.0, size=z.shape[-1])
    if profile.phase_noise_step_std > 0:
        z = z * np.exp(1j * np.cumsum(profile.phase_noise_step_std * steps))
    if profile.pa_cubic_coeff != 0:
        z = z + profile.pa_cubic_coeff * z * np.abs(z) ** 2
    if profile.dc_offset != 0:
        z = z + profile.dc_offset
    return from_complex(z)


def apply_channel(x: np.ndarray, channel: ChannelParams, seed: SeedLike) -> np.ndarray:
    """Flat fading (one complex gain per signal, centred on 1) plus AWGN."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("input signal contains non-finite values")
    g = _rng.rng(seed)
    z = to_complex(x)
    fade = g.normal(0.0, 1.0, size=2)
    noise = g.normal(0.0, 1.0, size=(2, z.shape[-1]))
    if channel.fading_coeff_std > 0:
        h = 1.0 + channel.fading_coeff_std * (fade[0] + 1j * fade[1]) / np.sqrt(2)
        z = h * z
    if channel.snr_db != NOISELESS:
        p_sig = np.mean(np.abs(z) ** 2)
        p_noise = p_sig / 10 ** (channel.snr_db / 10)
        z = z + np.sqrt(p_noise / 2) * (noise[0] + 1j * noise[1])
    return from_complex(z)


def make_profiles(num_classes: int, seed: int = 0) -> tuple[EmitterProfile, ...]:
    """Evenly spread impairment profiles, one per emitter.

    Every parameter takes ``num_classes`` equally spaced values over a fixed
    range; each parameter uses its own seeded permutation of the classes so
    no two emitters share a parameter value.
    """
    if num_classes < 2:
        raise InvalidSpecError(f"num_classes must be >= 2, got {num_classes}")
    g = _rng.rng(seed, _rng.STREAM_PROFILES)
    grid = np.linspace(0.0, 1.0, num_classes)

    def spread(lo, hi):
        return lo + (hi - lo) * grid[g.permutation(num_classes)]

    # gains stay >= 1 so an I/Q swap never maps one emitter onto another
    gain = spread(1.0, 1.5)
    skew = spread(-0.35, 0.35)
    pn = spread(0.0, 0.04)
    pa_mag = spread(0.0, 0.4)
    pa_ang = spread(-0.6, 0.6)
    dc_mag = spread(0.05, 0.3)
    dc_ang = g.uniform(-np.pi, np.pi, size=num_classes)
    return tuple(
        EmitterProfile(
            iq_gain_imbalance=float(gain[c]),
            iq_phase_skew=float(skew[c]),
            phase_noise_step_std=float(pn[c]),
            pa_cubic_coeff=complex(-pa_mag[c] * np.exp(1j * pa_ang[c])),
            dc_offset=complex(dc_mag[c] * np.exp(1j * dc_ang[c])),
        )
        for c in range(num_classes)
    )


def default_spec(num_classes: int = 4, samples_per_class: int = 200, signal_length: int = 128,
                 seed: int = 0, fading_coeff_std: float = 0.1, snr_db: float = 25.0) -> SynthDatasetSpec:
    return SynthDatasetSpec(
        num_classes=num_classes,
        samples_per_class=samples_per_class,
        signal_length=signal_length,
        seed=seed,
        profiles=make_profiles(num_classes, seed),
        channel=ChannelParams(fading_coeff_std, snr_db),
    )


def synth_sample(spec: SynthDatasetSpec, index: int) -> np.ndarray:
    label = index // spec.samples_per_class
    x = generate_baseband(spec.signal_length, (spec.seed, _rng.STREAM_BASEBAND, index))
    x = apply_impairments(x, spec.profiles[label], (spec.seed, _rng.STREAM_IMPAIR, index))
    return apply_channel(x, spec.channel, (spec.seed, _rng.STREAM_CHANNEL, index))


def synth_dataset(spec: SynthDatasetSpec) -> LabeledSignals:
    """``num_classes * samples_per_class`` signals, class-major order."""
    n = spec.num_classes * spec.samples_per_class
    signals = np.stack([synth_sample(spec, i) for i in range(n)])
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    return LabeledSignals(signals, labels, spec.num_classes)
