"""I/Q augmentations used to build the two contrastive views of a signal.

Every random op is split into a parameter draw and a deterministic core
(``scale``, ``envelope``, ``order`` ...) so tests can force the draw.
All ops take and return ``(2, L)`` arrays.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import _rng
from ._rng import SeedLike

WINDOW_WARP_SCALES = (0.5, 2.0)
MIN_WARP_SPEED = 1e-3


class AugOp(enum.Enum):
    AMPLITUDE_SCALING = "amplitude_scaling"
    MAGNITUDE_WARP = "magnitude_warp"
    SIGN_FLIP_CHANNEL_PERM = "sign_flip_channel_perm"
    TEMPORAL_PERMUTATION = "temporal_permutation"
    TIME_WARP = "time_warp"
    WINDOW_SLICE = "window_slice"
    WINDOW_WARP = "window_warp"


ALL_OPS = tuple(AugOp)


@dataclass(frozen=True)
class AugmentConfig:
    scaling_std: float = 0.1
    magwarp_std: float = 0.2
    magwarp_knots: int = 4
    timewarp_std: float = 0.2
    timewarp_knots: int = 4
    max_segments: int = 4
    slice_ratio: float = 0.9
    warp_window_ratio: float = 0.1
    aug_count_range: tuple[int, int] = (2, 4)

    def __post_init__(self):
        for name in ("scaling_std", "magwarp_std", "timewarp_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.magwarp_knots < 1 or self.timewarp_knots < 1:
            raise ValueError("knot counts must be >= 1")
        if self.max_segments < 1:
            raise ValueError("max_segments must be >= 1")
        if not (0 < self.slice_ratio <= 1):
            raise ValueError("slice_ratio must lie in (0, 1]")
        if not (0 < self.warp_window_ratio <= 1):
            raise ValueError("warp_window_ratio must lie in (0, 1]")
        lo, hi = self.aug_count_range
        if not (1 <= lo <= hi <= len(ALL_OPS)):
            raise ValueError(f"aug_count_range must lie within [1, {len(ALL_OPS)}], got {self.aug_count_range}")


def _ceil_len(ratio: float, length: int) -> int:
    return math.ceil(round(ratio * length, 9))


def resample(x: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation of each channel at fractional sample positions."""
    grid = np.arange(x.shape[-1])
    return np.stack([np.interp(positions, grid, ch) for ch in x])


def resize(x: np.ndarray, new_length: int) -> np.ndarray:
    return resample(x, np.linspace(0.0, x.shape[-1] - 1, new_length))


def knot_positions(length: int, knots: int) -> np.ndarray:
    return np.linspace(0.0, length - 1, knots + 2)


def spline_curve(length: int, control: np.ndarray) -> np.ndarray:
    """Natural cubic spline through ``control`` at equally spaced knots, sampled at 0..L-1."""
    pos = knot_positions(length, len(control) - 2)
    return CubicSpline(pos, control, bc_type="natural")(np.arange(length))


def _check_length(x, knots):
    if x.shape[-1] < knots + 2:
        raise ValueError(f"signal length {x.shape[-1]} is shorter than {knots + 2} control points")


# --- amplitude group ---------------------------------------------------------

def amplitude_scaling(x: np.ndarray, sigma: float, seed: SeedLike, scale: float | None = None) -> np.ndarray:
    eps = _rng.rng(seed).normal(1.0, sigma) if scale is None else scale
    return eps * x


def magnitude_warp(x: np.ndarray, sigma: float, knots: int, seed: SeedLike,
                   control: np.ndarray | None = None) -> np.ndarray:
    _check_length(x, knots)
    if control is None:
        control = _rng.rng(seed).normal(1.0, sigma, size=knots + 2)
    return x * spline_curve(x.shape[-1], np.asarray(control, dtype=float))


def sign_flip_channel_perm(x: np.ndarray, seed: SeedLike, flip: bool | None = None,
                           swap: bool | None = None) -> np.ndarray:
    g = _rng.rng(seed)
    draw_flip, draw_swap = g.random(2) < 0.5
    flip = draw_flip if flip is None else flip
    swap = draw_swap if swap is None else swap
    y = x[::-1] if swap else x
    return -y if flip else y.copy()


# --- temporal group ----------------------------------------------------------

def segment_bounds(length: int, segments: int) -> list[tuple[int, int]]:
    """``segments`` contiguous pieces of ``length // segments``; the last takes the remainder."""
    size = length // segments
    bounds = [(s * size, (s + 1) * size) for s in range(segments)]
    bounds[-1] = (bounds[-1][0], length)
    return bounds


def temporal_permutation(x: np.ndarray, max_segments: int, seed: SeedLike,
                         order: np.ndarray | None = None) -> np.ndarray:
    if order is None:
        g = _rng.rng(seed)
        segments = int(g.integers(1, max_segments + 1))
        order = g.permutation(segments)
    bounds = segment_bounds(x.shape[-1], len(order))
    return np.concatenate([x[:, slice(*bounds[k])] for k in order], axis=1)


def warped_time_axis(length: int, control: np.ndarray) -> np.ndarray:
    """Monotone time axis from clamped spline speeds, rescaled onto [0, L-1]."""
    speed = np.maximum(spline_curve(length, control), MIN_WARP_SPEED)
    t = np.cumsum(speed)
    t = (t - t[0]) / (t[-1] - t[0]) * (length - 1)
    t[0], t[-1] = 0.0, length - 1.0
    return t


def time_warp(x: np.ndarray, sigma: float, knots: int, seed: SeedLike,
              control: np.ndarray | None = None) -> np.ndarray:
    _check_length(x, knots)
    if control is None:
        control = _rng.rng(seed).normal(1.0, sigma, size=knots + 2)
    return resample(x, warped_time_axis(x.shape[-1], np.asarray(control, dtype=float)))


# --- window group ------------------------------------------------------------

def window_slice(x: np.ndarray, ratio: float, seed: SeedLike, start: int | None = None) -> np.ndarray:
    length = x.shape[-1]
    width = _ceil_len(ratio, length)
    if start is None:
        start = int(_rng.rng(seed).integers(0, length - width + 1))
    return resize(x[:, start:start + width], length)


def window_warp(x: np.ndarray, ratio: float, seed: SeedLike, scale: float | None = None,
                start: int | None = None) -> np.ndarray:
    length = x.shape[-1]
    width = max(_ceil_len(ratio, length), 2)
    g = _rng.rng(seed)
    if scale is None:
        scale = WINDOW_WARP_SCALES[int(g.integers(0, len(WINDOW_WARP_SCALES)))]
    if start is None:
        start = int(g.integers(0, length - width + 1))
    if scale == 1.0:
        return x.copy()
    stop = start + width
    warped = resize(x[:, start:stop], max(int(round(width * scale)), 2))
    y = np.concatenate([x[:, :start], warped, x[:, stop:]], axis=1)
    return resize(y, length)


# --- composition -------------------------------------------------------------

def apply_op(op: AugOp, x: np.ndarray, cfg: AugmentConfig, g: np.random.Generator) -> np.ndarray:
    if op is AugOp.AMPLITUDE_SCALING:
        return amplitude_scaling(x, cfg.scaling_std, g)
    if op is AugOp.MAGNITUDE_WARP:
        return magnitude_warp(x, cfg.magwarp_std, cfg.magwarp_knots, g)
    if op is AugOp.SIGN_FLIP_CHANNEL_PERM:
        return sign_flip_channel_perm(x, g)
    if op is AugOp.TEMPORAL_PERMUTATION:
        return temporal_permutation(x, cfg.max_segments, g)
    if op is AugOp.TIME_WARP:
        return time_warp(x, cfg.timewarp_std, cfg.timewarp_knots, g)
    if op is AugOp.WINDOW_SLICE:
        return window_slice(x, cfg.slice_ratio, g)
    if op is AugOp.WINDOW_WARP:
        return window_warp(x, cfg.warp_window_ratio, g)
    raise ValueError(f"unknown op {op!r}")


def sample_ops(cfg: AugmentConfig, g: np.random.Generator) -> list[AugOp]:
    lo, hi = cfg.aug_count_range
    n = int(g.integers(lo, hi + 1))
    return [ALL_OPS[i] for i in g.choice(len(ALL_OPS), size=n, replace=False)]


def augment(x: np.ndarray, cfg: AugmentConfig, seed: SeedLike) -> tuple[np.ndarray, list[AugOp]]:
    """One view: a random subset of ops applied in the drawn order."""
    g = _rng.rng(seed)
    ops = sample_ops(cfg, g)
    y = np.asarray(x, dtype=float)
    for op in ops:
        y = apply_op(op, y, cfg, g)
    return y, ops


def make_views(x: np.ndarray, cfg: AugmentConfig, seed: SeedLike,
               trace: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of ``x``.

    The views draw from disjoint child streams of ``seed``.  When ``trace``
    is a list, the two op lists are appended to it.
    """
    s1, s2 = _rng.seed_seq(seed).spawn(2)
    v1, ops1 = augment(x, cfg, np.random.default_rng(s1))
    v2, ops2 = augment(x, cfg, np.random.default_rng(s2))
    if trace is not None:
        trace.append((ops1, ops2))
    return v1, v2
