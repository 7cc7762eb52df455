import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from noisy_sei import augment as A
from noisy_sei.augment import AugmentConfig, AugOp

signals = hnp.arrays(np.float64, st.tuples(st.just(2), st.integers(16, 96)),
                     elements=st.floats(-5, 5, allow_nan=False))


def _x(length=64, seed=0):
    return np.random.default_rng(seed).normal(size=(2, length))


def test_seven_ops_and_defaults():
    assert len(A.ALL_OPS) == 7
    c = AugmentConfig()
    assert (c.scaling_std, c.magwarp_std, c.magwarp_knots, c.timewarp_std, c.timewarp_knots) == (0.1, 0.2, 4, 0.2, 4)
    assert (c.max_segments, c.slice_ratio, c.warp_window_ratio, c.aug_count_range) == (4, 0.9, 0.1, (2, 4))


@pytest.mark.parametrize("kw", [dict(scaling_std=-1), dict(magwarp_knots=0), dict(max_segments=0),
                                dict(slice_ratio=0.0), dict(warp_window_ratio=1.5),
                                dict(aug_count_range=(0, 3)), dict(aug_count_range=(3, 8))])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        AugmentConfig(**kw)


# amplitude scaling

def test_amplitude_zero_sigma_identity():
    x = _x()
    assert np.array_equal(A.amplitude_scaling(x, 0.0, 3), x)


def test_amplitude_logged_factor():
    y = A.amplitude_scaling(np.ones((2, 16)), 0.1, 0, scale=1.07)
    assert np.all(y == 1.07)


@given(st.integers(0, 10_000))
def test_amplitude_single_factor(seed):
    x = _x(32) + 10.0
    r = A.amplitude_scaling(x, 0.1, seed) / x
    assert np.allclose(r, r[0, 0])


# magnitude warp

def test_magwarp_zero_sigma_identity():
    x = _x()
    assert np.allclose(A.magnitude_warp(x, 0.0, 4, 1), x, atol=1e-12)


def test_magwarp_constant_control_doubles():
    x = _x()
    assert np.allclose(A.magnitude_warp(x, 0.2, 4, 0, control=np.full(6, 2.0)), 2 * x)


@given(st.integers(1, 8), st.integers(0, 1000))
def test_spline_interpolates_knots(knots, seed):
    length = 97
    ctrl = np.random.default_rng(seed).normal(1, 0.3, knots + 2)
    pos = A.knot_positions(length, knots)
    from scipy.interpolate import CubicSpline
    cs = CubicSpline(pos, ctrl, bc_type="natural")
    assert np.allclose(cs(pos), ctrl, atol=1e-9)
    # integer knots are hit by the sampled curve too
    curve = A.spline_curve(length, ctrl)
    on_grid = np.isclose(pos, np.round(pos))
    assert np.allclose(curve[np.round(pos[on_grid]).astype(int)], ctrl[on_grid], atol=1e-9)


def test_spline_natural_boundary():
    ctrl = np.array([1.0, 2.0, 0.5, 1.5, 1.0, 0.7])
    from scipy.interpolate import CubicSpline
    cs = CubicSpline(A.knot_positions(61, 4), ctrl, bc_type="natural")
    assert abs(cs(0.0, 2)) < 1e-9 and abs(cs(60.0, 2)) < 1e-9


# sign flip / channel permutation

def test_signflip_identity_and_swap():
    x = _x()
    assert np.array_equal(A.sign_flip_channel_perm(x, 0, flip=False, swap=False), x)
    pair = np.array([[1.0] * 4, [2.0] * 4])
    assert np.array_equal(A.sign_flip_channel_perm(pair, 0, flip=False, swap=True), pair[::-1])


@pytest.mark.parametrize("flip", [False, True])
@pytest.mark.parametrize("swap", [False, True])
def test_signflip_involution(flip, swap):
    x = _x()
    once = A.sign_flip_channel_perm(x, 0, flip=flip, swap=swap)
    assert np.array_equal(A.sign_flip_channel_perm(once, 0, flip=flip, swap=swap), x)


# temporal permutation

def test_permutation_single_segment_identity():
    x = _x()
    assert np.array_equal(A.temporal_permutation(x, 4, 0, order=np.array([0])), x)


def test_permutation_halves_swapped():
    x = np.arange(16.0).reshape(2, 8)
    y = A.temporal_permutation(x, 4, 0, order=np.array([1, 0]))
    assert np.array_equal(y[:, :4], x[:, 4:]) and np.array_equal(y[:, 4:], x[:, :4])


def test_permutation_multiset_1000_trials():
    x = _x(61)
    for seed in range(1000):
        y = A.temporal_permutation(x, 4, seed)
        assert y.shape == x.shape
        assert np.array_equal(np.sort(y, axis=None), np.sort(x, axis=None))


def test_segment_bounds_cover():
    b = A.segment_bounds(10, 3)
    assert b == [(0, 3), (3, 6), (6, 10)]


# time warp

def test_timewarp_zero_sigma_identity():
    x = _x()
    assert np.allclose(A.time_warp(x, 0.0, 4, 5), x, atol=1e-6)


@given(st.integers(0, 10_000), st.floats(0, 2))
def test_timewarp_axis_endpoints_monotone(seed, sigma):
    ctrl = np.random.default_rng(seed).normal(1, sigma, 6)
    t = A.warped_time_axis(64, ctrl)
    assert t[0] == 0.0 and t[-1] == 63.0
    assert np.all(np.diff(t) > 0)


def test_timewarp_constant():
    x = np.full((2, 50), 3.25)
    assert np.allclose(A.time_warp(x, 0.5, 4, 2), 3.25)


# window slice

def test_slice_full_ratio_identity():
    x = _x()
    assert np.allclose(A.window_slice(x, 1.0, 0), x)


def test_slice_window_length():
    assert A._ceil_len(0.9, 512) == 461
    assert A._ceil_len(0.9, 128) == 116
    assert A._ceil_len(0.1, 10) == 1  # 0.1 * 10 is not exactly 1 in binary


def test_slice_constant():
    x = np.full((2, 40), -1.5)
    assert np.allclose(A.window_slice(x, 0.9, 3), -1.5)


# window warp

def test_windowwarp_unit_scale_identity():
    x = _x()
    assert np.allclose(A.window_warp(x, 0.1, 0, scale=1.0), x, atol=1e-6)


def test_windowwarp_constant():
    x = np.full((2, 64), 0.75)
    for s in range(10):
        assert np.allclose(A.window_warp(x, 0.1, s), 0.75)


@given(signals, st.integers(0, 10_000), st.sampled_from(list(AugOp)))
def test_every_op_keeps_length_and_finite(x, seed, op):
    y = A.apply_op(op, x, AugmentConfig(), np.random.default_rng(seed))
    assert y.shape == x.shape
    assert np.all(np.isfinite(y))


# composition

def test_views_deterministic():
    x = _x(128)
    a = A.make_views(x, AugmentConfig(), (1, 2, 3))
    b = A.make_views(x, AugmentConfig(), (1, 2, 3))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_views_op_counts_and_independence():
    x = _x(128)
    trace = []
    for s in range(200):
        A.make_views(x, AugmentConfig(), s, trace=trace)
    same = 0
    for ops1, ops2 in trace:
        for ops in (ops1, ops2):
            assert 2 <= len(ops) <= 4
            assert len(set(ops)) == len(ops)
        same += ops1 == ops2
    # independent draws agree rarely
    assert same < 20
    counts = {len(o) for t in trace for o in t}
    assert counts == {2, 3, 4}


def test_augment_reports_ops_applied():
    x = _x(64)
    y, ops = A.augment(x, AugmentConfig(aug_count_range=(1, 1)), 0)
    assert len(ops) == 1 and y.shape == x.shape
