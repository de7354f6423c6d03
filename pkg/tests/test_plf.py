import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import random_theta
from ppln.errors import DomainError
from ppln.oracle import plain_integral, plain_potential, quad_integral
from ppln.plf import (SegmentSet, active_segment, endpoints_from_sizes, eval_smoothed, eval_unsmoothed,
                      integral_unsmoothed, normalize_eval, smoothing_weights)

TWO = SegmentSet([1.0, -1.0], [0.0, 1.0], [0.0, 0.5, 1.0])

seeds = st.integers(0, 2**32 - 1)


def test_construction_rejects_bad_shapes_and_endpoints():
    with pytest.raises(DomainError):
        SegmentSet([], [], [0.0])
    with pytest.raises(DomainError):
        SegmentSet([1.0], [0.0, 1.0], [0.0, 1.0])
    with pytest.raises(DomainError):
        SegmentSet([1.0, 1.0], [0.0, 0.0], [0.0, 0.6, 0.5])
    with pytest.raises(DomainError):
        SegmentSet([1.0], [0.0], [0.1, 1.0])
    with pytest.raises(DomainError):
        SegmentSet([1.0, 1.0], [0.0, 0.0], [0.0, 0.5, 0.99])
    with pytest.raises(DomainError):
        SegmentSet([1.0, 1.0], [0.0, 0.0], [0.0, 0.99995, 1.0])
    with pytest.raises(DomainError):
        SegmentSet([np.nan], [0.0], [0.0, 1.0])


def test_segment_set_is_immutable():
    with pytest.raises(ValueError):
        TWO.m[0] = 3.0


def test_from_sizes_validates():
    theta = SegmentSet.from_sizes([0, 0, 0], [1, 2, 3], [0.2, 0.3, 0.5])
    assert theta.t[-1] == 1.0 and np.allclose(theta.t, [0, 0.2, 0.5, 1])
    with pytest.raises(DomainError):
        endpoints_from_sizes([0.5, 0.6])
    with pytest.raises(DomainError):
        endpoints_from_sizes([1.2, -0.2])


def test_active_segment_half_open():
    assert active_segment(TWO, 0.0) == 1
    assert active_segment(TWO, 0.4999) == 1
    assert active_segment(TWO, 0.5) == 2
    assert active_segment(TWO, 1.0) == 2


def test_hand_examples():
    assert eval_unsmoothed(TWO, 0.25) == 0.25
    assert eval_unsmoothed(TWO, 0.75) == 0.25
    assert eval_unsmoothed(TWO, 0.5) == 0.5
    assert integral_unsmoothed(TWO) == pytest.approx(0.125 + (-0.375 + 0.5))
    assert normalize_eval(TWO, 0.0, 0.25) == pytest.approx(0.0)
    const = SegmentSet.uniform(3, m=[0, 0, 0], b=[2.0, 2.0, 2.0])
    for tau in (0.0, 0.3, 1.0):
        assert normalize_eval(const, 5.0, tau) == pytest.approx(5.0, abs=1e-15)
        assert normalize_eval(const, 5.0, tau, 7.0) == pytest.approx(5.0, abs=1e-15)


def test_tau_and_temperature_domain():
    for bad in (-0.1, 1.1, np.nan):
        with pytest.raises(DomainError):
            eval_unsmoothed(TWO, bad)
    for bad in (0.0, -1.0, np.inf):
        with pytest.raises(DomainError):
            eval_smoothed(TWO, 0.3, bad)
    with pytest.raises(DomainError):
        eval_smoothed(TWO, 0.3, None)


def test_smoothing_weights_at_boundary_and_edges():
    w = smoothing_weights(TWO, 0.5, 10.0)
    assert w.i == 2 and w.w_left == pytest.approx(0.5) and w.w_right == 0.0
    w = smoothing_weights(TWO, 0.0, 10.0)
    assert w.w_left == 0.0 and w.i == 1
    one = SegmentSet([1.0], [2.0], [0.0, 1.0])
    w = smoothing_weights(one, 0.3, 5.0)
    assert w.w_left == 0.0 and w.w_right == 0.0
    assert eval_smoothed(one, 0.3, 5.0) == eval_unsmoothed(one, 0.3)


def test_extreme_temperature_is_finite():
    for tau in (0.0, 0.25, 0.5, 0.5 + 1e-12, 1.0):
        v = eval_smoothed(TWO, tau, 1e12)
        assert np.isfinite(v)


@settings(max_examples=200, deadline=None)
@given(seeds, st.floats(0, 1), st.floats(1e-2, 1e5))
def test_weights_are_valid(seed, tau, T):
    theta = random_theta(np.random.default_rng(seed))
    w = smoothing_weights(theta, tau, T)
    assert 0 <= w.w_left <= 1 and 0 <= w.w_right <= 1
    assert w.w_left + w.w_right <= 1 + 1e-15
    assert 1 <= w.i <= theta.n
    if w.i == 1:
        assert w.w_left == 0.0
    if w.i == theta.n:
        assert w.w_right == 0.0


@settings(max_examples=200, deadline=None)
@given(seeds, st.floats(0, 1), st.floats(0.5, 1e4))
def test_matches_plain_recomputation(seed, tau, T):
    theta = random_theta(np.random.default_rng(seed))
    m, b, t = theta.m.tolist(), theta.b.tolist(), theta.t.tolist()
    assert eval_unsmoothed(theta, tau) == pytest.approx(plain_potential(m, b, t, tau), abs=1e-12)
    assert eval_smoothed(theta, tau, T) == pytest.approx(plain_potential(m, b, t, tau, T), abs=1e-12)
    assert integral_unsmoothed(theta) == pytest.approx(plain_integral(m, b, t), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds, st.floats(-1e3, 1e3))
def test_mean_identity_by_quadrature(seed, v_bar):
    theta = random_theta(np.random.default_rng(seed))
    shift = v_bar - integral_unsmoothed(theta)
    f = lambda x: theta(x) + shift
    assert quad_integral(f, 5000, breakpoints=theta.t) == pytest.approx(v_bar, abs=1e-8 * max(1, abs(v_bar)))


@settings(max_examples=100, deadline=None)
@given(seeds, st.floats(0, 1), st.floats(1e-2, 1e6), st.floats(-5, 5), st.floats(-5, 5))
def test_single_global_line_is_unchanged_by_smoothing(seed, tau, T, a, c):
    theta = random_theta(np.random.default_rng(seed))
    line = theta.replace(m=np.full(theta.n, a), b=np.full(theta.n, c))
    assert eval_smoothed(line, tau, T) == pytest.approx(a * tau + c, abs=1e-13)


@settings(max_examples=100, deadline=None)
@given(seeds, st.floats(0, 1))
def test_smoothing_limit_bound(seed, tau):
    theta = random_theta(np.random.default_rng(seed))
    d = float(np.min(np.abs(theta.t[1:-1] - tau), initial=1.0))
    scale = np.max(np.abs(theta.m)) + np.max(np.abs(theta.b))
    for T in (10.0, 100.0, 1e3):
        gap = abs(eval_smoothed(theta, tau, T) - eval_unsmoothed(theta, tau))
        assert gap <= 2 * scale * np.exp(-T * d) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), seeds, st.floats(-30, 30))
def test_softmax_sizes_give_partition(n, seed, scale):
    z = np.random.default_rng(seed).normal(size=n) * scale
    s = np.exp(z - z.max())
    s /= s.sum()
    # a size below the float spacing next to 1 cannot yield a distinct endpoint
    assume(np.all(s >= 1e-15))
    t = endpoints_from_sizes(s)
    assert t[-1] == 1.0 and t[0] == 0.0 and np.all(np.diff(t) > 0)


def test_json_round_trip_exact(rng):
    for _ in range(20):
        theta = random_theta(rng)
        text = theta.to_json()
        assert set(json.loads(text)) == {"m", "b", "t"}
        assert SegmentSet.from_json(text) == theta


def test_vectorized_call_matches_scalar(rng):
    theta = random_theta(rng, 4)
    taus = rng.uniform(size=50)
    assert np.array_equal(theta(taus), [eval_unsmoothed(theta, x) for x in taus])
    assert np.allclose(theta(taus, 30.0), [eval_smoothed(theta, x, 30.0) for x in taus], atol=1e-14)
