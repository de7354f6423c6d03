import math

import numpy as np
import pytest

from conftest import random_theta
from ppln.errors import OracleError
from ppln.oracle import (FiniteDiffSpec, fd_gradient, grid_sup, naive_conv2d, normal_equations_line,
                         plain_integral, quad_integral, relative_error)


def test_finite_differences_on_a_known_function():
    g = fd_gradient(lambda p: float(np.sin(p[0]) * p[1] ** 2), [0.3, 2.0])
    assert g == pytest.approx([math.cos(0.3) * 4, 2 * 2 * math.sin(0.3)], rel=1e-8)


def test_finite_differences_reject_non_finite():
    with pytest.raises(OracleError):
        fd_gradient(lambda p: float("nan"), [1.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        FiniteDiffSpec(h=0)
    with pytest.raises(ValueError):
        FiniteDiffSpec(scheme="forward")
    assert FiniteDiffSpec().floor == pytest.approx(1e-4)


def test_relative_error_floor():
    assert relative_error([1e-9], [2e-9], floor=1e-4) < 1e-4
    assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)
    assert relative_error([], []) == 0.0


def test_plain_grid_quadrature_meets_its_jump_bound(rng):
    # the midpoint grid straddles each jump with one cell, costing at most |jump| * h / 2
    points = 100_000
    for _ in range(50):
        theta = random_theta(rng)
        jumps = [abs((theta.m[i] - theta.m[i - 1]) * theta.t[i] + theta.b[i] - theta.b[i - 1])
                 for i in range(1, theta.n)]
        bound = sum(jumps) / (2 * points) + 1e-12
        exact = plain_integral(theta.m.tolist(), theta.b.tolist(), theta.t.tolist())
        assert abs(quad_integral(theta, points) - exact) <= bound


def test_aligned_quadrature_is_exact_for_lines(rng):
    for _ in range(50):
        theta = random_theta(rng)
        exact = plain_integral(theta.m.tolist(), theta.b.tolist(), theta.t.tolist())
        assert quad_integral(theta, 1000, breakpoints=theta.t) == pytest.approx(exact, abs=1e-13)


def test_grid_sup_and_normal_equations():
    assert grid_sup(lambda x: x, lambda x: 0 * x, 11) == 1.0
    assert normal_equations_line([0, 1, 2], [1, 3, 5]) == pytest.approx((2.0, 1.0))


def test_naive_conv_with_stride_and_padding():
    x = np.arange(16.0).reshape(1, 4, 4)
    k = np.ones((1, 1, 2, 2))
    out = naive_conv2d(k, x, stride=2, padding=0)
    assert out[0].tolist() == [[10.0, 18.0], [42.0, 50.0]]
