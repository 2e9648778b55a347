import numpy as np
import pytest

from stratlangevin.estimators import builtin_observable
from stratlangevin.reference import (AccuracyError, CoverageError, QuadratureGrid, WARPED_BOX,
                                     expectation)
from stratlangevin.targets import make_quadratic, make_warped_gaussian

WARPED = make_warped_gaussian(0.05)
NAMES = ("x1", "x2", "x1x2", "x1sq", "x2sq", "norm2")


def warped_closed_form(name, b=0.05):
    # x1 ~ N(0, 50); given x1, x2 ~ N(100 b - b x1^2, 1/2)
    m1, m2, m4 = 0.0, 50.0, 3 * 50.0 ** 2
    mean_x2 = 100 * b - b * m2
    second_x2 = 0.5 + (100 * b) ** 2 - 2 * 100 * b * b * m2 + b * b * m4
    return {"x1": m1, "x2": mean_x2, "x1sq": m2, "x2sq": second_x2, "x1x2": 0.0,
            "norm2": m2 + second_x2}[name]


def test_gaussian_examples():
    assert expectation(make_quadratic(np.eye(2)), builtin_observable("norm2")).value == \
        pytest.approx(2.0, abs=1e-12)
    assert expectation(make_quadratic(np.diag([1.0, 0.1])), builtin_observable("x2sq")).value == \
        pytest.approx(10.0, abs=1e-12)


def test_gaussian_moments_match_covariance():
    S = np.array([[2.0, 0.6], [0.6, 0.5]])
    p = make_quadratic(S)
    C = np.linalg.inv(S)
    want = {"x1": 0.0, "x2": 0.0, "x1x2": C[0, 1], "x1sq": C[0, 0], "x2sq": C[1, 1],
            "norm2": C[0, 0] + C[1, 1]}
    for name in NAMES:
        e = expectation(p, builtin_observable(name))
        assert e.value == pytest.approx(want[name], abs=1e-12)
        assert e.error_estimate <= 1e-12


def test_warped_reference_matches_closed_form():
    assert warped_closed_form("norm2") == 69.25
    for name in NAMES:
        e = expectation(WARPED, builtin_observable(name))
        assert e.value == pytest.approx(warped_closed_form(name), abs=1e-8 * 70)
        assert e.relative_error <= 1e-8 or e.error_estimate <= 1e-8
        assert e.boundary_ratio <= 1e-12


def test_warped_x1_mean_vanishes():
    assert abs(expectation(WARPED, builtin_observable("x1")).value) <= 1e-10


def test_coverage_failure_is_detected():
    narrow = QuadratureGrid("legendre", 200, ((-60.0, 60.0), (-30.0, 110.0)))
    with pytest.raises(CoverageError):
        expectation(WARPED, builtin_observable("norm2"), narrow)
    tiny = QuadratureGrid("legendre", 50, ((-5.0, 5.0), (-5.0, 5.0)))
    with pytest.raises(CoverageError):
        expectation(make_quadratic(np.eye(2)), builtin_observable("norm2"), tiny)


def test_too_few_nodes_is_detected():
    coarse = QuadratureGrid("legendre", 40, WARPED_BOX)
    with pytest.raises(AccuracyError):
        expectation(WARPED, builtin_observable("norm2"), coarse)


def test_grid_validation():
    with pytest.raises(ValueError):
        QuadratureGrid("simpson", 10)
    with pytest.raises(ValueError):
        QuadratureGrid("legendre", 10)
    with pytest.raises(ValueError):
        QuadratureGrid("hermite", 0)
    with pytest.raises(ValueError):
        expectation(WARPED, builtin_observable("x1"), QuadratureGrid("hermite", 10))
    assert QuadratureGrid("hermite", 8).refined().nodes_per_axis == 16


def test_plain_callables_are_accepted():
    p = make_quadratic(np.eye(2))
    assert expectation(p, lambda x: x[..., 0] ** 4).value == pytest.approx(3.0, abs=1e-12)
