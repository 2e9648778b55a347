import numpy as np
import pytest

from stratlangevin.perturbations import (CustomField, SkewMatrix, divergence_defect,
                                         ito_correction, make_field, remark_drift_equivalence)
from stratlangevin.targets import make_quadratic, make_warped_gaussian

J = SkewMatrix.canonical()
ISO = make_quadratic(np.eye(2))
ANISO = make_quadratic(np.diag([1.0, 0.1]))
WARPED = make_warped_gaussian(0.05)


def fd_jacobian(fn, x, h=1e-6):
    return np.array([(fn(x + h * e) - fn(x - h * e)) / (2 * h) for e in np.eye(len(x))]).T


def test_skew_matrix_validation():
    with pytest.raises(ValueError):
        SkewMatrix([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        SkewMatrix([[1e-13, 1.0], [-1.0, 0.0]])
    J3 = SkewMatrix.canonical(3)
    assert J3.J[0, 1] == 1.0 and J3.J[2, 2] == 0.0


def test_field_examples():
    x = np.array([1.0, 2.0])
    np.testing.assert_array_equal(make_field(0.0, 1.0, J, WARPED).value(x), [0.0, 0.0])
    f = make_field(1.0, 1.0, J, ISO)
    np.testing.assert_array_equal(f.value(x), [2.0, -1.0])
    np.testing.assert_allclose(fd_jacobian(f.value, x), f.jacobian(x), atol=1e-9)
    f = make_field(4.0, 0.5, J, ISO)
    np.testing.assert_array_equal(f.value(np.array([1.0, 0.0])), [0.0, -2.0])


def test_field_rejects_bad_input():
    with pytest.raises(ValueError):
        make_field(-1.0, 1.0, J, ISO)
    with pytest.raises(ValueError):
        make_field(1.0, 1.0, SkewMatrix.canonical(3), ISO)


@pytest.mark.parametrize("p", [ISO, ANISO, WARPED], ids=["iso", "aniso", "warped"])
@pytest.mark.parametrize("delta,theta", [(1, 1), (16, 0.5), (256, 1), (3.7, -0.3)])
def test_field_invariants(p, delta, theta):
    f = make_field(delta, theta, J, p)
    pts = np.random.default_rng(5).standard_normal((1000, 2)) * 3
    assert np.max(np.abs(divergence_defect(f, pts))) <= 1e-10
    assert np.max(remark_drift_equivalence(f, pts)) <= 1e-8
    np.testing.assert_allclose(f.value(pts), delta ** theta * p.gradient(pts) @ J.J.T, rtol=1e-14,
                               atol=1e-12)
    # g . grad V vanishes for skew J
    gv = np.sum(f.value(pts) * p.gradient(pts), axis=-1)
    assert np.max(np.abs(gv)) <= 1e-12 * np.max(np.abs(f.value(pts))) * np.max(np.abs(p.gradient(pts)))
    for x in pts[:20]:
        jac = f.jacobian(x)
        assert np.max(np.abs(fd_jacobian(f.value, x) - jac)) <= 1e-5 * max(1.0, np.max(np.abs(jac)))


def test_divergence_defect_examples():
    x = np.array([3.0, -2.0])
    assert divergence_defect(make_field(0.0, 1.0, J, WARPED), x) == 0.0
    assert abs(divergence_defect(make_field(128.0, 0.5, J, WARPED), x)) <= 1e-10

    broken = CustomField(lambda x: x, lambda x: np.broadcast_to(np.eye(2), x.shape + (2,)), ISO,
                         validate=False)
    assert divergence_defect(broken, np.array([1.0, 1.0])) == 0.0
    assert divergence_defect(broken, np.array([0.0, 0.0])) == 2.0


def test_custom_field_validation():
    with pytest.raises(ValueError, match="not divergence-free"):
        CustomField(lambda x: x, lambda x: np.broadcast_to(np.eye(2), x.shape + (2,)), ISO)
    # a rotation is admissible for the isotropic Gaussian
    rot = CustomField(lambda x: x @ J.J.T, lambda x: np.broadcast_to(J.J, x.shape + (2,)), ISO)
    assert rot.value(np.array([1.0, 2.0])).tolist() == [2.0, -1.0]


def test_remark_drift_equivalence_examples():
    assert remark_drift_equivalence(make_field(0.0, 1.0, J, WARPED), np.array([2.0, 3.0])) == 0.0
    assert remark_drift_equivalence(make_field(1.0, 1.0, J, ISO), np.array([1.0, 2.0])) <= 1e-12
    assert remark_drift_equivalence(make_field(16.0, 0.5, J, WARPED), np.array([2.0, 3.0])) <= 1e-8


def test_remark_detects_invalid_field():
    broken = CustomField(lambda x: x, lambda x: np.broadcast_to(np.eye(2), x.shape + (2,)), ISO,
                         validate=False)
    assert remark_drift_equivalence(broken, np.array([0.0, 1.0])) > 0.5


def test_ito_correction_examples():
    assert np.all(ito_correction(make_field(0.0, 1.0, J, WARPED), np.array([1.0, 1.0])) == 0.0)
    np.testing.assert_allclose(ito_correction(make_field(1.0, 1.0, J, ISO), np.array([1.0, 2.0])),
                               [-1.0, -2.0], atol=1e-15)
    np.testing.assert_allclose(ito_correction(make_field(1.0, 1.0, J, ANISO), np.array([1.0, 1.0])),
                               [-0.1, -0.1], atol=1e-15)


def test_ito_correction_matches_directional_derivative():
    # g'g is the derivative of g along itself
    f = make_field(16.0, 0.5, J, WARPED)
    x = np.array([2.5, -1.0])
    g = f.value(x)
    h = 1e-7
    fd = (f.value(x + h * g) - f.value(x - h * g)) / (2 * h)
    np.testing.assert_allclose(ito_correction(f, x), fd, rtol=1e-6)
