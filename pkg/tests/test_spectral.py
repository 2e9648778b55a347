import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratlangevin.estimators import builtin_observable
from stratlangevin.perturbations import CustomField, SkewMatrix, make_field
from stratlangevin.spectral import (Certificate, build_basis, build_generator, kv_variance,
                                    spectral_gap, spectrum, theorem3_certificate)
from stratlangevin.targets import make_quadratic, make_warped_gaussian

J = SkewMatrix.canonical()
ISO = make_quadratic(np.eye(2))
ANISO = make_quadratic(np.diag([1.0, 0.1]))
OU1 = make_quadratic(np.eye(1))
GRID = (0.0, 1.0, 3.162, 10.0, 16.0)
OBS = [builtin_observable(n) for n in ("x2", "x1x2", "norm2")]


@pytest.fixture(scope="module")
def aniso_basis():
    return build_basis(ANISO, 10)


def test_basis_examples():
    b = build_basis(OU1, 2)
    assert b.size == 3
    x = b.x[:, 0]
    expected = np.stack([np.ones_like(x), x, (x ** 2 - 1) / np.sqrt(2)], axis=1)
    np.testing.assert_allclose(b.values, expected, atol=1e-14)
    assert np.max(np.abs(b.gram() - np.eye(3))) <= 1e-14

    b = build_basis(ISO, 2)
    assert b.size == 6
    assert np.max(np.abs(b.gram() - np.eye(6))) <= 1e-12

    b = build_basis(ANISO, 20)
    assert b.size == 231
    assert np.max(np.abs(b.gram() - np.eye(231))) <= 1e-10
    assert build_basis(ANISO, 10).size == 66


def test_basis_rejects_bad_input():
    with pytest.raises(ValueError):
        build_basis(make_warped_gaussian(0.05), 4)
    with pytest.raises(ValueError):
        build_basis(ISO, 1)


def test_ou_generator_is_diagonal():
    L = build_generator("L", build_basis(OU1, 3)).matrix
    np.testing.assert_allclose(L, np.diag([0.0, -1.0, -2.0, -3.0]), atol=1e-13)


def test_degree_one_blocks():
    delta = 1.0
    basis = build_basis(ISO, 4)
    f = make_field(delta, 1.0, J, ISO)
    idx = basis.degree_block(1)
    assert [basis.indices[i] for i in idx] == [(1, 0), (0, 1)]
    A = build_generator("A", basis, f).matrix[np.ix_(idx, idx)]
    # column j holds A e_j: A x1 = delta x2 and A x2 = -delta x1
    np.testing.assert_allclose(A.T, delta * np.array([[0.0, 1.0], [-1.0, 0.0]]), atol=1e-13)
    LS = build_generator("L_S", basis, f).matrix[np.ix_(idx, idx)]
    np.testing.assert_allclose(LS, -(1 + delta ** 2) * np.eye(2), atol=1e-13)


def test_spectral_gap_examples(aniso_basis):
    assert spectral_gap(build_generator("L", aniso_basis)) == pytest.approx(0.1, abs=1e-12)
    basis = build_basis(ISO, 6)
    for delta in (0.5, 1.0, 2.0, 4.0):
        gap = spectral_gap(build_generator("L_S", basis, make_field(delta, 1.0, J, ISO)))
        assert gap == pytest.approx(min(1 + delta ** 2, 2.0), abs=1e-10)
    L = build_generator("L", aniso_basis)
    LS0 = build_generator("L_S", aniso_basis, make_field(0.0, 0.5, J, ANISO))
    assert spectral_gap(LS0) == spectral_gap(L)


def test_kv_variance_examples(aniso_basis):
    value, psi, resid = kv_variance(build_generator("L", build_basis(OU1, 4)), builtin_observable("x1"))
    assert value == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(psi, [0.0, 1.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert resid <= 1e-12

    basis = build_basis(ISO, 6)
    norm2 = builtin_observable("norm2")
    sL = kv_variance(build_generator("L", basis), norm2)[0]
    for delta in (1.0, 7.0, 30.0):
        sS = kv_variance(build_generator("L_S", basis, make_field(delta, 1.0, J, ISO)), norm2)[0]
        assert abs(sS - sL) <= 1e-10

    assert kv_variance(build_generator("L", aniso_basis), OBS[0])[0] == pytest.approx(100.0, abs=1e-9)


def test_product_and_direct_assembly_agree(aniso_basis):
    for delta, theta in ((1.0, 0.5), (16.0, 0.5), (10.0, 1.0)):
        f = make_field(delta, theta, J, ANISO)
        a = build_generator("L_S", aniso_basis, f).matrix
        b = build_generator("L_S", aniso_basis, f, method="direct").matrix
        assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


def test_nonlinear_field_is_rejected():
    f = CustomField(lambda x: x @ J.J.T, lambda x: np.broadcast_to(J.J, x.shape + (2,)), ISO)
    with pytest.raises(ValueError):
        build_generator("A", build_basis(ISO, 4), f)
    with pytest.raises(ValueError):
        build_generator("A", build_basis(ISO, 4))
    with pytest.raises(ValueError):
        build_generator("B", build_basis(ISO, 4))


@pytest.mark.parametrize("delta", GRID)
@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_operator_structure(aniso_basis, delta, theta):
    f = make_field(delta, theta, J, ANISO)
    L = build_generator("L", aniso_basis).matrix
    A = build_generator("A", aniso_basis, f).matrix
    LS = build_generator("L_S", aniso_basis, f).matrix
    LD = build_generator("L_D", aniso_basis, f).matrix
    assert np.max(np.abs(A + A.T)) <= 1e-10
    assert np.max(np.abs(LS - LS.T)) <= 1e-10
    np.testing.assert_allclose(LS, L + A @ A, atol=1e-10)
    A2 = A @ A
    assert np.max(np.linalg.eigvalsh(0.5 * (A2 + A2.T))) <= 1e-10
    assert np.max(np.abs(np.linalg.eigvals(LS[1:, 1:]).imag)) <= 1e-8
    # constants are invariant: row 0 of every generator vanishes
    assert np.max(np.abs(LS[0])) <= 1e-10 and np.max(np.abs(LD[0])) <= 1e-10
    if delta >= 1:
        assert np.max(np.abs(LD - LD.T)) >= 0.1 * delta
    if delta >= 16:
        assert np.max(np.abs(spectrum(build_generator("L_D", aniso_basis, f)).imag)) > 0.01


def test_quadratic_form_identity(aniso_basis):
    f = make_field(10.0, 0.5, J, ANISO)
    L = build_generator("L", aniso_basis).matrix
    A = build_generator("A", aniso_basis, f).matrix
    LS = build_generator("L_S", aniso_basis, f).matrix
    rng = np.random.default_rng(0)
    for c in rng.standard_normal((100, aniso_basis.size)):
        lhs = -c @ LS @ c
        rhs = -c @ L @ c + (A @ c) @ (A @ c)
        assert lhs == pytest.approx(rhs, rel=1e-8)


def test_monotone_in_delta(aniso_basis):
    grid = (0.0, 0.5, 1.0, 3.162, 10.0, 16.0, 40.0)
    gaps, variances = [], []
    for delta in grid:
        LS = build_generator("L_S", aniso_basis, make_field(delta, 0.5, J, ANISO))
        gaps.append(spectral_gap(LS))
        variances.append([kv_variance(LS, o)[0] for o in OBS])
    assert np.all(np.diff(gaps) >= -1e-10)
    assert np.all(np.diff(np.array(variances), axis=0) <= 1e-10)


def test_certificate_examples(tmp_path):
    cert = theorem3_certificate(ANISO, GRID, 0.5, OBS, 10)
    assert cert.passed, cert.failures
    assert len(cert.rows) == len(GRID) * len(OBS)
    for r in cert.rows:
        assert r.lambda_L == pytest.approx(0.1, abs=1e-9)
        assert r.cross_term >= -1e-10
        assert abs(r.cross_term - r.cross_term_proof) <= 1e-8
        if r.delta == 0:
            assert r.lambda_S == r.lambda_L and r.sigma2_S == r.sigma2_L and r.cross_term == 0

    iso = theorem3_certificate(ISO, (1.0, 2.0, 4.0), 1.0, [builtin_observable("x1")], 6)
    for r in iso.rows:
        assert r.lambda_S == pytest.approx(min(1 + r.delta ** 2, 2.0), abs=1e-10)
    row = iso.rows[1]
    assert row.sigma2_L == pytest.approx(1.0, abs=1e-10)
    assert row.sigma2_S == pytest.approx(0.2, abs=1e-10)

    path = tmp_path / "cert.csv"
    cert.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(Certificate.HEADER)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.05, 5.0), c=st.floats(0.05, 5.0), rho=st.floats(-0.9, 0.9),
       delta=st.floats(0.0, 50.0), theta=st.sampled_from([0.5, 1.0]))
def test_orderings_hold_for_random_gaussians(a, c, rho, delta, theta):
    off = rho * np.sqrt(a * c)
    p = make_quadratic(np.array([[a, off], [off, c]]))
    cert = theorem3_certificate(p, (delta,), theta, OBS, 4)
    assert cert.passed, cert.failures
