"""Hermite-Galerkin matrices of the sampler generators on Gaussian targets.

For ``V = x^T S x / 2`` and a linear field ``g = G x`` the operators

    L phi   = -grad V . grad phi + lap phi
    A phi   = g . grad phi
    L_D     = L + A
    L_S     = L + A^2

map polynomials of total degree ``<= p`` into themselves, so their matrices
on the ``L^2(pi)``-orthonormal Hermite basis of degree ``<= p`` are exact
restrictions. Entries ``<e_i, O e_j>_pi`` are computed by tensor
Gauss-Hermite quadrature, which is exact for these polynomial integrands.
"""

import itertools
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from ._csv import write_csv
from .perturbations import PerturbationField, SkewMatrix
from .targets import QuadraticPotential

KINDS = ("L", "A", "L_D", "L_S")
DEFAULT_DEGREE = 10
TOL = 1e-10


def _hermite_table(z, p):
    """Normalised probabilists' Hermite ``He_n(z)/sqrt(n!)`` and two derivatives, ``n <= p``."""
    z = np.asarray(z, dtype=float)
    H = np.zeros((p + 1,) + z.shape)
    H[0] = 1.0
    if p >= 1:
        H[1] = z
    for n in range(1, p):
        H[n + 1] = z * H[n] - n * H[n - 1]
    norms = np.sqrt([float(factorial(n)) for n in range(p + 1)])
    h = H / norms.reshape((-1,) + (1,) * z.ndim)
    dh = np.zeros_like(h)
    d2h = np.zeros_like(h)
    for n in range(1, p + 1):
        dh[n] = np.sqrt(n) * h[n - 1]
    for n in range(2, p + 1):
        d2h[n] = np.sqrt(n * (n - 1)) * h[n - 2]
    return h, dh, d2h


@dataclass
class HermiteBasis:
    """Orthonormal polynomial basis of ``L^2(pi)`` for ``pi = N(0, S^{-1})``.

    Coordinates ``z = T^{-1} x`` with ``T = S^{-1/2}`` make ``pi`` standard
    normal; basis functions are products of normalised ``He_n(z_k)`` over
    multi-indices of total degree ``<= max_degree``, ordered by degree. Index
    0 is the constant function.
    """

    potential: QuadraticPotential
    max_degree: int
    n_nodes: int = None
    indices: list = field(init=False)

    def __post_init__(self):
        if not isinstance(self.potential, QuadraticPotential):
            raise ValueError("the Hermite basis is only defined for quadratic potentials")
        if self.max_degree < 2:
            raise ValueError("max_degree must be >= 2")
        d, p = self.dim, self.max_degree
        self.indices = [a for deg in range(p + 1)
                        for a in sorted(_multi_indices(d, deg), reverse=True)]
        assert len(self.indices) == comb(p + d, d)
        # products of two degree-p functions times a quadratic form need n >= p + 2
        if self.n_nodes is None:
            self.n_nodes = p + 2
        w_evals, w_vecs = np.linalg.eigh(self.potential.S)
        self.T = (w_vecs / np.sqrt(w_evals)) @ w_vecs.T
        self.T_inv = (w_vecs * np.sqrt(w_evals)) @ w_vecs.T
        self._tabulate()

    @property
    def dim(self):
        return self.potential.dim

    @property
    def size(self):
        return len(self.indices)

    def degree_block(self, deg):
        """Basis positions of total degree ``deg``."""
        return [i for i, a in enumerate(self.indices) if sum(a) == deg]

    def _tabulate(self):
        d, p = self.dim, self.max_degree
        nodes, weights = hermegauss(self.n_nodes)
        weights = weights / np.sqrt(2.0 * np.pi)
        grid = np.array(list(itertools.product(range(self.n_nodes), repeat=d)))
        self.z = nodes[grid]
        self.weights = np.prod(weights[grid], axis=1)
        self.x = self.z @ self.T.T
        h, dh, d2h = _hermite_table(nodes, p)
        nq, nb = len(self.weights), self.size
        vals = np.ones((nq, nb))
        grad = np.ones((nq, nb, d))
        hess = np.ones((nq, nb, d, d))
        for j, alpha in enumerate(self.indices):
            per_axis = [h[alpha[k]][grid[:, k]] for k in range(d)]
            first = [dh[alpha[k]][grid[:, k]] for k in range(d)]
            second = [d2h[alpha[k]][grid[:, k]] for k in range(d)]
            vals[:, j] = np.prod(per_axis, axis=0)
            for k in range(d):
                grad[:, j, k] = np.prod([first[m] if m == k else per_axis[m] for m in range(d)], axis=0)
                for l in range(d):
                    if k == l:
                        factors = [second[m] if m == k else per_axis[m] for m in range(d)]
                    else:
                        factors = [first[m] if m in (k, l) else per_axis[m] for m in range(d)]
                    hess[:, j, k, l] = np.prod(factors, axis=0)
        # chain rule to x coordinates: grad_x = T^{-T} grad_z, hess_x = T^{-T} hess_z T^{-1}
        self.values = vals
        self.grad_x = grad @ self.T_inv
        self.hess_x = np.einsum("ka,qjab,bl->qjkl", self.T_inv.T, hess, self.T_inv)

    def gram(self):
        return (self.values * self.weights[:, None]).T @ self.values

    def inner(self, f_values):
        """Coefficients ``<e_i, f>_pi`` for ``f`` sampled at the quadrature nodes."""
        return (self.values * self.weights[:, None]).T @ f_values

    def project(self, obs):
        """Return ``(coefficients, residual)``; the residual is ``||phi - P phi||^2_pi``."""
        f = np.asarray(obs.eval(self.x), dtype=float)
        c = self.inner(f)
        resid = float(np.dot(self.weights, f * f) - c @ c)
        return c, max(resid, 0.0)


def _multi_indices(d, deg):
    if d == 1:
        return [(deg,)]
    return [(k,) + rest for k in range(deg + 1) for rest in _multi_indices(d - 1, deg - k)]


def build_basis(p_quad, max_degree=DEFAULT_DEGREE):
    return HermiteBasis(p_quad, max_degree)


@dataclass
class GeneratorMatrix:
    kind: str
    matrix: np.ndarray
    basis: HermiteBasis


def _field_matrix(basis, f):
    if f is None:
        raise ValueError("this operator needs a perturbation field")
    if f.potential is not basis.potential and not np.array_equal(
            getattr(f.potential, "S", None), basis.potential.S):
        raise ValueError("field and basis use different potentials")
    # nonlinear g would leave the polynomial space; linear_matrix() rejects it
    return f.linear_matrix()


def _apply(basis, kind, G=None):
    """Values of ``O e_j`` at the nodes, shape ``(n_nodes, n_basis)``."""
    x, gx, hx = basis.x, basis.grad_x, basis.hess_x
    S = basis.potential.S
    if kind == "L":
        drift = -x @ S.T
        return np.einsum("qk,qjk->qj", drift, gx) + np.trace(hx, axis1=2, axis2=3)
    g = x @ G.T
    if kind == "A":
        return np.einsum("qk,qjk->qj", g, gx)
    if kind == "A2":
        gpg = x @ (G @ G).T
        return (np.einsum("qk,qjk->qj", gpg, gx)
                + np.einsum("qk,qjkl,ql->qj", g, hx, g))
    raise ValueError(kind)


def _galerkin(basis, applied):
    return basis.inner(applied)


def build_generator(kind, basis, field=None, *, method="product"):
    """Matrix ``<e_i, O e_j>_pi`` of ``O`` in ``{"L", "A", "L_D", "L_S"}``.

    ``L_S`` is assembled as ``L + A @ A`` by default; ``method="direct"``
    instead integrates ``L phi + g'g . grad phi + hess phi (g, g)`` against
    the basis, which serves as a cross-check.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    L = _galerkin(basis, _apply(basis, "L"))
    if kind == "L":
        return GeneratorMatrix(kind, L, basis)
    G = _field_matrix(basis, field)
    A = _galerkin(basis, _apply(basis, "A", G))
    if kind == "A":
        return GeneratorMatrix(kind, A, basis)
    if kind == "L_D":
        return GeneratorMatrix(kind, L + A, basis)
    if method == "direct":
        return GeneratorMatrix(kind, L + _galerkin(basis, _apply(basis, "A2", G)), basis)
    if method != "product":
        raise ValueError(f"unknown assembly method {method!r}")
    return GeneratorMatrix(kind, L + A @ A, basis)


def _centered(G):
    # index 0 is the constant function; both it and its row/column decouple
    return G.matrix[1:, 1:]


def spectrum(G):
    """Eigenvalues on the complement of constants (real for symmetric kinds)."""
    M = _centered(G)
    if G.kind in ("L", "L_S"):
        return np.linalg.eigvalsh(0.5 * (M + M.T))
    return np.linalg.eigvals(M)


def spectral_gap(G):
    """Smallest ``-Re(eigenvalue)`` of the generator off the constants."""
    return float(np.min(-np.real(spectrum(G))))


def kv_variance(G, obs):
    """Solve the Poisson equation ``-G psi = phi - pi(phi)``.

    Returns ``(value, psi_coefficients, projection_residual)`` where
    ``value = <phi - pi(phi), psi>_pi`` (no factor 2). ``psi`` has a zero
    constant coefficient.
    """
    c, resid = G.basis.project(obs)
    rhs = c[1:]
    psi = np.zeros_like(c)
    psi[1:] = np.linalg.solve(-_centered(G), rhs)
    return float(rhs @ psi[1:]), psi, resid


@dataclass
class CertificateRow:
    delta: float
    theta: float
    lambda_L: float
    lambda_S: float
    lambda_D_realpart: float
    max_imag_L_D: float
    observable: str
    sigma2_L: float
    sigma2_S: float
    cross_term: float
    cross_term_proof: float


@dataclass
class Certificate:
    rows: list
    failures: list

    @property
    def passed(self):
        return not self.failures

    HEADER = ["delta", "theta", "lambda_L", "lambda_S", "lambda_D_realpart", "max_imag_L_D",
              "observable", "sigma2_L", "sigma2_S", "cross_term"]

    def to_csv(self, path, meta=()):
        write_csv(path, self.HEADER,
                  ([r.delta, r.theta, r.lambda_L, r.lambda_S, r.lambda_D_realpart, r.max_imag_L_D,
                    r.observable, r.sigma2_L, r.sigma2_S, r.cross_term] for r in self.rows),
                  meta)


def theorem3_certificate(p_quad, deltas, theta, observables, max_degree=DEFAULT_DEGREE, J=None):
    """Exact spectral-gap and asymptotic-variance comparison on a Gaussian target.

    For each ``delta`` computes the gaps of ``L``, ``L_S`` and ``L_D`` and,
    per observable, the Poisson-equation variances under ``L`` and ``L_S``
    together with the cross term ``<A psi_S, A psi_L>``, evaluated directly
    and as ``||A psi_S||^2 + <-L psi, psi>`` with ``psi = (-L)^{-1}(-A^2) psi_S``.
    Violations are collected in ``failures`` rather than raised.
    """
    basis = build_basis(p_quad, max_degree)
    J = SkewMatrix.canonical(p_quad.dim) if J is None else J
    L = build_generator("L", basis)
    lam_L = spectral_gap(L)
    rows, failures = [], []
    for delta in deltas:
        f = PerturbationField(delta, theta, J, p_quad)
        A = build_generator("A", basis, f).matrix
        LS = build_generator("L_S", basis, f)
        LD = build_generator("L_D", basis, f)
        lam_S = spectral_gap(LS)
        ev_D = spectrum(LD)
        lam_D = float(np.min(-ev_D.real))
        max_imag = float(np.max(np.abs(ev_D.imag)))
        if lam_S < lam_L - TOL:
            failures.append(f"delta={delta}: lambda_S={lam_S} < lambda_L={lam_L}")
        negL = -_centered(L)
        A2 = (A @ A)[1:, 1:]
        for obs in observables:
            sL, psi_L, _ = kv_variance(L, obs)
            sS, psi_S, _ = kv_variance(LS, obs)
            A_psi_S = A @ psi_S
            cross = float(A_psi_S @ (A @ psi_L))
            psi = np.linalg.solve(negL, -A2 @ psi_S[1:])
            cross_proof = float(A_psi_S @ A_psi_S + psi @ negL @ psi)
            tag = f"delta={delta}, {obs.name}"
            if sS > sL + TOL:
                failures.append(f"{tag}: sigma2_S={sS} > sigma2_L={sL}")
            if cross < -TOL:
                failures.append(f"{tag}: cross term {cross} < 0")
            if abs(cross - cross_proof) > 1e-8 * max(1.0, abs(cross)):
                failures.append(f"{tag}: cross-term evaluations differ ({cross} vs {cross_proof})")
            if abs((sL - sS) - cross) > 1e-8 * max(1.0, abs(sL)):
                failures.append(f"{tag}: sigma2_L - sigma2_S != cross term")
            rows.append(CertificateRow(float(delta), float(theta), lam_L, lam_S, lam_D, max_imag,
                                       obs.name, sL, sS, cross, cross_proof))
    return Certificate(rows, failures)
