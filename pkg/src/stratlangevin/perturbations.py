"""Divergence-free perturbation fields ``g`` with ``div(g pi) = 0``.

The built-in family is ``g(x) = delta**theta * J grad V(x)`` with a constant
skew-symmetric ``J``. Both sampler conventions use the same code path: the
nonreversible drift perturbation is usually run with ``theta = 1`` and the
Stratonovich noise perturbation with ``theta = 1/2``.
"""

import numpy as np

from ._linalg import batch_lmatmul, batch_matvec, dot, matvec, trace
from .targets import QuadraticPotential

CANONICAL_J = np.array([[0.0, 1.0], [-1.0, 0.0]])

#: Rejection threshold for fields validated by sampling.
VALIDATION_TOL = 1e-8
VALIDATION_POINTS = 1000


class SkewMatrix:
    """Constant matrix with ``J + J^T = 0`` (checked to 1e-14)."""

    def __init__(self, J):
        J = np.array(J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be square")
        if np.max(np.abs(J + J.T), initial=0.0) > 1e-14:
            raise ValueError("J must be skew-symmetric")
        self.J = J

    @property
    def dim(self):
        return self.J.shape[0]

    @classmethod
    def canonical(cls, dim=2):
        """Rotation generator acting on the first two coordinates."""
        if dim < 2:
            raise ValueError("a nonzero skew matrix needs dim >= 2")
        J = np.zeros((dim, dim))
        J[:2, :2] = CANONICAL_J
        return cls(J)

    def __array__(self, dtype=None, copy=None):
        return self.J if dtype is None else self.J.astype(dtype)

    def __repr__(self):
        return f"SkewMatrix({self.J.tolist()})"


class PerturbationField:
    """``g(x) = delta**theta * J grad V(x)`` and its Jacobian ``delta**theta * J hess V(x)``.

    Parameters
    ----------
    delta : float
        Perturbation size, ``delta >= 0``. ``delta = 0`` gives ``g = 0``.
    theta : float
        Exponent applied to ``delta``.
    J : SkewMatrix or array_like
    potential : Potential
    """

    def __init__(self, delta, theta, J, potential):
        delta = float(delta)
        if not delta >= 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        if not isinstance(J, SkewMatrix):
            J = SkewMatrix(J)
        if J.dim != potential.dim:
            raise ValueError(f"J has dimension {J.dim}, potential has {potential.dim}")
        self.delta = delta
        self.theta = float(theta)
        self.J = J
        self.potential = potential
        self.scale = delta ** self.theta if delta > 0 else 0.0
        self._K = self.scale * J.J

    @property
    def dim(self):
        return self.potential.dim

    def value(self, x):
        return matvec(self._K, self.potential.gradient(x))

    def jacobian(self, x):
        return batch_lmatmul(self._K, self.potential.hessian(x))

    def linear_matrix(self):
        """Matrix ``G`` with ``g(x) = G x``; only defined for quadratic potentials."""
        if not isinstance(self.potential, QuadraticPotential):
            raise ValueError("g is linear only for quadratic potentials")
        return self._K @ self.potential.S

    def __repr__(self):
        return (f"PerturbationField(delta={self.delta}, theta={self.theta}, "
                f"J={self.J.J.tolist()}, potential={self.potential!r})")


class CustomField:
    """User-supplied perturbation with value and Jacobian callables.

    The divergence-free condition is checked at construction on
    ``VALIDATION_POINTS`` standard Gaussian points; pass ``validate=False``
    to bypass the check (used for negative controls).
    """

    delta = None
    theta = None

    def __init__(self, value, jacobian, potential, *, validate=True, seed=0, name="custom"):
        self._value = value
        self._jacobian = jacobian
        self.potential = potential
        self.name = name
        if validate:
            pts = np.random.default_rng(seed).standard_normal((VALIDATION_POINTS, potential.dim))
            worst = np.max(np.abs(divergence_defect(self, pts)))
            if not worst <= VALIDATION_TOL:
                raise ValueError(f"field is not divergence-free: max |defect| = {worst:.3e}")

    @property
    def dim(self):
        return self.potential.dim

    def value(self, x):
        return np.asarray(self._value(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x):
        return np.asarray(self._jacobian(np.asarray(x, dtype=float)), dtype=float)

    def linear_matrix(self):
        raise ValueError(f"{self.name} field has no linear representation")

    def __repr__(self):
        return f"CustomField({self.name})"


def make_field(delta, theta, J, p):
    return PerturbationField(delta, theta, J, p)


def divergence_defect(f, x):
    """``div g(x) - g(x) . grad V(x)``, i.e. ``div(g pi) / pi``; zero for admissible fields."""
    x = np.asarray(x, dtype=float)
    return trace(f.jacobian(x)) - dot(f.value(x), f.potential.gradient(x))


def ito_correction(f, x):
    """Itô drift correction ``g'(x) g(x)`` of the Stratonovich noise term."""
    x = np.asarray(x, dtype=float)
    return batch_matvec(f.jacobian(x), f.value(x))


def remark_drift_equivalence(f, x):
    """Max-norm residual between two drifts of the Stratonovich sampler.

    Compares ``-M grad V + div M`` with ``M = I + g g^T`` against the Itô
    drift ``-grad V + g'g``. ``(div M)_i = (g'g)_i + g_i div g`` with
    ``div g = trace(g')``, so the residual is ``|g * defect|`` and vanishes
    exactly when the field is divergence-free.
    """
    x = np.asarray(x, dtype=float)
    grad = f.potential.gradient(x)
    g = f.value(x)
    jac = f.jacobian(x)
    g_prime_g = batch_matvec(jac, g)
    m_grad = grad + g * dot(g, grad)[..., None]
    div_m = g_prime_g + g * trace(jac)[..., None]
    residual = (-m_grad + div_m) - (-grad + g_prime_g)
    return np.max(np.abs(residual), axis=-1)
