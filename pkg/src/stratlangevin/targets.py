"""Potentials ``V`` and the target densities ``pi ∝ exp(-V)`` they define.

All evaluators are vectorised over leading axes: a point is an array whose
last axis has length ``dim``.
"""

import numpy as np

from ._linalg import matvec


class Potential:
    """Smooth confining potential with closed-form gradient and Hessian.

    Subclasses implement :meth:`value`, :meth:`gradient` and :meth:`hessian`.
    The normalisation constant of ``exp(-V)`` is never needed here; see
    :mod:`stratlangevin.reference` for normalised expectations.
    """

    dim: int
    name = "potential"

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def _as_points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected points with last axis {self.dim}, got shape {x.shape}")
        return x


class QuadraticPotential(Potential):
    """``V(x) = x^T S x / 2`` for a symmetric positive-definite ``S``."""

    name = "quadratic"

    def __init__(self, S):
        S = np.array(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("S must be a square matrix")
        if np.max(np.abs(S - S.T)) > 1e-12:
            raise ValueError("S must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("S must be positive definite")
        self.S = S
        self.dim = S.shape[0]

    def value(self, x):
        x = self._as_points(x)
        return 0.5 * np.sum(x * matvec(self.S, x), axis=-1)

    def gradient(self, x):
        return matvec(self.S, self._as_points(x))

    def hessian(self, x):
        x = self._as_points(x)
        return np.broadcast_to(self.S, x.shape[:-1] + self.S.shape).copy()

    @property
    def covariance(self):
        """Covariance ``S^{-1}`` of the Gaussian target."""
        return np.linalg.inv(self.S)

    def __repr__(self):
        return f"QuadraticPotential(S={self.S.tolist()})"


class WarpedGaussianPotential(Potential):
    """Banana-shaped target ``V = x1^2/100 + (x2 + b x1^2 - 100 b)^2``."""

    name = "warped"
    dim = 2

    def __init__(self, b=0.05):
        b = float(b)
        if not np.isfinite(b):
            raise ValueError("warp parameter b must be finite")
        self.b = b

    def _ridge(self, x):
        return x[..., 1] + self.b * x[..., 0] ** 2 - 100.0 * self.b

    def value(self, x):
        x = self._as_points(x)
        return x[..., 0] ** 2 / 100.0 + self._ridge(x) ** 2

    def gradient(self, x):
        x = self._as_points(x)
        r = self._ridge(x)
        out = np.empty(x.shape)
        out[..., 0] = x[..., 0] / 50.0 + 4.0 * self.b * x[..., 0] * r
        out[..., 1] = 2.0 * r
        return out

    def hessian(self, x):
        x = self._as_points(x)
        b = self.b
        r = self._ridge(x)
        out = np.empty(x.shape + (2,))
        out[..., 0, 0] = 1.0 / 50.0 + 4.0 * b * r + 8.0 * b * b * x[..., 0] ** 2
        out[..., 0, 1] = 4.0 * b * x[..., 0]
        out[..., 1, 0] = out[..., 0, 1]
        out[..., 1, 1] = 2.0
        return out

    def __repr__(self):
        return f"WarpedGaussianPotential(b={self.b})"


def make_quadratic(S):
    """Gaussian target ``N(0, S^{-1})``.

    Raises
    ------
    ValueError
        If ``S`` is not symmetric (to 1e-12) or not positive definite.
    """
    return QuadraticPotential(S)


def make_warped_gaussian(b=0.05):
    return WarpedGaussianPotential(b)


def log_density_unnormalized(p, x):
    """Return ``-V(x)``, the log of the unnormalised target density."""
    return -p.value(x)
