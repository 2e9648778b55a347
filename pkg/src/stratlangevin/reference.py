"""Normalised target expectations ``pi(phi)`` by deterministic tensor quadrature."""

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .targets import QuadraticPotential, WarpedGaussianPotential

COVERAGE_TOL = 1e-12
ERROR_TOL = 1e-8
# x2 must reach the ridge x2 = 100 b - b x1^2 for every |x1| <= 60.
WARPED_BOX = ((-60.0, 60.0), (-180.0, 12.0))
_CHUNK = 1 << 20


class CoverageError(ValueError):
    """The quadrature box cuts off non-negligible target mass."""


class AccuracyError(ValueError):
    """Doubling the node count moved the result by more than ``ERROR_TOL``."""


@dataclass(frozen=True)
class QuadratureGrid:
    rule: str
    nodes_per_axis: int
    bounds: tuple = None

    def __post_init__(self):
        if self.rule not in ("legendre", "hermite"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.rule == "legendre" and self.bounds is None:
            raise ValueError("Gauss-Legendre needs integration bounds")
        if self.nodes_per_axis < 1:
            raise ValueError("nodes_per_axis must be positive")

    def refined(self):
        return QuadratureGrid(self.rule, 2 * self.nodes_per_axis, self.bounds)


@dataclass
class Expectation:
    value: float
    error_estimate: float
    boundary_ratio: float = 0.0

    @property
    def relative_error(self):
        return self.error_estimate / max(abs(self.value), 1e-300)


def default_grid(p):
    if isinstance(p, QuadraticPotential):
        return QuadratureGrid("hermite", 16)
    if isinstance(p, WarpedGaussianPotential):
        return QuadratureGrid("legendre", 400, WARPED_BOX)
    raise ValueError(f"no default grid for {p!r}")


def _nodes(grid, dim):
    if grid.rule == "hermite":
        z, w = hermegauss(grid.nodes_per_axis)
        return [z] * dim, [w / np.sqrt(2 * np.pi)] * dim
    if len(grid.bounds) != dim:
        raise ValueError("bounds do not match the potential dimension")
    t, w = leggauss(grid.nodes_per_axis)
    xs, ws = [], []
    for lo, hi in grid.bounds:
        half = 0.5 * (hi - lo)
        xs.append(lo + half * (t + 1.0))
        ws.append(half * w)
    return xs, ws


def _legendre_integral(p, phi, grid):
    xs, ws = _nodes(grid, p.dim)
    # tensor points are visited in chunks along the first axis to cap memory
    rest = np.array(list(itertools.product(*xs[1:]))) if p.dim > 1 else np.zeros((1, 0))
    rest_w = np.array([np.prod(c) for c in itertools.product(*ws[1:])]) if p.dim > 1 else np.ones(1)
    rows = max(1, _CHUNK // len(rest))
    vmin = np.inf
    blocks = []
    for start in range(0, len(xs[0]), rows):
        x0 = xs[0][start:start + rows]
        pts = np.concatenate([np.repeat(x0, len(rest))[:, None], np.tile(rest, (len(x0), 1))], axis=1)
        V = p.value(pts)
        w = np.repeat(ws[0][start:start + rows], len(rest)) * np.tile(rest_w, len(x0))
        vmin = min(vmin, V.min())
        blocks.append((pts, V, w))
    num = den = 0.0
    for pts, V, w in blocks:
        dens = w * np.exp(-(V - vmin))
        num += np.dot(dens, phi(pts))
        den += dens.sum()
    return num / den, vmin


def _hermite_integral(p, phi, grid):
    xs, ws = _nodes(grid, p.dim)
    z = np.array(list(itertools.product(*xs)))
    w = np.prod(np.array(list(itertools.product(*ws))), axis=1)
    L = np.linalg.cholesky(p.covariance)
    return float(np.dot(w, phi(z @ L.T)))


def boundary_ratio(p, bounds, vmin, samples=4001):
    """Largest ``exp(-(V - vmin))`` on the faces of the box."""
    worst = np.inf
    axes = [np.linspace(lo, hi, samples) for lo, hi in bounds]
    for k, (lo, hi) in enumerate(bounds):
        for edge in (lo, hi):
            if p.dim == 1:
                pts = np.array([[edge]])
            else:
                others = [axes[m] for m in range(p.dim) if m != k]
                if len(others) > 1:
                    others = [a[:: max(1, samples // 200)] for a in others]
                face = np.array(list(itertools.product(*others)))
                pts = np.insert(face, k, edge, axis=1)
            worst = min(worst, p.value(pts).min())
    return float(np.exp(-(worst - vmin)))


def expectation(p, obs, grid=None):
    """``int phi e^{-V} / int e^{-V}`` with a node-doubling error estimate.

    Gauss-Hermite grids integrate in whitened coordinates of a quadratic
    potential (exact for polynomial ``phi`` of degree ``<= 2n - 1``).
    Gauss-Legendre grids work on the given box after checking that the
    density on its faces is below ``1e-12`` of the peak.

    Raises
    ------
    CoverageError
        If the box does not cover the effective support.
    AccuracyError
        If the doubling estimate exceeds ``1e-8`` relative (absolute for
        values below one in magnitude).
    """
    grid = default_grid(p) if grid is None else grid
    phi = obs.eval if hasattr(obs, "eval") else obs
    if grid.rule == "hermite":
        if not isinstance(p, QuadraticPotential):
            raise ValueError("Gauss-Hermite rule needs a quadratic potential")
        value = _hermite_integral(p, phi, grid)
        fine = _hermite_integral(p, phi, grid.refined())
        return _checked(Expectation(float(value), abs(value - fine)))
    value, vmin = _legendre_integral(p, phi, grid)
    ratio = boundary_ratio(p, grid.bounds, vmin)
    if ratio > COVERAGE_TOL:
        raise CoverageError(f"density on the box boundary is {ratio:.3e} of the peak "
                            f"(needs <= {COVERAGE_TOL:g}); enlarge {grid.bounds}")
    fine, _ = _legendre_integral(p, phi, grid.refined())
    return _checked(Expectation(float(value), abs(value - fine), ratio))


def _checked(e):
    if e.error_estimate > ERROR_TOL * max(1.0, abs(e.value)):
        raise AccuracyError(f"node doubling changed the result by {e.error_estimate:.3e}")
    return e
