"""Itô forms of the three Langevin samplers and a seeded Euler-Maruyama ensemble runner.

* overdamped:     dX = -grad V dt + sqrt(2) dW
* nonreversible:  dX = (-grad V + g) dt + sqrt(2) dW
* stratonovich:   dX = (-grad V + g'g) dt + sqrt(2) g dbeta + sqrt(2) dW

The last line is the Itô rewriting of ``-grad V dt + g o sqrt(2) dbeta +
sqrt(2) dW``; it is integrated as written, never by a Stratonovich-native
scheme.

Random streams
--------------
Trajectory ``i`` owns independent PCG64 streams derived from
``SeedSequence(seed, spawn_key=(i, k))`` with ``k = 0`` for the ``d``
Brownian channels, ``k = 1`` for the extra Stratonovich channel and ``k = 2``
for initial-state draws. A trajectory is therefore reproducible in isolation,
results do not depend on how trajectories are split across workers, and the
overdamped and Stratonovich samplers see identical ``W`` increments.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from ._linalg import batch_lmatmul, batch_matvec, matvec
from .perturbations import PerturbationField
from .targets import QuadraticPotential, WarpedGaussianPotential

BLOWUP_THRESHOLD = 1e8

# Upper bound on buffered normal draws per block (floats).
_DRAW_BUFFER = 2_000_000


class Kind(str, Enum):
    OVERDAMPED = "overdamped"
    NONREVERSIBLE = "nonreversible"
    STRATONOVICH = "stratonovich"


class BlowUpError(RuntimeError):
    """Raised when a trajectory leaves ``|x| <= 1e8`` or becomes non-finite."""

    def __init__(self, trajectory, step, norm):
        self.trajectory = trajectory
        self.step = step
        self.norm = norm
        super().__init__(f"trajectory {trajectory} blew up at step {step} (|x| = {norm:.3e}); "
                         "reduce dt (rule of thumb: dt * drift stiffness <= 0.5)")


@dataclass(frozen=True)
class DynamicsSpec:
    kind: Kind
    potential: object
    field: object = None

    @property
    def dim(self):
        return self.potential.dim

    @property
    def n_channels(self):
        return self.dim + 1 if self.kind is Kind.STRATONOVICH else self.dim

    def drift(self, x):
        return self._terms(np.asarray(x, dtype=float))[0]

    def noise_columns(self, x):
        """Diffusion columns, shape ``x.shape + (n_channels,)``; column ``k`` multiplies draw ``k``."""
        x = np.asarray(x, dtype=float)
        cols = np.zeros(x.shape + (self.n_channels,))
        for i in range(self.dim):
            cols[..., i, i] = np.sqrt(2.0)
        if self.kind is Kind.STRATONOVICH:
            cols[..., :, self.dim] = np.sqrt(2.0) * self.field.value(x)
        return cols

    def _terms(self, x):
        # Returns the Itô drift and, for the Stratonovich kind, g(x).
        grad = self.potential.gradient(x)
        if self.kind is Kind.OVERDAMPED:
            return -grad, None
        builtin = isinstance(self.field, PerturbationField)
        # built-in fields reuse grad V instead of recomputing it
        g = matvec(self.field._K, grad) if builtin else self.field.value(x)
        if self.kind is Kind.NONREVERSIBLE:
            return -grad + g, None
        if builtin:
            jac = batch_lmatmul(self.field._K, self.potential.hessian(x))
        else:
            jac = self.field.jacobian(x)
        return -grad + batch_matvec(jac, g), g


def make_dynamics(kind, p, f=None):
    """Build a :class:`DynamicsSpec`.

    A perturbation field is required for the perturbed kinds and forbidden for
    the overdamped one; it must be attached to the same potential object.
    """
    kind = Kind(kind)
    if kind is Kind.OVERDAMPED:
        if f is not None:
            raise ValueError("overdamped dynamics takes no perturbation field")
    else:
        if f is None:
            raise ValueError(f"{kind.value} dynamics needs a perturbation field")
        if f.potential is not p:
            raise ValueError("perturbation field is attached to a different potential")
    return DynamicsSpec(kind, p, f)


def em_step(spec, x, dt, gaussians):
    """One Euler-Maruyama step ``x + dt b(x) + sqrt(dt) * sum_k column_k(x) xi_k``.

    ``gaussians`` holds one standard normal draw per noise channel in its last
    axis (``d`` channels, plus one for the Stratonovich kind).
    """
    x = np.asarray(x, dtype=float)
    gaussians = np.asarray(gaussians, dtype=float)
    if gaussians.shape[-1] != spec.n_channels:
        raise ValueError(f"expected {spec.n_channels} draws per step, got {gaussians.shape[-1]}")
    d = spec.dim
    b, g = spec._terms(x)
    noise = np.sqrt(2.0) * gaussians[..., :d]
    if g is not None:
        noise = noise + np.sqrt(2.0) * g * gaussians[..., d:d + 1]
    return x + dt * b + np.sqrt(dt) * noise


@dataclass(frozen=True)
class EnsembleConfig:
    """Run parameters.

    ``x0`` is either one point shared by every trajectory or an array of shape
    ``(n_traj, d)``. The final step is always recorded, whether or not
    ``snapshot_stride`` divides the step count.
    """

    n_traj: int
    dt: float
    t_end: float
    x0: object
    seed: int = 0
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.n_steps < 1:
            raise ValueError("t_end must span at least one step")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def snapshot_steps(self):
        steps = list(range(self.snapshot_stride, self.n_steps + 1, self.snapshot_stride))
        if not steps or steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return np.array(steps)

    def initial_states(self, dim):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape == (dim,):
            return np.broadcast_to(x0, (self.n_traj, dim)).copy()
        if x0.shape == (self.n_traj, dim):
            return x0.copy()
        raise ValueError(f"x0 must have shape ({dim},) or ({self.n_traj}, {dim}), got {x0.shape}")


@dataclass
class EnsembleResult:
    """Snapshot times plus per-time ensemble statistics.

    ``stats[name] = (mean, std)`` over trajectories (sample std, ``ddof=1``).
    ``series[name]`` (shape ``(n_traj, n_snap)``) and ``states`` (shape
    ``(n_snap, n_traj, d)``) are only kept on request. With
    ``record="window"`` each recorded observable value is the mean over the
    steps since the previous snapshot instead of the value at the snapshot.
    """

    times: np.ndarray
    config: EnsembleConfig
    record: str = "point"
    stats: dict = field(default_factory=dict)
    series: dict = None
    states: np.ndarray = None


def trajectory_stream(seed, index, purpose=0):
    ss = np.random.SeedSequence(seed, spawn_key=(index, purpose))
    return np.random.Generator(np.random.PCG64(ss))


def gaussian_initial_states(potential, n_traj, seed):
    """Exact draws from ``pi = N(0, S^{-1})`` for a quadratic potential, one per trajectory stream."""
    if not isinstance(potential, QuadraticPotential):
        raise ValueError("exact initial sampling needs a quadratic potential")
    L = np.linalg.cholesky(potential.covariance)
    z = np.empty((n_traj, potential.dim))
    for i in range(n_traj):
        trajectory_stream(seed, i, 2).standard_normal(out=z[i])
    return matvec(L, z)


def _kernel_args(spec):
    """Arguments for the compiled integrator, or ``None`` if the spec needs the numpy path."""
    pot = spec.potential
    if isinstance(pot, QuadraticPotential):
        pot_code, params, S = _kernels.QUADRATIC, np.zeros(1), pot.S
    elif isinstance(pot, WarpedGaussianPotential):
        pot_code, params, S = _kernels.WARPED, np.array([pot.b]), np.zeros((2, 2))
    else:
        return None
    if spec.field is None:
        K = np.zeros((spec.dim, spec.dim))
    elif isinstance(spec.field, PerturbationField):
        K = spec.field._K
    else:
        return None
    kind = {Kind.OVERDAMPED: _kernels.OVERDAMPED, Kind.NONREVERSIBLE: _kernels.NONREVERSIBLE,
            Kind.STRATONOVICH: _kernels.STRATONOVICH}[spec.kind]
    return kind, pot_code, params, np.ascontiguousarray(S, dtype=float), np.ascontiguousarray(K)


def _block_size(cfg, m):
    # depends on the whole ensemble, not the chunk, so block edges never move
    return max(1, min(cfg.n_steps, _DRAW_BUFFER // (cfg.n_traj * m)))


def _run_chunk(spec, cfg, lo, hi, observables, record, keep_states, engine):
    n = hi - lo
    d, m = spec.dim, spec.n_channels
    n_steps = cfg.n_steps
    snap_steps = cfg.snapshot_steps
    n_snap = len(snap_steps)
    x = np.ascontiguousarray(cfg.initial_states(d)[lo:hi])

    w_streams = [trajectory_stream(cfg.seed, i, 0) for i in range(lo, hi)]
    b_streams = [trajectory_stream(cfg.seed, i, 1) for i in range(lo, hi)] if m > d else []
    block = _block_size(cfg, m)
    kargs = _kernel_args(spec) if engine != "numpy" else None
    if engine == "numba" and kargs is None:
        raise ValueError("the compiled engine only supports built-in potentials and fields")

    values = np.empty((len(observables), n_snap, n))
    states = np.empty((n_snap, n, d)) if keep_states else None
    acc = np.zeros((len(observables), n))
    count = 0
    snap = 0
    draws = np.empty((n, block, m))
    w_buf = np.empty((n, block, d))
    b_buf = np.empty((n, block, 1))
    path = np.empty((n, block, d))
    blown_at = np.empty(n, dtype=np.int64)

    for start in range(0, n_steps, block):
        k = min(block, n_steps - start)
        for j in range(n):
            w_streams[j].standard_normal(out=w_buf[j, :k])
            if b_streams:
                b_streams[j].standard_normal(out=b_buf[j, :k])
        draws[:, :k, :d] = w_buf[:, :k]
        if b_streams:
            draws[:, :k, d:] = b_buf[:, :k]
        if kargs is not None:
            _kernels.integrate_block(*kargs, x, draws, k, cfg.dt, BLOWUP_THRESHOLD, path, blown_at)
            if (blown_at >= 0).any():
                rows = np.flatnonzero(blown_at >= 0)
                row = rows[np.argmin(blown_at[rows])]
                s = blown_at[row]
                raise BlowUpError(lo + row, start + s + 1, float(np.linalg.norm(path[row, s])))
        else:
            for s in range(k):
                x = em_step(spec, x, cfg.dt, draws[:, s])
                ok = np.abs(x) <= BLOWUP_THRESHOLD
                if not ok.all():
                    bad = int(np.flatnonzero(~ok.all(axis=1))[0])
                    raise BlowUpError(lo + bad, start + s + 1, float(np.linalg.norm(x[bad])))
                path[:, s] = x
        if record == "window":
            vals = np.stack([obs.eval(path[:, :k]) for obs in observables]) if observables \
                else np.empty((0, n, k))
            pos = 0
            while pos < k:
                end = min(k, snap_steps[snap] - start)
                # add.accumulate sums left to right, so block edges never change the result
                seg = np.concatenate([acc[..., None], vals[..., pos:end]], axis=-1)
                acc = np.add.accumulate(seg, axis=-1)[..., -1]
                count += end - pos
                pos = end
                if start + end == snap_steps[snap]:
                    values[:, snap] = acc / count
                    acc = np.zeros_like(acc)
                    count = 0
                    if keep_states:
                        states[snap] = path[:, end - 1]
                    snap += 1
        else:
            while snap < n_snap and snap_steps[snap] <= start + k:
                s = snap_steps[snap] - start - 1
                for o, obs in enumerate(observables):
                    values[o, snap] = obs.eval(path[:, s])
                if keep_states:
                    states[snap] = path[:, s]
                snap += 1
    return values, states


def run_ensemble(spec, cfg, observables=(), *, record="point", keep_series=False,
                 keep_states=False, workers=1, engine="auto"):
    """Integrate ``cfg.n_traj`` independent trajectories with Euler-Maruyama.

    Parameters
    ----------
    spec : DynamicsSpec
    cfg : EnsembleConfig
    observables : sequence of Observable
        Objects with ``name`` and vectorised ``eval``; their per-snapshot
        ensemble mean and standard deviation end up in ``result.stats``.
    record : {"point", "window"}
        Record observable values at snapshot times, or their average over the
        steps of each snapshot window (for ergodic time averages).
    keep_series, keep_states : bool
        Also return per-trajectory observable series / full states.
    workers : int
        Number of threads; trajectories are split into contiguous chunks.
        Output is bit-identical for any worker count.
    engine : {"auto", "numba", "numpy"}
        ``auto`` uses the compiled integrator for built-in potentials and
        fields and the vectorised numpy path otherwise.

    Raises
    ------
    BlowUpError
        If any trajectory leaves the ball of radius 1e8. The earliest step is
        reported, ties going to the lowest trajectory index.
    """
    if engine not in ("auto", "numba", "numpy"):
        raise ValueError(f"unknown engine {engine!r}")
    if record not in ("point", "window"):
        raise ValueError(f"unknown record mode {record!r}")
    observables = list(observables)
    workers = max(1, min(int(workers), cfg.n_traj))
    bounds = np.linspace(0, cfg.n_traj, workers + 1).astype(int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def work(c):
        try:
            return _run_chunk(spec, cfg, c[0], c[1], observables, record, keep_states, engine)
        except BlowUpError as exc:
            return exc

    if len(chunks) == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(work, chunks))
    # report the earliest blow-up (lowest trajectory on ties) whatever the chunking
    errors = [p for p in parts if isinstance(p, BlowUpError)]
    if errors:
        raise min(errors, key=lambda e: (e.step, e.trajectory))

    values = np.concatenate([p[0] for p in parts], axis=2)
    result = EnsembleResult(times=cfg.snapshot_steps * cfg.dt, config=cfg, record=record)
    for o, obs in enumerate(observables):
        v = values[o]
        std = v.std(axis=1, ddof=1) if cfg.n_traj > 1 else np.zeros(v.shape[0])
        result.stats[obs.name] = (v.mean(axis=1), std)
    if keep_series:
        result.series = {obs.name: values[o].T.copy() for o, obs in enumerate(observables)}
    if keep_states:
        result.states = np.concatenate([p[1] for p in parts], axis=1)
    return result
