"""Observable statistics: ensemble error curves, ergodic time averages and
batch-means estimates of the CLT variance."""

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._csv import write_csv
from .dynamics import run_ensemble

DEFAULT_BURN_IN_FRACTION = 0.1
MIN_BATCHES = 10
# Smallest window count that still leaves ten batches after a 10% burn-in.
DEFAULT_WINDOWS = 125


@dataclass(frozen=True)
class Observable:
    """Vectorised test function ``phi`` with an optional reference value ``pi(phi)``."""

    name: str
    eval: Callable
    reference: Optional[float] = None

    def with_reference(self, value):
        return dataclasses.replace(self, reference=float(value))


_BUILTIN = {
    "x1": lambda x: x[..., 0],
    "x2": lambda x: x[..., 1],
    "x1x2": lambda x: x[..., 0] * x[..., 1],
    "x1sq": lambda x: x[..., 0] ** 2,
    "x2sq": lambda x: x[..., 1] ** 2,
    "norm2": lambda x: x[..., 0] ** 2 + x[..., 1] ** 2,
}


def builtin_observable(name, reference=None):
    """Look up ``x1``, ``x2``, ``x1x2``, ``x1sq``, ``x2sq`` or ``norm2`` (= x1^2 + x2^2)."""
    try:
        fn = _BUILTIN[name]
    except KeyError:
        raise ValueError(f"unknown observable {name!r}; choose from {sorted(_BUILTIN)}") from None
    return Observable(name, fn, reference)


def constant_observable(c):
    c = float(c)
    return Observable(f"const{c:g}", lambda x: np.full(np.shape(x)[:-1], c), c)


@dataclass
class ErrorCurve:
    times: np.ndarray
    error: np.ndarray
    stderr: np.ndarray

    def window_mean(self, t_lo, t_hi):
        """Mean error and mean stderr over snapshots with ``t_lo <= t <= t_hi``."""
        sel = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        return float(self.error[sel].mean()), float(self.stderr[sel].mean())

    def to_csv(self, path, meta=()):
        write_csv(path, ["time", "error", "stderr"],
                  zip(self.times, self.error, self.stderr), meta)


def error_curve(res, obs):
    """``|mean_i phi(X_i(t)) - pi(phi)|`` per snapshot, with ``std / sqrt(n)`` as stderr."""
    if obs.reference is None:
        raise ValueError(f"observable {obs.name!r} has no reference value")
    if obs.name in res.stats:
        mean, std = res.stats[obs.name]
    elif res.states is not None:
        vals = obs.eval(res.states)
        mean = vals.mean(axis=1)
        std = vals.std(axis=1, ddof=1) if vals.shape[1] > 1 else np.zeros(len(mean))
    else:
        raise ValueError(f"result holds no statistics for {obs.name!r}")
    n = res.config.n_traj
    return ErrorCurve(np.asarray(res.times), np.abs(mean - obs.reference), std / np.sqrt(n))


@dataclass
class TimeAverageReport:
    value: float
    burn_in: float
    kv_variance_estimate: float
    n_batches: int
    clt_halfwidth: float
    duration: float


def time_average(times, samples, obs=None, burn_in=None, n_batches=None):
    """Ergodic average of one trajectory with a batch-means CLT variance.

    Parameters
    ----------
    times : array, shape (N,)
        Equally spaced snapshot times.
    samples : array
        Observable values, shape ``(N,)``, or states of shape ``(N, d)`` when
        ``obs`` is given.
    obs : Observable, optional
    burn_in : float, optional
        Discarded initial time; defaults to 10% of the final time.
    n_batches : int, optional
        Defaults to ``floor(sqrt(N_post))``.

    Notes
    -----
    The variance estimate is ``var(batch means) * batch duration`` which
    estimates ``lim T var(pi_T(phi))``.
    """
    times = np.asarray(times, dtype=float)
    vals = np.asarray(samples, dtype=float)
    if obs is not None:
        vals = obs.eval(vals)
    if vals.shape != times.shape:
        raise ValueError("samples and times must align")
    spacing = np.diff(times)
    if len(spacing) and not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0):
        raise ValueError("snapshot times must be equally spaced")
    dt = spacing[0] if len(spacing) else times[0]
    if burn_in is None:
        burn_in = DEFAULT_BURN_IN_FRACTION * times[-1]
    if burn_in >= times[-1]:
        raise ValueError("burn_in must be shorter than the trajectory")
    post = vals[times - dt >= burn_in - 1e-9 * dt]
    n = len(post)
    if n_batches is None:
        n_batches = int(np.floor(np.sqrt(n)))
    if n_batches < MIN_BATCHES:
        raise ValueError(f"only {n_batches} batches available, need at least {MIN_BATCHES}")
    size = n // n_batches
    batch_means = post[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    kv = float(batch_means.var(ddof=1) * size * dt)
    duration = n * dt
    return TimeAverageReport(
        value=float(post.mean()),
        burn_in=float(burn_in),
        kv_variance_estimate=kv,
        n_batches=n_batches,
        clt_halfwidth=float(1.96 * np.sqrt(kv / duration)),
        duration=float(duration),
    )


@dataclass
class VarianceRatioReport:
    """Across-trajectory CLT variances of two samplers on one observable.

    ``clt_variance_*`` is the sample variance of ``sqrt(T) * pi_T(phi)`` over
    independent trajectories; ``ratio = clt_variance_a / clt_variance_b``.
    ``kv_mean_*`` averages the per-trajectory batch-means estimates.
    """

    observable: str
    clt_variance_a: float
    clt_variance_b: float
    kv_mean_a: float
    kv_mean_b: float
    reports_a: list
    reports_b: list

    @property
    def ratio(self):
        return self.clt_variance_a / self.clt_variance_b


def _long_run_reports(spec, obs, cfg, burn_in, workers):
    res = run_ensemble(spec, cfg, [obs], record="window", keep_series=True, workers=workers)
    series = res.series[obs.name]
    return [time_average(res.times, s, burn_in=burn_in) for s in series]


def variance_ratio_experiment(spec_a, spec_b, obs, cfg, *, n_windows=DEFAULT_WINDOWS,
                              burn_in=None, workers=1):
    """Estimate ``sigma^2_a(phi) / sigma^2_b(phi)`` from independent long runs.

    ``cfg.t_end`` is the trajectory length ``T``. Each run records window
    averages of ``phi`` over ``n_windows`` equal windows so the time average
    uses every integration step.
    """
    if spec_a.potential is not spec_b.potential:
        raise ValueError("both samplers must target the same potential")
    stride = max(1, cfg.n_steps // n_windows)
    cfg = dataclasses.replace(cfg, snapshot_stride=stride)
    if cfg.n_steps % stride:
        raise ValueError(f"{cfg.n_steps} steps do not split into windows of {stride}")
    ra = _long_run_reports(spec_a, obs, cfg, burn_in, workers)
    rb = _long_run_reports(spec_b, obs, cfg, burn_in, workers)

    def clt_var(reports):
        vals = np.array([r.value for r in reports])
        return float(reports[0].duration * vals.var(ddof=1))

    return VarianceRatioReport(
        observable=obs.name,
        clt_variance_a=clt_var(ra),
        clt_variance_b=clt_var(rb),
        kv_mean_a=float(np.mean([r.kv_variance_estimate for r in ra])),
        kv_mean_b=float(np.mean([r.kv_variance_estimate for r in rb])),
        reports_a=ra,
        reports_b=rb,
    )


REPORT_HEADER = ["spec", "delta", "theta", "observable", "time_average", "kv_variance", "clt_halfwidth"]


def report_row(spec, obs_name, rep):
    f = spec.field
    delta = getattr(f, "delta", None)
    theta = getattr(f, "theta", None)
    return [spec.kind.value, "" if delta is None else delta, "" if theta is None else theta,
            obs_name, rep.value, rep.kv_variance_estimate, rep.clt_halfwidth]
