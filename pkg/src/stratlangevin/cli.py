"""Command-line front end and experiment drivers.

Every mode writes CSV artifacts that are deterministic functions of the run
configuration (seed included). Exit status: 0 all checks passed, 1 a certificate
or stationarity check failed, 2 configuration error, 3 numerical blow-up.
"""

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._csv import write_csv
from .dynamics import (BlowUpError, EnsembleConfig, Kind, gaussian_initial_states, make_dynamics,
                       run_ensemble)
from .estimators import (REPORT_HEADER, builtin_observable, error_curve, report_row,
                         variance_ratio_experiment)
from .perturbations import SkewMatrix, make_field
from .reference import expectation
from .spectral import build_basis, build_generator, kv_variance, theorem3_certificate
from .targets import QuadraticPotential, make_quadratic, make_warped_gaussian

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
MODES = ("figure1", "certificate", "stationarity", "variance-ratio", "reference")
STATIONARITY_MOMENTS = ("x1", "x2", "x1sq", "x2sq", "x1x2")
Z_LIMIT = 3.0
# figure1 records one snapshot per this many time units unless --stride is given
FIGURE1_SPACING = 1e-3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "figure1"
    target: Optional[str] = None
    b: float = 0.05
    lam: float = 0.1
    matrix: Optional[tuple] = None
    dynamics: Optional[str] = None
    delta: Optional[tuple] = None
    theta: Optional[float] = None
    dt: Optional[float] = None
    t_end: Optional[float] = None
    n_traj: Optional[int] = None
    seed: int = 0
    observable: Optional[tuple] = None
    degree: int = 10
    stride: Optional[int] = None
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        for name in ("dt", "t_end", "n_traj", "degree", "stride", "workers", "lam"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.delta is not None:
            if not self.delta:
                raise ConfigError("delta grid must not be empty")
            if any(d < 0 for d in self.delta):
                raise ConfigError("delta values must be >= 0")
        if self.target not in (None, "quadratic", "warped"):
            raise ConfigError(f"unknown target {self.target!r}")
        if self.dynamics is not None:
            try:
                Kind(self.dynamics)
            except ValueError:
                raise ConfigError(f"unknown dynamics {self.dynamics!r}") from None
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def resolved(self):
        """Fill mode-dependent defaults."""
        return dataclasses.replace(self, **{k: v for k, v in MODE_DEFAULTS[self.mode].items()
                                            if getattr(self, k) is None})


MODE_DEFAULTS = {
    "figure1": dict(target="warped", delta=(0.0, 16.0, 128.0, 256.0), dt=1e-3, t_end=4.0,
                    n_traj=1000, observable=("norm2",)),
    "certificate": dict(target="quadratic", delta=(0.0, 1.0, 3.162, 10.0, 16.0), theta=0.5,
                        observable=("x2", "x1x2", "norm2")),
    "stationarity": dict(target="quadratic", dynamics="stratonovich", delta=(0.0, 16.0), theta=0.5,
                         dt=1e-3, t_end=2.0, n_traj=10_000, stride=200,
                         observable=STATIONARITY_MOMENTS),
    "variance-ratio": dict(target="quadratic", dynamics="stratonovich", delta=(10.0,), theta=0.5,
                           dt=1e-2, t_end=2000.0, n_traj=200, observable=("x2",)),
    "reference": dict(target="warped", observable=("norm2",)),
}


def make_target(cfg):
    if cfg.target == "warped":
        return make_warped_gaussian(cfg.b)
    if cfg.matrix is not None:
        n = int(round(np.sqrt(len(cfg.matrix))))
        if n * n != len(cfg.matrix):
            raise ConfigError("matrix needs n*n entries")
        S = np.array(cfg.matrix, dtype=float).reshape(n, n)
    else:
        S = np.diag([1.0, cfg.lam])
    try:
        return make_quadratic(S)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _observables(cfg, p):
    try:
        obs = [builtin_observable(name) for name in cfg.observable]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return [o.with_reference(expectation(p, o).value) for o in obs]


def _quadratic(p):
    if not isinstance(p, QuadraticPotential):
        raise ConfigError("this mode needs a quadratic target")
    return p


def run_figure1(cfg):
    """Error curves of the ensemble mean for each (dynamics, delta); returns ``{filename: ErrorCurve}``.

    ``delta = 0`` runs the overdamped sampler once; every other ``delta`` runs
    the nonreversible sampler with ``theta = 1`` and the Stratonovich sampler
    with ``theta = 1/2``.
    """
    cfg = cfg.resolved()
    p = make_target(cfg)
    obs = _observables(cfg, p)[0]
    J = SkewMatrix.canonical(p.dim)
    stride = cfg.stride or max(1, int(round(FIGURE1_SPACING / cfg.dt)))
    ens = EnsembleConfig(cfg.n_traj, cfg.dt, cfg.t_end, np.zeros(p.dim), cfg.seed, stride)
    runs = []
    for delta in cfg.delta:
        if delta == 0:
            runs.append(("overdamped", 0.0, None))
        else:
            runs.append(("nonreversible", delta, 1.0))
            runs.append(("stratonovich", delta, 0.5))
    os.makedirs(cfg.out, exist_ok=True)
    written, curves = [], {}
    try:
        for kind, delta, theta in runs:
            field = None if theta is None else make_field(delta, theta, J, p)
            spec = make_dynamics(kind, p, field)
            log.info("figure1: %s delta=%g", kind, delta)
            res = run_ensemble(spec, ens, [obs], workers=cfg.workers)
            curve = error_curve(res, obs)
            name = f"{kind}_delta{delta:g}.csv"
            path = os.path.join(cfg.out, name)
            written.append(path)
            curve.to_csv(path, meta=[f"reference pi({obs.name}) = {obs.reference!r}",
                                     f"dynamics = {kind}", f"delta = {delta!r}",
                                     f"theta = {theta!r}", f"dt = {cfg.dt!r}",
                                     f"n_traj = {cfg.n_traj}", f"seed = {cfg.seed}"])
            curves[name] = curve
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return curves


def run_certificate(cfg):
    cfg = cfg.resolved()
    p = _quadratic(make_target(cfg))
    try:
        obs = [builtin_observable(name) for name in cfg.observable]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cert = theorem3_certificate(p, cfg.delta, cfg.theta, obs, cfg.degree)
    cert.to_csv(_out_file(cfg, "certificate.csv"),
                meta=[f"S = {p.S.tolist()}", f"degree = {cfg.degree}",
                      f"passed = {str(cert.passed).lower()}"] + [f"FAIL {m}" for m in cert.failures])
    return cert


@dataclass
class StationarityReport:
    rows: list
    passed: bool
    max_abs_z: float


def run_stationarity(cfg, field_factory=None):
    """Start from exact draws of ``pi`` and track first and second moments.

    ``field_factory(potential, delta)`` replaces the built-in perturbation;
    it exists to inject deliberately invalid fields as a negative control.
    """
    cfg = cfg.resolved()
    p = _quadratic(make_target(cfg))
    cov = p.covariance
    exact = {"x1": 0.0, "x2": 0.0, "x1sq": cov[0, 0], "x2sq": cov[1, 1], "x1x2": cov[0, 1]}
    try:
        moments = [builtin_observable(m, exact[m]) for m in cfg.observable]
    except (KeyError, ValueError):
        raise ConfigError(f"stationarity moments must be among {STATIONARITY_MOMENTS}") from None
    x0 = gaussian_initial_states(p, cfg.n_traj, cfg.seed)
    ens = EnsembleConfig(cfg.n_traj, cfg.dt, cfg.t_end, x0, cfg.seed, cfg.stride)
    J = SkewMatrix.canonical(p.dim)
    rows = []
    for delta in cfg.delta:
        kind = Kind(cfg.dynamics)
        if kind is Kind.OVERDAMPED:
            field = None
        elif field_factory is not None:
            field = field_factory(p, delta)
        else:
            field = make_field(delta, cfg.theta, J, p)
        res = run_ensemble(make_dynamics(kind, p, field), ens, moments, workers=cfg.workers)
        for m in moments:
            mean, std = res.stats[m.name]
            se = std / np.sqrt(cfg.n_traj)
            z = (mean - m.reference) / se
            rows.extend([kind.value, delta, t, m.name, mu, m.reference, s, zz]
                        for t, mu, s, zz in zip(res.times, mean, se, z))
    max_z = max(abs(r[-1]) for r in rows)
    passed = bool(max_z <= Z_LIMIT)
    write_csv(_out_file(cfg, "stationarity.csv"),
              ["dynamics", "delta", "time", "moment", "mean", "expected", "stderr", "z"], rows,
              meta=[f"S = {p.S.tolist()}", f"theta = {cfg.theta!r}", f"dt = {cfg.dt!r}",
                    f"n_traj = {cfg.n_traj}", f"seed = {cfg.seed}",
                    f"passed = {str(passed).lower()}"])
    return StationarityReport(rows, passed, float(max_z))


@dataclass
class VarianceRatioOutcome:
    report: object
    galerkin_sigma2_L: Optional[float] = None
    galerkin_sigma2_S: Optional[float] = None

    @property
    def galerkin_ratio(self):
        if self.galerkin_sigma2_L is None:
            return None
        return self.galerkin_sigma2_L / self.galerkin_sigma2_S


def run_variance_ratio(cfg):
    """Overdamped versus perturbed sampler; ``ratio = sigma^2_overdamped / sigma^2_perturbed``."""
    cfg = cfg.resolved()
    p = make_target(cfg)
    obs = _observables(cfg, p)[0]
    delta = cfg.delta[0]
    kind = Kind(cfg.dynamics)
    field = None if kind is Kind.OVERDAMPED else make_field(delta, cfg.theta,
                                                            SkewMatrix.canonical(p.dim), p)
    base = make_dynamics("overdamped", p)
    other = make_dynamics(kind, p, field)
    ens = EnsembleConfig(cfg.n_traj, cfg.dt, cfg.t_end, np.zeros(p.dim), cfg.seed)
    rep = variance_ratio_experiment(base, other, obs, ens, workers=cfg.workers)
    outcome = VarianceRatioOutcome(rep)
    meta = [f"observable = {obs.name}", f"reference = {obs.reference!r}", f"dt = {cfg.dt!r}",
            f"T = {cfg.t_end!r}", f"n_traj = {cfg.n_traj}", f"seed = {cfg.seed}",
            f"clt_variance_overdamped = {rep.clt_variance_a!r}",
            f"clt_variance_{kind.value} = {rep.clt_variance_b!r}",
            f"batch_means_mean_overdamped = {rep.kv_mean_a!r}",
            f"batch_means_mean_{kind.value} = {rep.kv_mean_b!r}",
            f"ratio = {rep.ratio!r}"]
    if isinstance(p, QuadraticPotential) and field is not None:
        basis = build_basis(p, cfg.degree)
        outcome.galerkin_sigma2_L = kv_variance(build_generator("L", basis), obs)[0]
        op = "L_S" if kind is Kind.STRATONOVICH else "L_D"
        outcome.galerkin_sigma2_S = kv_variance(build_generator(op, basis, field), obs)[0]
        meta += [f"galerkin_sigma2_overdamped = {outcome.galerkin_sigma2_L!r}",
                 f"galerkin_sigma2_{kind.value} = {outcome.galerkin_sigma2_S!r}",
                 f"galerkin_ratio = {outcome.galerkin_ratio!r}"]
    rows = [report_row(base, obs.name, r) for r in rep.reports_a]
    rows += [report_row(other, obs.name, r) for r in rep.reports_b]
    write_csv(_out_file(cfg, "variance_ratio.csv"), REPORT_HEADER, rows, meta)
    return outcome


def run_reference(cfg):
    cfg = cfg.resolved()
    p = make_target(cfg)
    out = []
    for name in cfg.observable:
        try:
            obs = builtin_observable(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        out.append((name, expectation(p, obs)))
    return out


def _out_file(cfg, default_name):
    out = cfg.out
    if out.endswith(".csv"):
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return out
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, default_name)


# -- argument handling -------------------------------------------------------

_FLOAT_LIST = ("delta", "matrix")
_STR_LIST = ("observable",)
_FLOATS = ("b", "lam", "theta", "dt", "t_end")
_INTS = ("n_traj", "seed", "degree", "stride", "workers")
_ALIASES = {"lambda": "lam"}


def _convert(key, raw):
    try:
        if key in _FLOAT_LIST:
            return tuple(float(v) for v in str(raw).replace(";", ",").split(",") if v.strip())
        if key in _STR_LIST:
            return tuple(v.strip() for v in str(raw).split(",") if v.strip())
        if key in _FLOATS:
            return float(raw)
        if key in _INTS:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return str(raw)


def _normalise_key(key):
    key = key.strip().lstrip("-").replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in {f.name for f in dataclasses.fields(RunConfig)}:
        raise ConfigError(f"unknown configuration key {key!r}")
    return key


def read_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, raw = line.split("=", 1)
            key = _normalise_key(key)
            values[key] = _convert(key, raw.strip())
    return values


def build_parser():
    ap = argparse.ArgumentParser(prog="stratlangevin",
                                 description="Compare overdamped, nonreversible and "
                                             "Stratonovich-perturbed Langevin samplers.")
    ap.add_argument("--config", help="flat key = value file; flags override it")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--target", choices=("quadratic", "warped"))
    ap.add_argument("--b", help="warp parameter of the warped Gaussian")
    ap.add_argument("--lambda", dest="lam", help="S = diag(1, lambda) for the quadratic target")
    ap.add_argument("--matrix", help="row-major entries of S, e.g. 1,0,0,0.1")
    ap.add_argument("--dynamics", choices=[k.value for k in Kind])
    ap.add_argument("--delta", help="comma-separated perturbation sizes")
    ap.add_argument("--theta")
    ap.add_argument("--dt")
    ap.add_argument("--t-end", dest="t_end")
    ap.add_argument("--n-traj", dest="n_traj")
    ap.add_argument("--seed")
    ap.add_argument("--observable", help="comma-separated: x1, x2, x1x2, x1sq, x2sq, norm2")
    ap.add_argument("--degree", help="Hermite truncation degree for the spectral oracle")
    ap.add_argument("--stride", help="record every k-th step")
    ap.add_argument("--workers")
    ap.add_argument("--out", help="output directory, or a .csv path for single-file modes")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(argv):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            raise
        raise ConfigError("invalid command line") from None
    values = read_config_file(args.config) if args.config else {}
    for key, raw in vars(args).items():
        if key in ("config", "verbose") or raw is None:
            continue
        values[key] = _convert(key, raw)
    try:
        return RunConfig(**values), args.verbose
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None):
    try:
        cfg, verbose = config_from_args(argv)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if cfg.mode == "figure1":
            curves = run_figure1(cfg)
            for name, c in curves.items():
                err, se = c.window_mean(0.5 * c.times[-1], c.times[-1])
                print(f"{name}: mean error over second half {err:.6g} (stderr {se:.3g})")
            return EXIT_OK
        if cfg.mode == "certificate":
            cert = run_certificate(cfg)
            for r in cert.rows:
                print(f"delta={r.delta:g} {r.observable}: lambda_L={r.lambda_L:.6g} "
                      f"lambda_S={r.lambda_S:.6g} sigma2_L={r.sigma2_L:.6g} sigma2_S={r.sigma2_S:.6g}")
            for m in cert.failures:
                print(f"FAIL {m}")
            return EXIT_OK if cert.passed else EXIT_FAILED
        if cfg.mode == "stationarity":
            rep = run_stationarity(cfg)
            print(f"stationarity {'PASS' if rep.passed else 'FAIL'}: max |z| = {rep.max_abs_z:.3f}")
            return EXIT_OK if rep.passed else EXIT_FAILED
        if cfg.mode == "variance-ratio":
            out = run_variance_ratio(cfg)
            rep = out.report
            print(f"sigma2 overdamped / perturbed = {rep.ratio:.6g}")
            if out.galerkin_ratio is not None:
                print(f"Galerkin ratio = {out.galerkin_ratio:.6g}")
            return EXIT_OK
        for name, e in run_reference(cfg):
            print(f"pi({name}) = {e.value!r}  (doubling error {e.error_estimate:.3e})")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
