"""Monte Carlo experiment engine: sample, LOO, risk oracle, summaries, bounds, CSV."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds as bnd
from .core import (
    KDE,
    KERNEL_DERIV_SUP,
    OLS,
    ConfigError,
    EmpiricalMean,
    GaussianLinear,
    GaussianSine,
    Loss,
    StabilizedNW,
    StabilizedOLS,
    UniformSine,
    derive_seed,
    substream,
)
from .loo import loo_fast, risk_oracle
from .stability import (
    StabilityProfile,
    envelope_from_probes,
    estimate_delta3,
    gradient_probes,
)

RECORD_HEADER = ["n", "rep", "loo_estimate", "risk", "error", "oracle_se"]
SUMMARY_HEADER = ["n", "std_dev", "tail_freq", "tail_se", "bound_main", "bound_simplified",
                  "bound_data_dependent", "valid_main"]
SWEEP_HEADER = ["n", "eps", "bound_main", "valid_main", "bound_simplified",
                "bound_data_dependent", "valid_data_dependent"]

DEFAULT_N_GRID = (32, 64, 128, 256, 512, 1024, 2048)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    generator: str = "uniform_sine"
    gen_slope: float = 5.0
    gen_noise: float = 1.0
    gen_freq: float = 10.0
    sigma2_mu: Optional[float] = None
    estimator: str = "kde"
    bandwidth: float = 0.1
    stabilizer: float = 0.01
    truncation: float = 3.0
    sample_coord: str = "y"
    loss: str = "identity_abs"
    n_grid: list = field(default_factory=lambda: list(DEFAULT_N_GRID))
    reps: int = 200
    oracle_M: int = 100_000
    eps_tail: float = 0.02
    eps_bound_grid: list = field(default_factory=list)
    base_seed: int = 20240229
    two_sided: bool = False
    growth: str = "linear"
    lipschitz_const: Optional[float] = None
    c_l: float = 0.0
    c_q: Optional[float] = None
    z_samples: int = 200
    profile_probes: int = 1000
    profile_response_spread: float = 1.0
    delta3_reps: int = 200
    delta3_M: int = 2000
    restriction_eps: Optional[float] = None
    restriction_reps: int = 500
    restriction_var_x: Optional[float] = None
    restriction_var_y: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        grid = [int(v) for v in self.n_grid]
        if not grid or any(v < 2 for v in grid):
            raise ConfigError("n_grid entries must be integers >= 2")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n_grid must be strictly increasing")
        self.n_grid = grid
        self.eps_bound_grid = [float(v) for v in self.eps_bound_grid]
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.oracle_M < 2:
            raise ConfigError("oracle_M must be at least 2")
        if not self.eps_tail > 0:
            raise ConfigError("eps_tail must be positive")
        if self.generator not in ("uniform_sine", "gaussian_linear", "gaussian_sine"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.growth not in ("linear", "quadratic"):
            raise ConfigError(f"unknown growth {self.growth!r}")
        if self.profile_response_spread < 1:
            raise ConfigError("profile_response_spread must be >= 1")
        self.make_generator()
        self.make_estimator()
        self.make_loss()

    # -- builders
    def make_generator(self):
        if self.generator == "uniform_sine":
            return UniformSine(self.gen_freq, 1.0 if self.sigma2_mu is None else self.sigma2_mu)
        if self.generator == "gaussian_linear":
            gen = GaussianLinear(self.gen_slope, self.gen_noise)
            if self.sigma2_mu is not None and not math.isclose(self.sigma2_mu, gen.sigma2_mu):
                raise ConfigError("gaussian_linear fixes sigma2_mu to the top covariance eigenvalue "
                                  f"({gen.sigma2_mu:.6g}); drop the sigma2_mu key")
            return gen
        return GaussianSine(self.gen_freq, self.gen_noise, self.sigma2_mu)

    def make_estimator(self):
        kind = self.estimator
        if kind == "empirical_mean":
            return EmpiricalMean(self.sample_coord)
        if kind == "kde":
            return KDE(self.bandwidth, self.sample_coord)
        if kind == "ols_simple":
            return OLS()
        if kind == "ols_stabilized":
            return StabilizedOLS(self.stabilizer, self.truncation)
        if kind == "nw_kernel_stabilized":
            return StabilizedNW(self.bandwidth, self.stabilizer)
        raise ConfigError(f"unknown estimator {kind!r}")

    def make_loss(self):
        return Loss(self.loss)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind in ("bool",):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text.lower() in ("none", ""):
        return None
    if kind == "int":
        return int(float(text)) if "e" in text.lower() else int(text)
    if kind == "float":
        return float(text)
    return text


_KINDS = {
    f.name: ("list" if f.name in ("n_grid", "eps_bound_grid")
             else "bool" if f.type in ("bool",)
             else "int" if f.type in ("int",)
             else "float" if "float" in str(f.type)
             else "str")
    for f in dataclasses.fields(ExperimentConfig)
}


def config_from_mapping(values: dict) -> ExperimentConfig:
    unknown = [k for k in values if k not in CONFIG_KEYS]
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return ExperimentConfig(**values)


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment, lists are comma-separated."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        if key in values:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})")
        kind = _KINDS[key]
        try:
            if kind == "list":
                items = [s for s in (p.strip() for p in val.split(",")) if s]
                conv = int if key == "n_grid" else float
                values[key] = [conv(float(s)) if conv is int else conv(s) for s in items]
            else:
                values[key] = _parse_scalar(val, kind)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r} (line {lineno}): {exc}") from None
    return config_from_mapping(values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key in CONFIG_KEYS:
        v = getattr(cfg, key)
        if v is None:
            continue
        if isinstance(v, list):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- presets

PRESETS = {
    "kde-sine": ExperimentConfig(
        name="kde-sine", generator="uniform_sine", gen_freq=10.0, estimator="kde",
        bandwidth=0.1, sample_coord="y", loss="identity_abs",
        lipschitz_const=KERNEL_DERIV_SUP / 0.1**2,
        eps_bound_grid=[0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
    ),
    "ols-gaussian": ExperimentConfig(
        name="ols-gaussian", generator="gaussian_linear", gen_slope=5.0, gen_noise=1.0,
        estimator="ols_simple", loss="absolute", sample_coord="x",
        # the expected absolute loss is 1-Lipschitz in (x, y) per unit of sqrt(1 + beta^2)
        lipschitz_const=math.sqrt(26.0),
        restriction_eps=0.5,
        eps_bound_grid=[0.02, 0.1, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7],
    ),
    "nw-stabilized": ExperimentConfig(
        name="nw-stabilized", generator="gaussian_sine", gen_freq=10.0, gen_noise=1.0,
        estimator="nw_kernel_stabilized", bandwidth=0.01, stabilizer=0.01,
        sample_coord="x", loss="absolute",
        # the smoothed regression function has slope at most freq in x and 1 in y
        lipschitz_const=math.hypot(10.0, 1.0),
        profile_response_spread=16.0,
        eps_bound_grid=[0.02, 0.1, 1.0, 10.0, 1e2, 1e3, 1e4],
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return dataclasses.replace(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class Record:
    n: int
    rep: int
    loo_estimate: float
    risk: float
    error: float
    oracle_se: float


@dataclass
class Summary:
    n: int
    std_dev: float
    tail_freq: float
    tail_se: float
    mean_error: float
    bound_main: Optional[float] = None
    bound_simplified: Optional[float] = None
    bound_data_dependent: Optional[float] = None
    valid_main: Optional[bool] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    summaries: list
    sweep: list = field(default_factory=list)
    profiles: dict = field(default_factory=dict)
    restrictions: dict = field(default_factory=dict)

    def errors(self, n: int) -> np.ndarray:
        return np.array([r.error for r in self.records if r.n == n])


def run_unit(cfg: ExperimentConfig, gen, est, loss, n: int, rep: int) -> Record:
    D = gen.sample(substream(cfg.base_seed, n, rep, "data"), n)
    try:
        loo = loo_fast(est, loss, D).loo_estimate
        oracle = risk_oracle(est, loss, D, gen, cfg.oracle_M, substream(cfg.base_seed, n, rep, "oracle"))
    except Exception as exc:
        raise RuntimeError(f"unit (n={n}, rep={rep}) failed: {exc}") from exc
    return Record(n, rep, loo, oracle.risk, oracle.risk - loo, oracle.std_error)


def summarize(cfg: ExperimentConfig, records) -> list:
    out = []
    for n in cfg.n_grid:
        err = np.array([r.error for r in records if r.n == n], dtype=np.float64)
        tail = float(np.mean(np.abs(err) > cfg.eps_tail))
        std = float(np.std(err, ddof=1)) if err.size > 1 else 0.0
        out.append(Summary(n, std, tail, math.sqrt(tail * (1.0 - tail) / err.size), float(err.mean())))
    return out


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("LOO_CERTIFY_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def bound_spec(cfg: ExperimentConfig, gen, n: int) -> bnd.BoundSpec:
    lip = cfg.lipschitz_const
    if cfg.growth == "linear" and lip is None:
        raise ConfigError("linear growth needs lipschitz_const")
    return bnd.BoundSpec(gen.sigma2_mu, gen.second_moment, n, cfg.growth, lip, cfg.c_l, cfg.c_q)


def build_profile(cfg: ExperimentConfig, n: int):
    """Stability profile at ``n``: closed form where known, fitted otherwise.

    Returns ``(profile, info)`` where ``info`` records the fitted numbers.
    """
    gen, est, loss = cfg.make_generator(), cfg.make_estimator(), cfg.make_loss()
    if isinstance(est, EmpiricalMean) and loss.kind == "absolute":
        abs_mom = gen.abs_moment(est.coord)
        d1, d2, d3 = 1.0 / math.sqrt(n), 0.0, 2.0 * abs_mom / (n - 1)
        return StabilityProfile.constant(d1, d2, d3, "analytic"), {"delta1": d1, "delta2": d2, "delta3": d3}
    if isinstance(est, KDE) and loss.kind == "identity_abs":
        d1 = KERNEL_DERIV_SUP / (est.bandwidth**2 * math.sqrt(n))
        return StabilityProfile.constant(d1, 0.0, 0.0, "analytic"), {"delta1": d1, "delta2": 0.0, "delta3": 0.0}
    g, r, _ = gradient_probes(est, loss, gen, n, cfg.profile_probes,
                              derive_seed(cfg.base_seed, n, "profile"),
                              response_spread=cfg.profile_response_spread)
    fit = envelope_from_probes(g, r, n)
    d3_est, d3_se = estimate_delta3(est, loss, gen, n, cfg.delta3_reps, cfg.delta3_M,
                                    derive_seed(cfg.base_seed, n, "delta3"))
    d3 = d3_est + 3.0 * d3_se
    prof = StabilityProfile.constant(fit.delta1_hat, fit.delta2_hat, d3, "fitted")
    return prof, {"delta1": fit.delta1_hat, "delta2": fit.delta2_hat, "delta3": d3,
                  "delta3_estimate": d3_est, "delta3_se": d3_se}


def z_sample_set(cfg: ExperimentConfig, gen, n: int):
    ZX, ZY = gen.draw(substream(cfg.base_seed, n, 0, "zsamples"), cfg.z_samples)
    return bnd.as_observations(ZX, ZY)


def restriction_variances(cfg: ExperimentConfig, gen):
    vx, vy = cfg.restriction_var_x, cfg.restriction_var_y
    if vx is None or vy is None:
        if isinstance(gen, GaussianLinear):
            auto = (1.0, gen.slope**2 + gen.noise**2)
        else:
            X, Y = gen.draw(np.random.default_rng(20240229), 1_000_000)
            auto = (float(X.var()), float(Y.var()))
        vx = auto[0] if vx is None else vx
        vy = auto[1] if vy is None else vy
    return vx, vy


def evaluate_bounds(cfg: ExperimentConfig, n: int, eps_values, profile, restriction=None):
    """Rows of ``(eps, main, simplified, data_dependent)`` TailBounds at sample size ``n``."""
    gen = cfg.make_generator()
    spec = bound_spec(cfg, gen, n)
    zs = z_sample_set(cfg, gen, n)
    lipschitz_case = (spec.growth == "linear"
                      and all(profile.delta2(n, z) == 0 for z in zs[:5]))
    rows = []
    for eps in eps_values:
        main = bnd.bound_main(spec, eps, profile, zs)
        simp = (bnd.bound_simplified(spec, eps, profile.delta1, profile.delta3(n), zs)
                if lipschitz_case else None)
        dd = bnd.bound_data_dependent(spec, eps, restriction, zs) if restriction is not None else None
        if cfg.two_sided:
            main = main.doubled()
            simp = simp.doubled() if simp is not None else None
            dd = dd.doubled() if dd is not None else None
        rows.append((eps, main, simp, dd))
    return rows


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None,
                   with_bounds: bool = True) -> ExperimentResult:
    """Run every ``(n, rep)`` unit, summarize, and evaluate the bounds.

    Units are independent and draw from their own substreams, so the result does
    not depend on ``threads``.
    """
    gen, est, loss = cfg.make_generator(), cfg.make_estimator(), cfg.make_loss()
    units = [(n, rep) for n in cfg.n_grid for rep in range(cfg.reps)]
    workers = resolve_threads(threads)
    if workers == 1:
        records = [run_unit(cfg, gen, est, loss, n, rep) for n, rep in units]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda u: run_unit(cfg, gen, est, loss, *u), units))
    records.sort(key=lambda r: (r.n, r.rep))
    summaries = summarize(cfg, records)
    result = ExperimentResult(cfg, records, summaries)
    if with_bounds:
        attach_bounds(result)
    return result


def attach_bounds(result: ExperimentResult) -> None:
    cfg = result.config
    gen, est, loss = cfg.make_generator(), cfg.make_estimator(), cfg.make_loss()
    for s in result.summaries:
        n = s.n
        profile, info = build_profile(cfg, n)
        result.profiles[n] = info
        restriction = None
        if cfg.restriction_eps is not None:
            vx, vy = restriction_variances(cfg, gen)
            restriction = bnd.estimate_restriction_set(
                est, loss, gen, n, cfg.restriction_eps, cfg.restriction_reps,
                derive_seed(cfg.base_seed, n, "restriction"), var_x=vx, var_y=vy,
                probes=min(cfg.profile_probes, 500))
            result.restrictions[n] = restriction
        eps_values = [cfg.eps_tail] + [e for e in cfg.eps_bound_grid]
        rows = evaluate_bounds(cfg, n, eps_values, profile, restriction)
        _, main, simp, dd = rows[0]
        s.bound_main = main.value
        s.valid_main = main.valid
        s.bound_simplified = simp.value if simp is not None else None
        s.bound_data_dependent = dd.value if dd is not None else None
        for eps, main, simp, dd in rows[1:]:
            result.sweep.append((n, eps, main, simp, dd))


# ---------------------------------------------------------------- output


def fit_loglog_slope(pairs):
    """Least-squares line through ``(log n, log value)``: ``(slope, intercept, r2)``."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least three (n, value) pairs")
    n = np.array([p[0] for p in pairs], dtype=np.float64)
    v = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(v <= 0) or np.any(n <= 0):
        raise ValueError("log-log fit needs positive n and values")
    return _linfit(np.log(n), np.log(v))


def fit_semilog_slope(pairs):
    """Least-squares line through ``(n, log value)``."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least three (n, value) pairs")
    n = np.array([p[0] for p in pairs], dtype=np.float64)
    v = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError("semilog fit needs positive values")
    return _linfit(n, np.log(v))


def _linfit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_csv(result: ExperimentResult, path) -> list:
    """Write ``<name>_records.csv``, ``<name>_summary.csv`` and ``<name>_bounds.csv``."""
    out = Path(path)
    name = result.config.name
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        rec_path = out / f"{name}_records.csv"
        with open(rec_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_HEADER)
            for r in sorted(result.records, key=lambda r: (r.n, r.rep)):
                w.writerow([_fmt(r.n), _fmt(r.rep), _fmt(r.loo_estimate), _fmt(r.risk),
                            _fmt(r.error), _fmt(r.oracle_se)])
        written.append(rec_path)
        sum_path = out / f"{name}_summary.csv"
        with open(sum_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for s in result.summaries:
                w.writerow([_fmt(s.n), _fmt(s.std_dev), _fmt(s.tail_freq), _fmt(s.tail_se),
                            _fmt(s.bound_main), _fmt(s.bound_simplified),
                            _fmt(s.bound_data_dependent), _fmt(s.valid_main)])
        written.append(sum_path)
        if result.sweep:
            sweep_path = out / f"{name}_bounds.csv"
            with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(SWEEP_HEADER)
                for n, eps, main, simp, dd in result.sweep:
                    w.writerow([_fmt(n), _fmt(eps), _fmt(main.value), _fmt(main.valid),
                                _fmt(simp.value if simp else None),
                                _fmt(dd.value if dd else None), _fmt(dd.valid if dd else None)])
            written.append(sweep_path)
    except OSError as exc:
        raise OSError(f"cannot write results under {out}: {exc}") from exc
    return written


def read_records(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [Record(int(r["n"]), int(r["rep"]), float(r["loo_estimate"]), float(r["risk"]),
                   float(r["error"]), float(r["oracle_se"])) for r in rows]


def emit_svg(result: ExperimentResult, path) -> list:
    """One small log-log line chart per summary column."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for column in ("std_dev", "tail_freq", "bound_main"):
        pts = [(s.n, getattr(s, column)) for s in result.summaries
               if getattr(s, column) is not None and getattr(s, column) > 0]
        target = out / f"{result.config.name}_{column}.svg"
        target.write_text(_svg_chart(pts, f"{result.config.name}: {column}"), encoding="utf-8")
        written.append(target)
    return written


def _svg_chart(points, title, width=480, height=320, pad=48):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            f'<rect width="100%" height="100%" fill="white"/>'
            f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    if len(points) < 2:
        return head + f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no positive data</text></svg>\n'
    lx = np.log10([p[0] for p in points])
    ly = np.log10([p[1] for p in points])
    x0, x1 = lx.min(), lx.max()
    y0, y1 = ly.min(), ly.max()
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = lambda v: pad + (v - x0) / (x1 - x0) * (width - 2 * pad)  # noqa: E731
    sy = lambda v: height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)  # noqa: E731
    path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(lx, ly))
    body = [f'<polyline fill="none" stroke="black" stroke-width="1.5" points="{path}"/>']
    for (n, v), a, b in zip(points, lx, ly):
        body.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3"/>')
        body.append(f'<text x="{sx(a):.2f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{n}</text>')
    body.append(f'<text x="8" y="{pad}" font-size="10">{10 ** y1:.3g}</text>')
    body.append(f'<text x="8" y="{height - pad}" font-size="10">{10 ** y0:.3g}</text>')
    return head + "".join(body) + "</svg>\n"


# ---------------------------------------------------------------- stability tables


def stability_table(cfg: ExperimentConfig, accept=None):
    """Per-n envelope fit and delta3 estimate for the configured pair."""
    gen, est, loss = cfg.make_generator(), cfg.make_estimator(), cfg.make_loss()
    rows = []
    for n in cfg.n_grid:
        g, r, _ = gradient_probes(est, loss, gen, n, cfg.profile_probes,
                                  derive_seed(cfg.base_seed, n, "profile"), accept,
                                  response_spread=cfg.profile_response_spread)
        fit = envelope_from_probes(g, r, n)
        d3, se = estimate_delta3(est, loss, gen, n, cfg.delta3_reps, cfg.delta3_M,
                                 derive_seed(cfg.base_seed, n, "delta3"))
        rows.append({"n": n, "delta1_hat": fit.delta1_hat, "delta2_hat": fit.delta2_hat,
                     "violations": fit.violations, "probes": fit.probes,
                     "delta3": d3, "delta3_se": se})
    return rows


__all__ = [
    "ExperimentConfig", "ExperimentResult", "Record", "Summary", "PRESETS", "preset",
    "parse_config_text", "load_config", "format_config", "run_experiment", "summarize",
    "fit_loglog_slope", "fit_semilog_slope", "emit_csv", "emit_svg", "read_records",
    "build_profile", "evaluate_bounds", "stability_table",
]
