"""Runnable checks binding the estimators' stability claims to the code."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import k_epsilon_membership
from .core import (
    KDE,
    KERNEL_DERIV_SUP,
    OLS,
    Dataset,
    EmpiricalMean,
    GaussianLinear,
    GaussianSine,
    Loss,
    NondifferentiableError,
    StabilizedNW,
    StabilizedOLS,
    UniformSine,
    derive_seed,
    substream,
)
from .stability import estimate_delta3, fit_envelope, loss_gradient, truncated_power_gradient

N_GRID = (64, 256, 1024)
PROBES = 200
SCALE_BUDGET = 1.5
EXACT_SLACK = 1e-9

# settings of the claim checks
KDE_BANDWIDTH = 0.1
K_EPS = 0.5
STAB_OLS = dict(stabilizer=0.1, truncation=1.0)
NW_CHECK = dict(bandwidth=0.5, stabilizer=0.5)
NW_SPREAD = 16.0
TRUNC_LEVEL = 1.0


@dataclass(frozen=True)
class ClaimCheck:
    claim_id: str
    status: str
    measured: float
    budget: float
    detail: str = ""

    @classmethod
    def judge(cls, claim_id, measured, budget, detail=""):
        ok = bool(np.isfinite(measured)) and measured <= budget
        return cls(claim_id, "pass" if ok else "fail", float(measured), float(budget), detail)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _probe_norms(est, loss, gen, n, seed, tag, accept=None, value=None):
    """``value(D, z, grad)`` over ``PROBES`` smooth probes (default: gradient norm)."""
    out = []
    attempt = 0
    while len(out) < PROBES and attempt < 10 * PROBES:
        rng = substream(seed, n, attempt, tag)
        attempt += 1
        X, Y = gen.draw(rng, n)
        zx, zy = gen.draw(rng, 1)
        if accept is not None and not accept(X, Y):
            continue
        try:
            grad = loss_gradient(est, loss, X, Y, (zx, zy))
        except NondifferentiableError:
            continue
        out.append(value(X, Y, zx, grad) if value else float(np.linalg.norm(grad)))
    return np.array(out)


def _scale_ratio(values):
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        return math.inf
    return float(values.max() / values.min())


def _fmt(per_n):
    return " ".join(f"n={n}:{v:.4g}" for n, v in per_n)


def check_mean_delta1(seed):
    gen, est, loss = GaussianLinear(0.0, 1.0), EmpiricalMean("x"), Loss("absolute")
    per_n = [(n, float(np.max(_probe_norms(est, loss, gen, n, seed, "mean-d1")) * math.sqrt(n)))
             for n in N_GRID]
    return ClaimCheck.judge("mean-delta1", max(v for _, v in per_n), 1.0 + EXACT_SLACK,
                            "max ||grad|| sqrt(n); " + _fmt(per_n))


def check_mean_delta3(seed):
    gen, est, loss = GaussianLinear(0.0, 1.0), EmpiricalMean("x"), Loss("absolute")
    abs_mom = gen.abs_moment("x")
    per_n = []
    for n in N_GRID:
        d3, se = estimate_delta3(est, loss, gen, n, 200, 2000, derive_seed(seed, n, "mean-d3"))
        per_n.append((n, (d3 - 3.0 * se) * (n - 1) / (2.0 * abs_mom)))
    return ClaimCheck.judge("mean-delta3", max(v for _, v in per_n), 1.0,
                            "(delta3 - 3 SE) (n-1) / (2 E|X|); " + _fmt(per_n))


def check_kde_delta1(seed):
    gen, est, loss = UniformSine(), KDE(KDE_BANDWIDTH, "y"), Loss("identity_abs")
    h = KDE_BANDWIDTH
    per_n = [(n, float(np.max(_probe_norms(est, loss, gen, n, seed, "kde-d1"))) * h * h * math.sqrt(n))
             for n in N_GRID]
    return ClaimCheck.judge("kde-delta1", max(v for _, v in per_n), KERNEL_DERIV_SUP + EXACT_SLACK,
                            "max ||grad|| h^2 sqrt(n); " + _fmt(per_n))


def check_kde_delta3(seed):
    gen, est, loss = UniformSine(), KDE(KDE_BANDWIDTH, "y"), Loss("identity_abs")
    per_n = []
    for n in N_GRID:
        d3, se = estimate_delta3(est, loss, gen, n, 200, 2000, derive_seed(seed, n, "kde-d3"))
        per_n.append((n, d3 / (3.0 * se)))
    return ClaimCheck.judge("kde-delta3", max(v for _, v in per_n), 1.0,
                            "delta3 / (3 SE); " + _fmt(per_n))


def check_ols_keps(seed):
    gen, est, loss = GaussianLinear(5.0, 1.0), OLS(), Loss("absolute")
    var_y = gen.slope**2 + gen.noise**2
    eps = K_EPS

    def accept(X, Y):
        return k_epsilon_membership(Dataset(X, Y), eps, 1.0, var_y)

    def value(X, Y, zx, grad):
        n = X.shape[0]
        scale = (1 + eps) / ((1 - eps) * math.sqrt(n)) * ((1 + eps) + abs(float(zx[0, 0])))
        return float(np.linalg.norm(grad)) / scale

    per_n = [(n, float(np.max(_probe_norms(est, loss, gen, n, seed, "ols-k", accept, value))))
             for n in N_GRID]
    return ClaimCheck.judge("ols-Keps-grad", _scale_ratio([v for _, v in per_n]), SCALE_BUDGET,
                            "max/min over n of in-K normalized ratio; " + _fmt(per_n))


def check_stab_beta(seed):
    gen = GaussianLinear(5.0, 1.0)
    est = StabilizedOLS(**STAB_OLS)
    b, delta = STAB_OLS["truncation"], STAB_OLS["stabilizer"]
    per_n = []
    for n in N_GRID:
        top = 0.0
        for rep in range(PROBES):
            X, Y = gen.draw(substream(seed, n, rep, "stab-beta"), n)
            # T(1) - T(0) is the slope, so its data gradient is the difference of the two
            g1 = np.concatenate(est.vjp(X, Y, np.array([1.0]), np.array([1.0])), axis=1)
            g0 = np.concatenate(est.vjp(X, Y, np.array([0.0]), np.array([1.0])), axis=1)
            top = max(top, float(np.linalg.norm(g1 - g0)) * math.sqrt(n) * delta / b)
        per_n.append((n, top))
    return ClaimCheck.judge("ols-stab-beta", _scale_ratio([v for _, v in per_n]), SCALE_BUDGET,
                            "max ||grad beta|| sqrt(n) delta / b; " + _fmt(per_n))


def check_stab_grad(seed):
    gen, est, loss = GaussianLinear(5.0, 1.0), StabilizedOLS(**STAB_OLS), Loss("absolute")
    per_n = [(n, float(np.max(_probe_norms(est, loss, gen, n, seed, "stab-grad"))) * math.sqrt(n))
             for n in N_GRID]
    return ClaimCheck.judge("ols-stab-grad", _scale_ratio([v for _, v in per_n]), SCALE_BUDGET,
                            "max ||grad|| sqrt(n); " + _fmt(per_n))


def check_nw_grad(seed):
    gen, est, loss = GaussianSine(), StabilizedNW(**NW_CHECK), Loss("absolute")

    def value(X, Y, zx, grad):
        n = X.shape[0]
        norm = math.sqrt(float(np.sum(X * X) + np.sum(Y * Y)))
        return float(np.linalg.norm(grad)) / (1.0 / math.sqrt(n) + norm / n)

    per_n = [(n, float(np.max(_probe_norms(est, loss, gen, n, seed, "nw-grad", value=value))))
             for n in N_GRID]
    return ClaimCheck.judge("nw-grad", _scale_ratio([v for _, v in per_n]), SCALE_BUDGET,
                            "max ||grad|| / (1/sqrt(n) + ||D||/n); " + _fmt(per_n))


def check_nw_delta2(seed):
    gen, est, loss = GaussianSine(), StabilizedNW(**NW_CHECK), Loss("absolute")
    per_n = []
    for n in N_GRID:
        fit = fit_envelope(est, loss, gen, n, PROBES, derive_seed(seed, n, "nw-d2"),
                           response_spread=NW_SPREAD)
        per_n.append((n, fit.delta2_hat * n))
    return ClaimCheck.judge("nw-delta2", _scale_ratio([v for _, v in per_n]), SCALE_BUDGET,
                            "fitted delta2 n; " + _fmt(per_n))


def check_truncation(seed, q):
    gen = GaussianSine()
    b = TRUNC_LEVEL
    per_n = []
    for n in N_GRID:
        top = 0.0
        for rep in range(PROBES):
            D = Dataset(*gen.draw(substream(seed, n, rep, f"trunc-{q}"), n))
            grad = truncated_power_gradient(D, q, b)
            top = max(top, float(np.linalg.norm(grad)) * math.sqrt(n) / b**q)
        per_n.append((n, top))
    dims = 2
    return ClaimCheck.judge(f"trunc-bq{q}", max(v for _, v in per_n), dims ** (q / 2) + EXACT_SLACK,
                            "max ||grad f(D_b)|| sqrt(n) / b^q; " + _fmt(per_n))


CHECKS = {
    "kde-delta1": check_kde_delta1,
    "kde-delta3": check_kde_delta3,
    "mean-delta1": check_mean_delta1,
    "mean-delta3": check_mean_delta3,
    "nw-delta2": check_nw_delta2,
    "nw-grad": check_nw_grad,
    "ols-Keps-grad": check_ols_keps,
    "ols-stab-beta": check_stab_beta,
    "ols-stab-grad": check_stab_grad,
    "trunc-bq1": lambda seed: check_truncation(seed, 1),
    "trunc-bq2": lambda seed: check_truncation(seed, 2),
}


def verify_all(seed: int = 20240229) -> list:
    """Run every claim check; results are ordered by claim id."""
    return [CHECKS[cid](seed) for cid in sorted(CHECKS)]


def format_checks(checks) -> str:
    lines = ["claim_id,status,measured,budget"]
    lines += [f"{c.claim_id},{c.status},{c.measured!r},{c.budget!r}" for c in checks]
    return "\n".join(lines)
