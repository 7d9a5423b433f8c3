"""Closed-form tail bounds for the LOO error and the restriction-set estimates they need."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binomtest

from .core import (
    ConfigError,
    Dataset,
    DataGenerator,
    Estimator,
    Loss,
    NondifferentiableError,
    Observation,
    canonical,
    query_losses,
    substream,
)
from .loo import loo_fast
from .stability import envelope_from_probes, loss_gradient

# universal constant of the restricted sub-Gaussian inequality, 3 * 2^12 * e^2
BNT_CONSTANT = 3.0 * 2.0**12 * math.e**2


class RestrictionTooSmallError(RuntimeError):
    """No sampled dataset landed in the restriction set."""


@dataclass(frozen=True)
class BoundSpec:
    sigma2_mu: float
    second_moment: float
    n: int
    growth: str = "linear"
    lipschitz_const: float | None = None
    c_l: float = 0.0
    c_q: float | None = None

    def __post_init__(self):
        if not self.sigma2_mu > 0:
            raise ConfigError("sigma2_mu must be positive")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.growth == "linear":
            if self.lipschitz_const is None or not self.lipschitz_const > 0:
                raise ConfigError("linear growth needs lipschitz_const > 0")
        elif self.growth == "quadratic":
            if self.c_l < 0 or self.c_q is None or not self.c_q > 0:
                raise ConfigError("quadratic growth needs c_l >= 0 and c_q > 0")
        else:
            raise ConfigError(f"unknown growth class {self.growth!r}")


@dataclass(frozen=True)
class TailBound:
    value: float
    components: dict = field(default_factory=dict)
    valid: bool = True

    @classmethod
    def total(cls, components: dict, valid: bool = True) -> "TailBound":
        if not valid:
            return cls(1.0, components, False)
        return cls(min(1.0, float(sum(components.values()))), components, True)

    def doubled(self) -> "TailBound":
        """Two-sided version: every component doubled, total clipped again."""
        comps = {k: 2.0 * v for k, v in self.components.items()}
        return TailBound.total(comps, self.valid)


# ---------------------------------------------------------------- rate functions


def _gradient_rate(C1, second_moment, n, t, d1, d2):
    if t <= 0:
        return 1.0
    if d1 == 0 and d2 == 0:
        return 0.0
    var = d1 * d1 + d2 * d2 * n * (second_moment + 16.0 * C1)
    if var == 0.0:
        # rates so small that their squares underflow
        return 0.0
    gauss = math.exp(-t * t / (8.0 * C1 * var))
    expo = math.exp(-t / (8.0 * C1 * d2)) if d2 > 0 else 0.0
    return max(gauss, expo)


def theta1(spec: BoundSpec, t: float, delta1: float, delta2: float) -> float:
    """Fold-wise fluctuation rate at one query point."""
    if delta1 < 0 or delta2 < 0:
        raise ValueError("stability rates must be nonnegative")
    return _gradient_rate(spec.sigma2_mu, spec.second_moment, spec.n, t, delta1, delta2)


def theta3(spec: BoundSpec, t: float, e_delta1: float, e_delta2: float) -> float:
    """Deletion-bias and generalization rate; arguments are expected rates over z."""
    return theta1(spec, t, e_delta1, e_delta2)


def theta2(spec: BoundSpec, t: float) -> float:
    """Concentration of the expected loss evaluated at the held-out points."""
    if t <= 0:
        return 1.0
    C1, n = spec.sigma2_mu, spec.n
    if spec.growth == "linear":
        return math.exp(-n * t * t / (8.0 * C1 * spec.lipschitz_const**2))
    var = spec.c_l**2 + spec.c_q**2 * (spec.second_moment + 16.0 * C1)
    return max(math.exp(-n * t * t / (8.0 * C1 * var)), math.exp(-n * t / (8.0 * C1 * spec.c_q)))


def quadconc_bound(spec: BoundSpec, t: float, delta1: float, delta2: float) -> float:
    """Tail of a functional whose gradient is at most ``delta1 + delta2 ||D||``."""
    if t <= 0:
        return 1.0
    if delta1 == 0 and delta2 == 0:
        return 0.0
    C1, E, n = spec.sigma2_mu, spec.second_moment, spec.n
    spread = delta1**2 + delta2**2 * n * (E + 16.0 * C1)
    if spread == 0.0:
        return 0.0
    a = math.exp(-(t**2) / (8.0 * C1 * spread))
    b = math.exp(-t / (8.0 * C1 * delta2)) if delta2 > 0 else 0.0
    return a if a >= b else b


def crossover_point(spec: BoundSpec, delta1: float, delta2: float) -> float:
    """``t`` at which the two branches of the gradient rate have equal exponents."""
    return delta1**2 / delta2 + delta2 * spec.n * (spec.second_moment + 16.0 * spec.sigma2_mu)


# ---------------------------------------------------------------- tail bounds


def _z_list(z_samples) -> list:
    zs = list(z_samples)
    if not zs:
        raise ValueError("z_samples must not be empty")
    return zs


def bound_simplified(spec: BoundSpec, eps: float, delta1_fn: Callable, delta3: float,
                     z_samples: Sequence) -> TailBound:
    """Lipschitz-case bound (``delta2 = 0``), evaluated as the special case of the main bound.

    All three terms use ``eps / 3`` and the third uses ``E[delta1]^2``, which is
    what the main bound reduces to when ``delta2 = 0``.
    """
    if spec.growth != "linear":
        raise ConfigError("the Lipschitz-case bound needs linear growth")
    zs = _z_list(z_samples)
    n, C1 = spec.n, spec.sigma2_mu
    d1 = np.array([delta1_fn(n, z) for z in zs], dtype=np.float64)
    t = eps / 3.0
    valid = eps > 3.0 * delta3
    first = n * float(np.mean([_gradient_rate(C1, spec.second_moment, n, t, v, 0.0) for v in d1]))
    comps = {
        "n_theta1": first,
        "theta2": theta2(spec, t),
        "theta3": _gradient_rate(C1, spec.second_moment, n, t - delta3, float(d1.mean()), 0.0),
    }
    return TailBound.total(comps, valid)


def bound_main(spec: BoundSpec, eps: float, profile, z_samples: Sequence) -> TailBound:
    """``n E[theta1(eps/3, Z)] + theta2(eps/3) + theta3(eps/3 - delta3)``."""
    zs = _z_list(z_samples)
    n = spec.n
    d1 = np.array([profile.delta1(n, z) for z in zs], dtype=np.float64)
    d2 = np.array([profile.delta2(n, z) for z in zs], dtype=np.float64)
    d3 = float(profile.delta3(n))
    t = eps / 3.0
    comps = {
        "n_theta1": n * float(np.mean([theta1(spec, t, a, b) for a, b in zip(d1, d2)])),
        "theta2": theta2(spec, t),
        "theta3": theta3(spec, t - d3, float(d1.mean()), float(d2.mean())),
    }
    return TailBound.total(comps, eps > 3.0 * d3)


def subexp_mean_bound(lam: float, n: int, eps: float) -> float:
    """Tail of a sample mean of sub-exponential variables with parameter ``lam``."""
    if not lam > 0 or not eps > 0:
        raise ValueError("lambda and eps must be positive")
    return max(math.exp(-eps * eps * n / (2.0 * lam * lam)), math.exp(-eps * n / (2.0 * lam)))


def restricted_sg_constant(sigma_sg2: float, mu_A: float) -> float:
    """Sub-Gaussian constant of the law restricted to a set of mass ``mu_A``."""
    if not 0.0 < mu_A <= 1.0:
        raise ValueError(f"mu_A must lie in (0, 1], got {mu_A}")
    return BNT_CONSTANT * math.log(math.e / mu_A) * sigma_sg2


# ---------------------------------------------------------------- restriction set


def _centered_moments(D: Dataset):
    X = D.X - D.X.mean(axis=0)
    Y = D.Y - D.Y.mean(axis=0)
    return float(np.sum(X * X)) / D.n, float(np.sum(Y * Y)) / D.n


def k_epsilon_membership(D: Dataset, eps_K: float, var_x: float = 1.0, var_y: float = 1.0) -> bool:
    """Both centered second moments within ``eps_K`` (relative) of their reference values."""
    mx, my = _centered_moments(D)
    return abs(mx / var_x - 1.0) < eps_K and abs(my / var_y - 1.0) < eps_K


def _slice_fraction(zx, zy, sx, sxx, sy, syy, n, eps_K, var_x, var_y):
    """Membership of ``(z, D')`` for every z (rows) and tuple D' (columns) via sums."""
    tx = (sx[None, :] + zx[:, None])
    ty = (sy[None, :] + zy[:, None])
    mx = (sxx[None, :] + zx[:, None] ** 2 - tx * tx / n) / n
    my = (syy[None, :] + zy[:, None] ** 2 - ty * ty / n) / n
    inside = (np.abs(mx / var_x - 1.0) < eps_K) & (np.abs(my / var_y - 1.0) < eps_K)
    return inside.mean(axis=1)


@dataclass(frozen=True)
class RestrictionSet:
    epsilon_K: float
    var_x: float
    var_y: float
    reps: int
    in_K: int
    mu_K_lower: float
    gamma_K: float
    delta3K: float
    delta1K_const: float
    slice_prob: float
    n: int
    c_bnt: float = BNT_CONSTANT

    @property
    def membership_freq(self) -> float:
        return self.in_K / self.reps

    def member(self, D: Dataset) -> bool:
        return k_epsilon_membership(D, self.epsilon_K, self.var_x, self.var_y)

    def delta1K(self, n, z=None) -> float:
        return self.delta1K_const


def estimate_restriction_set(est: Estimator, loss: Loss, gen: DataGenerator, n: int,
                             eps_K: float, reps: int, seed, *, var_x: float = 1.0,
                             var_y: float = 1.0, oracle_M: int = 2000, probes: int = 200,
                             slice_tuples: int = 100, permute_samples: bool = False) -> RestrictionSet:
    """Monte Carlo estimates of every restriction-set quantity.

    Each sampled dataset is replaced by its sorted representative before use, so
    the estimates do not depend on the order in which observations were drawn.
    """
    if reps < 500:
        raise ValueError("estimate_restriction_set needs at least 500 reps")
    in_K = 0
    risk_gap, loo_gap = [], []
    for rep in range(reps):
        rng = substream(seed, n, rep, "restrict")
        D = gen.sample(rng, n)
        if permute_samples:
            D = D.permuted(substream(seed, n, rep, "shuffle").permutation(n))
        D = canonical(D)
        if not k_epsilon_membership(D, eps_K, var_x, var_y):
            continue
        in_K += 1
        # fresh point from the unrestricted law, and points of an in-K copy D'
        QX, QY = gen.draw(rng, oracle_M)
        fresh = float(np.mean(query_losses(est, loss, D.X, D.Y, QX, QY)))
        for _ in range(1000):
            Dp = gen.sample(rng, n)
            if k_epsilon_membership(Dp, eps_K, var_x, var_y):
                break
        else:
            raise RestrictionTooSmallError("could not draw an in-K copy of the dataset")
        Dp = canonical(Dp)
        copy_pts = float(np.mean(query_losses(est, loss, D.X, D.Y, Dp.X, Dp.Y)))
        loo = loo_fast(est, loss, D).loo_estimate
        risk_gap.append(fresh - copy_pts)
        loo_gap.append(copy_pts - loo)
    if in_K == 0:
        raise RestrictionTooSmallError(f"no dataset out of {reps} landed in K (eps_K={eps_K})")
    ci = binomtest(in_K, reps).proportion_ci(confidence_level=0.95, method="wilson")
    mu_lower = max(float(ci.low), 1.0 / (reps + 1))

    # gradient envelope on in-K probes
    g, r = [], []
    attempt = 0
    while len(g) < probes and attempt < 10 * probes:
        prng = substream(seed, n, attempt, "restrict-probe")
        attempt += 1
        D = gen.sample(prng, n)
        if not k_epsilon_membership(D, eps_K, var_x, var_y):
            continue
        zx, zy = gen.draw(prng, 1)
        try:
            grad = loss_gradient(est, loss, D.X, D.Y, (zx, zy))
        except NondifferentiableError:
            continue
        g.append(float(np.linalg.norm(grad)))
        r.append(D.norm())
    g, r = np.array(g), np.array(r)
    fit = envelope_from_probes(g, r, n)
    delta1K = float(np.max(fit.envelope(r)))

    # slice probability over in-K datasets; all n held points share the tuples
    slice_hits, slice_total = 0.0, 0
    for rep in range(reps):
        rng = substream(seed, n, rep, "restrict")
        D = gen.sample(rng, n)
        if permute_samples:
            D = D.permuted(substream(seed, n, rep, "shuffle").permutation(n))
        D = canonical(D)
        if not k_epsilon_membership(D, eps_K, var_x, var_y):
            continue
        srng = substream(seed, n, rep, "slice")
        TX, TY = gen.draw(srng, slice_tuples * (n - 1))
        TX = TX[:, 0].reshape(slice_tuples, n - 1)
        TY = TY[:, 0].reshape(slice_tuples, n - 1)
        frac = _slice_fraction(D.X[:, 0], D.Y[:, 0], TX.sum(1), (TX * TX).sum(1),
                               TY.sum(1), (TY * TY).sum(1), n, eps_K, var_x, var_y)
        slice_hits += float(np.mean(frac < 0.5))
        slice_total += 1
    return RestrictionSet(
        epsilon_K=eps_K, var_x=var_x, var_y=var_y, reps=reps, in_K=in_K,
        mu_K_lower=mu_lower,
        gamma_K=abs(float(np.mean(risk_gap))),
        delta3K=abs(float(np.mean(loo_gap))),
        delta1K_const=delta1K,
        slice_prob=slice_hits / slice_total,
        n=n,
    )


def bound_data_dependent(spec: BoundSpec, eps: float, rset, z_samples: Sequence,
                         slice_prob: float | None = None) -> TailBound:
    """Conditioned bound on a restriction set ``K``; ``rset`` supplies the K quantities."""
    zs = _z_list(z_samples)
    if slice_prob is None:
        slice_prob = rset.slice_prob
    if not rset.mu_K_lower > 0:
        raise ValueError("mu_K_lower must be positive")
    n = spec.n
    c = BNT_CONSTANT
    C1 = c * math.log(math.e / rset.mu_K_lower) * spec.sigma2_mu
    C2 = 2.0 * c * spec.sigma2_mu
    d1 = np.array([rset.delta1K(n, z) for z in zs], dtype=np.float64)
    t = eps / 6.0
    e_d1 = float(d1.mean())

    def theta1_hat(d):
        return 0.0 if d == 0 else math.exp(-t * t / (16.0 * C2 * d * d))

    def theta3_K(s):
        if s <= 0:
            return 1.0
        return 0.0 if e_d1 == 0 else math.exp(-s * s / (8.0 * C1 * e_d1 * e_d1))

    comps = {
        "n_theta1_hat": n * float(np.mean([theta1_hat(d) for d in d1])),
        "theta2_K": math.exp(-t * t * n / (8.0 * C1)),
        "theta3_K_delta3": theta3_K(t - rset.delta3K),
        "theta3_K_gamma": theta3_K(t - rset.gamma_K),
        "outside_K": 1.0 - rset.mu_K_lower,
        "slice": float(slice_prob),
    }
    valid = eps > 6.0 * min(rset.delta3K, rset.gamma_K)
    return TailBound.total(comps, valid)


def as_observations(ZX: np.ndarray, ZY: np.ndarray) -> list[Observation]:
    return [Observation(ZX[i], ZY[i]) for i in range(ZX.shape[0])]
