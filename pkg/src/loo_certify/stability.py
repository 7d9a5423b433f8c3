"""Data gradients of fitted losses and the stability profile estimated from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    Dataset,
    DataGenerator,
    Estimator,
    Loss,
    NondifferentiableError,
    Observation,
    query_losses,
    substream,
)
from .loo import loo_fast, risk_oracle

SLOPE_GRID = 256
MAX_OVERSAMPLE = 10


class InsufficientProbesError(RuntimeError):
    """Every probe landed on a kink of the loss."""


@dataclass(frozen=True)
class DataGradient:
    per_coordinate: np.ndarray
    norm: float

    @classmethod
    def of(cls, g) -> "DataGradient":
        g = np.asarray(g, dtype=np.float64).ravel()
        g.setflags(write=False)
        return cls(g, float(np.linalg.norm(g)))


@dataclass(frozen=True)
class EnvelopeFit:
    delta1_hat: float
    delta2_hat: float
    n: int
    violations: int
    probes: int

    def envelope(self, r):
        return self.delta1_hat + self.delta2_hat * np.asarray(r)


@dataclass(frozen=True)
class StabilityProfile:
    """``delta1(n, z)``, ``delta2(n, z)`` and ``delta3(n)`` as callables."""

    delta1: Callable[[int, Observation | None], float]
    delta2: Callable[[int, Observation | None], float]
    delta3: Callable[[int], float]
    provenance: str = "analytic"

    @classmethod
    def constant(cls, delta1: float, delta2: float, delta3: float, provenance="fitted"):
        return cls(lambda n, z=None: delta1, lambda n, z=None: delta2,
                   lambda n: delta3, provenance)


def _obs_blocks(z, k, m):
    if isinstance(z, Observation):
        return z.x.reshape(1, -1), z.y.reshape(1, -1)
    zx, zy = z
    return (np.asarray(zx, dtype=np.float64).reshape(1, k),
            np.asarray(zy, dtype=np.float64).reshape(1, m))


def loss_value(est: Estimator, loss: Loss, X, Y, z) -> float:
    QX, QY = _obs_blocks(z, X.shape[1], Y.shape[1])
    return float(query_losses(est, loss, X, Y, QX, QY)[0])


def loss_gradient(est: Estimator, loss: Loss, X, Y, z) -> np.ndarray:
    """Gradient of ``(X, Y) -> L(T_{(X,Y)}(z))`` as an (n, k + m) array.

    Works on raw blocks with any ``n >= 1``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    est.check(X, Y)
    QX, QY = _obs_blocks(z, X.shape[1], Y.shape[1])
    inputs, targets = est.split(QX, QY)
    pred = est.predict_arrays(X, Y, inputs)[0]
    v = loss.derivative(pred, targets[0] if loss.needs_target else None)
    gx, gy = est.vjp(X, Y, inputs[0], v)
    return np.concatenate([gx, gy], axis=1)


def grad_analytic(est: Estimator, loss: Loss, D: Dataset, z) -> DataGradient:
    """Closed-form data gradient, observation-major (x block then y block)."""
    return DataGradient.of(loss_gradient(est, loss, D.X, D.Y, z))


def grad_fd(est: Estimator, loss: Loss, D: Dataset, z, step: float = 1e-5) -> DataGradient:
    """Central finite differences, one data coordinate at a time."""
    if not 1e-8 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-8, 1e-3], got {step}")
    k = D.k
    flat = np.concatenate([D.X, D.Y], axis=1)
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        for j in range(flat.shape[1]):
            vals = []
            for sgn in (1.0, -1.0):
                P = flat.copy()
                P[i, j] += sgn * step
                vals.append(loss_value(est, loss, P[:, :k], P[:, k:], z))
            out[i, j] = (vals[0] - vals[1]) / (2.0 * step)
    return DataGradient.of(out)


def gradient_probes(est, loss, gen: DataGenerator, n: int, probes: int, seed,
                    accept: Callable[[Dataset], bool] | None = None,
                    response_spread: float = 1.0):
    """Gradient norms ``g_j`` and data norms ``r_j`` over i.i.d. ``(D, z)`` probes.

    Probes at a kink of the loss are dropped and redrawn, up to ``MAX_OVERSAMPLE``
    times the requested count. ``accept`` optionally restricts ``D`` (rejection).
    With ``response_spread > 1`` each probe multiplies the response block of
    ``D`` and ``z`` by a log-uniform factor in ``[1, response_spread]``, so the
    probes cover a range of ``||D||`` at fixed ``n``.
    """
    g, r = [], []
    attempt = 0
    limit = MAX_OVERSAMPLE * probes
    log_spread = math.log(response_spread)
    while len(g) < probes and attempt < limit:
        rng = substream(seed, n, attempt, "probe")
        attempt += 1
        X, Y = gen.draw(rng, n)
        zx, zy = gen.draw(rng, 1)
        if log_spread > 0:
            scale = math.exp(rng.uniform(0.0, log_spread))
            Y, zy = Y * scale, zy * scale
        D = Dataset(X, Y)
        if accept is not None and not accept(D):
            continue
        try:
            grad = loss_gradient(est, loss, D.X, D.Y, (zx, zy))
        except NondifferentiableError:
            continue
        g.append(float(np.linalg.norm(grad)))
        r.append(D.norm())
    return np.array(g), np.array(r), attempt


def envelope_from_probes(g: np.ndarray, r: np.ndarray, n: int) -> EnvelopeFit:
    """Minimal hard envelope ``delta1 + delta2 r`` over a grid of candidate slopes."""
    if g.size == 0:
        raise InsufficientProbesError("no smooth probes")
    top = float(np.max(g) / np.min(r)) if np.min(r) > 0 else 0.0
    slopes = np.linspace(0.0, top, SLOPE_GRID)
    med = float(np.median(r))
    best = None
    for s in slopes:
        d1 = float(np.max(np.maximum(g - s * r, 0.0)))
        score = d1 + s * med
        if best is None or score < best[0]:
            best = (score, d1, float(s))
    _, d1, d2 = best
    # envelope is built from the same probes, so violations is zero up to rounding
    violations = int(np.sum(g > d1 + d2 * r + 1e-12 * np.maximum(g, 1.0)))
    return EnvelopeFit(d1, d2, n, violations, int(g.size))


def fit_envelope(est: Estimator, loss: Loss, gen: DataGenerator, n: int, probes: int,
                 seed, accept=None, response_spread: float = 1.0) -> EnvelopeFit:
    if probes < 100:
        raise ValueError("fit_envelope needs at least 100 probes")
    g, r, _ = gradient_probes(est, loss, gen, n, probes, seed, accept, response_spread)
    if g.size == 0:
        raise InsufficientProbesError(f"all probes hit a kink of the {loss.kind} loss")
    return envelope_from_probes(g, r, n)


def envelope_violation_rate(fit: EnvelopeFit, g, r) -> float:
    g, r = np.asarray(g), np.asarray(r)
    return float(np.mean(g > fit.envelope(r)))


def estimate_delta3(est: Estimator, loss: Loss, gen: DataGenerator, n: int, reps: int,
                    M: int, seed) -> tuple[float, float]:
    """``|E f_1(Z_1) - E f_D(Z)|`` and its standard error.

    Within a rep both terms share the dataset. The deleted-fit term is the
    average over all folds, which has the same expectation as fold 1 by
    exchangeability and lower variance. The full-fit term averages ``M``
    fresh draws.
    """
    if reps < 100:
        raise ValueError("estimate_delta3 needs at least 100 reps")
    diffs = np.empty(reps)
    for rep in range(reps):
        rng = substream(seed, n, rep, "delta3")
        D = gen.sample(rng, n)
        loo = loo_fast(est, loss, D).loo_estimate
        full = risk_oracle(est, loss, D, gen, M, rng).risk
        diffs[rep] = loo - full
    return float(abs(diffs.mean())), float(diffs.std(ddof=1) / math.sqrt(reps))


def truncate_dataset(D: Dataset, b: float) -> Dataset:
    """Clamp every coordinate to ``[-b, b]``."""
    if not b > 0:
        raise ValueError("truncation level must be positive")
    return Dataset(np.clip(D.X, -b, b), np.clip(D.Y, -b, b))


def power_functional(D: Dataset, q: int) -> float:
    """``n^{-(q+1)/2} ||D||^{q+1} / (q+1)``; its gradient norm is ``n^{-(q+1)/2} ||D||^q``."""
    return D.n ** (-(q + 1) / 2) * D.norm() ** (q + 1) / (q + 1)


def truncated_power_gradient(D: Dataset, q: int, b: float) -> np.ndarray:
    """Gradient of ``D -> power_functional(g_b(D), q)`` (zero where a coordinate is clamped)."""
    flat = np.concatenate([D.X, D.Y], axis=1)
    clamped = np.clip(flat, -b, b)
    size = math.sqrt(float(np.sum(clamped * clamped)))
    scale = D.n ** (-(q + 1) / 2) * size ** (q - 1)
    return np.where(np.abs(flat) < b, scale * clamped, 0.0)


def no_concentration_gradient_energy(gen: DataGenerator, n: int, reps: int, seed) -> float:
    """``E ||grad F||^2`` for ``F(D) = ||D||^2 / (2 sqrt n)``.

    Here ``delta1 = 0`` and ``delta2 = 1/sqrt(n)`` exactly, and the gradient
    energy stays at ``E||Z||^2`` instead of vanishing.
    """
    total = 0.0
    for rep in range(reps):
        D = gen.sample(substream(seed, n, rep, "energy"), n)
        total += D.norm() ** 2 / n
    return total / reps
