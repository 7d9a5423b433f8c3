"""Leave-one-out risk estimates and the Monte Carlo conditional-risk oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    DataGenerator,
    DeletedView,
    Estimator,
    FoldError,
    Loss,
    query_losses,
)


@dataclass(frozen=True)
class LooResult:
    loo_estimate: float
    per_fold_losses: np.ndarray
    method: str


@dataclass(frozen=True)
class RiskOracleResult:
    risk: float
    mc_samples: int
    std_error: float


def _result(losses, method):
    losses = np.asarray(losses, dtype=np.float64)
    losses.setflags(write=False)
    return LooResult(float(np.mean(losses)), losses, method)


def fold_loss(est: Estimator, loss: Loss, D: Dataset, i: int) -> float:
    """Loss of the fit on ``D_(-i)`` at the held-out observation ``z_i``."""
    view = DeletedView(D, i)
    X, Y = view.arrays()
    try:
        return float(query_losses(est, loss, X, Y, D.X[i:i + 1], D.Y[i:i + 1])[0])
    except Exception as exc:  # noqa: BLE001 - re-raised with the fold attached
        raise FoldError(i, exc) from exc


def loo_naive(est: Estimator, loss: Loss, D: Dataset) -> LooResult:
    """Refit on every deleted dataset."""
    return _result([fold_loss(est, loss, D, i) for i in range(D.n)], "naive")


def loo_fast(est: Estimator, loss: Loss, D: Dataset) -> LooResult:
    """Per-fold losses from sufficient-statistic downdates."""
    X, Y = D.X, D.Y
    try:
        est.check(X, Y)
        pred = est.loo_predictions(X, Y)
    except FoldError:
        raise
    except Exception:
        # locate the first failing fold through the refit path
        for i in range(D.n):
            fold_loss(est, loss, D, i)
        raise
    _, targets = est.split(X, Y)
    return _result(loss.values(pred, targets if loss.needs_target else None), "fast")


def risk_oracle(
    est: Estimator,
    loss: Loss,
    D: Dataset,
    gen: DataGenerator,
    M: int,
    seed,
    batch: int = 1 << 16,
) -> RiskOracleResult:
    """Monte Carlo estimate of ``E[L(T_D(X), Y) | D]`` from ``M`` fresh draws.

    ``seed`` is an int or a ``numpy.random.Generator``. Draws are made in
    fixed-size batches so memory stays bounded for large ``M``.
    """
    if M < 2:
        raise ValueError("risk oracle needs M >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X, Y = D.X, D.Y
    est.check(X, Y)
    parts = []
    left = int(M)
    while left > 0:
        size = min(batch, left)
        QX, QY = gen.draw(rng, size)
        parts.append(query_losses(est, loss, X, Y, QX, QY))
        left -= size
    vals = np.concatenate(parts)
    return RiskOracleResult(float(vals.mean()), int(M), float(vals.std(ddof=1) / np.sqrt(M)))
