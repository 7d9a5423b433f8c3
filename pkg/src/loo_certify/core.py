"""Datasets, data generators, losses and the estimator library.

Every estimator is a symmetric statistic of the data. Datasets are stored as
two read-only blocks ``X`` (n, k) and ``Y`` (n, m); ``m = 0`` is allowed for
unsupervised samples. Observation-level gradients use the observation-major
layout ``x_1, y_1, x_2, y_2, ...``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import _kernels

SQRT_2PI = math.sqrt(2.0 * math.pi)
# sup_u |u| phi(u) is attained at u = 1
KERNEL_DERIV_SUP = math.exp(-0.5) / SQRT_2PI
KINK_TOL = 1e-12
# n * M above which kernel predictions switch to the boxed Gaussian transform
_DIRECT_WORK = 250_000


class ConfigError(ValueError):
    """Invalid generator, estimator or experiment configuration."""


class DegenerateDesignError(ValueError):
    """The design has zero x-variance, so the OLS slope is undefined."""


class NondifferentiableError(ValueError):
    """The loss is evaluated at its kink, where no gradient exists."""


class FoldError(RuntimeError):
    """A leave-one-out fold failed to fit."""

    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause


def substream(base_seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(base_seed, *keys)``.

    String keys are mapped through CRC-32 and everything is mixed by numpy's
    ``SeedSequence`` hash, so the stream depends only on the key tuple.
    """
    words = [int(base_seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode()))
        else:
            words.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def derive_seed(base_seed: int, *keys) -> int:
    """64-bit integer seed for ``(base_seed, *keys)``, for APIs that take a seed."""
    return int(substream(base_seed, *keys).bit_generator.seed_seq.generate_state(1, np.uint64)[0])


def _block(a, n=None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if n is None or a.shape[0] == n else a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"expected a 1-d or 2-d block, got shape {a.shape}")
    return a


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=np.float64)).ravel()
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64)).ravel()
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("observation coordinates must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


class Dataset:
    """An ordered sample of ``n >= 2`` observations ``z_i = (x_i, y_i)``."""

    __slots__ = ("X", "Y")

    def __init__(self, X, Y=None):
        X = np.array(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        if Y is None:
            Y = np.empty((n, 0))
        Y = np.array(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if X.ndim != 2 or Y.ndim != 2 or Y.shape[0] != n:
            raise ValueError(f"incompatible blocks X{X.shape} and Y{Y.shape}")
        if n < 2:
            raise ValueError("a dataset needs at least two observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset coordinates must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        self.X = X
        self.Y = Y

    @classmethod
    def from_observations(cls, observations) -> "Dataset":
        obs = list(observations)
        return cls(np.vstack([o.x for o in obs]), np.vstack([o.y for o in obs]))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Observation:
        return Observation(self.X[i], self.Y[i])

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield self[i]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X, self.Y

    def flat(self) -> np.ndarray:
        """Coordinates in observation-major order (x block, then y block)."""
        return np.concatenate([self.X, self.Y], axis=1).ravel()

    def with_flat(self, v) -> "Dataset":
        v = np.asarray(v, dtype=np.float64).reshape(self.n, self.k + self.m)
        return Dataset(v[:, : self.k], v[:, self.k:])

    def permuted(self, perm) -> "Dataset":
        perm = np.asarray(perm)
        return Dataset(self.X[perm], self.Y[perm])

    def norm(self) -> float:
        return dataset_norm(self)

    def without(self, i: int) -> "DeletedView":
        return DeletedView(self, i)


class DeletedView:
    """The dataset ``D_(-i)``: a reference to the parent plus the omitted index."""

    __slots__ = ("parent", "omitted_index")

    def __init__(self, parent: Dataset, omitted_index: int):
        if not 0 <= omitted_index < parent.n:
            raise IndexError(f"fold index {omitted_index} out of range for n={parent.n}")
        self.parent = parent
        self.omitted_index = omitted_index

    @property
    def n(self) -> int:
        return self.parent.n - 1

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for j, obs in enumerate(self.parent):
            if j != self.omitted_index:
                yield obs

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        i = self.omitted_index
        return (np.delete(self.parent.X, i, axis=0), np.delete(self.parent.Y, i, axis=0))

    def materialize(self) -> Dataset:
        return Dataset(*self.arrays())


def dataset_norm(D: Dataset) -> float:
    """Euclidean norm of all ``(k + m) n`` coordinates."""
    return float(math.sqrt(np.sum(D.X * D.X) + np.sum(D.Y * D.Y)))


def canonical(D: Dataset) -> Dataset:
    """Lexicographically sorted copy; a fixed representative of the permutation class."""
    keys = np.concatenate([D.X, D.Y], axis=1)
    order = np.lexsort(keys.T[::-1])
    return D.permuted(order)


# ---------------------------------------------------------------- generators


class DataGenerator:
    """A law for i.i.d. observations with its declared distribution constants.

    ``sigma2_mu`` is the log-Sobolev constant of the joint law of one
    observation and ``second_moment`` is ``E ||Z_i||^2`` (both blocks).
    """

    name = "custom"
    sigma2_mu: float
    second_moment: float

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> Dataset:
        return Dataset(*self.draw(rng, n))

    def abs_moment(self, coord: str = "x") -> float:
        """``E ||Z[coord]||``, by quadrature or a fixed-seed 10^6 draw."""
        X, Y = self.draw(np.random.default_rng(20240229), 1_000_000)
        block = X if coord == "x" else Y
        return float(np.mean(np.linalg.norm(block, axis=1)))

    def params(self) -> dict:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{self.name}({args})"


@dataclass(frozen=True, repr=False)
class UniformSine(DataGenerator):
    """``X ~ Uniform(0, 1)``, ``Y = sin(freq X)``."""

    freq: float = 10.0
    sigma2_mu: float = 1.0
    name = "uniform_sine"

    def __post_init__(self):
        if not self.freq > 0 or not self.sigma2_mu > 0:
            raise ConfigError("uniform_sine needs freq > 0 and sigma2_mu > 0")

    @property
    def second_moment(self) -> float:
        a = self.freq
        return 1.0 / 3.0 + 0.5 - math.sin(2.0 * a) / (4.0 * a)

    def draw(self, rng, n):
        x = rng.uniform(0.0, 1.0, size=n)
        return x.reshape(-1, 1), np.sin(self.freq * x).reshape(-1, 1)

    def abs_moment(self, coord="x"):
        if coord == "x":
            return 0.5
        from scipy.integrate import quad

        a = self.freq
        # zeros of sin(a u) on [0, 1] as breakpoints
        pts = [j * math.pi / a for j in range(1, int(a / math.pi) + 1)]
        return quad(lambda u: abs(math.sin(a * u)), 0.0, 1.0, points=pts or None, limit=200)[0]

    def params(self):
        return {"freq": self.freq, "sigma2_mu": self.sigma2_mu}


@dataclass(frozen=True, repr=False)
class GaussianLinear(DataGenerator):
    """``X ~ N(0, 1)``, ``Y | X ~ N(intercept + slope X, noise^2)``.

    The joint law is ``N(0, Sigma)``; its log-Sobolev constant is the largest
    eigenvalue of ``Sigma``.
    """

    slope: float = 5.0
    noise: float = 1.0
    intercept: float = 0.0
    name = "gaussian_linear"

    def __post_init__(self):
        if not self.noise > 0:
            raise ConfigError(f"gaussian_linear noise must be positive, got {self.noise}")

    @property
    def sigma2_mu(self) -> float:
        cov = np.array([[1.0, self.slope], [self.slope, self.slope**2 + self.noise**2]])
        return float(np.linalg.eigvalsh(cov)[-1])

    @property
    def second_moment(self) -> float:
        return 1.0 + self.slope**2 + self.noise**2 + self.intercept**2

    def draw(self, rng, n):
        x = rng.standard_normal(n)
        y = self.intercept + self.slope * x + self.noise * rng.standard_normal(n)
        return x.reshape(-1, 1), y.reshape(-1, 1)

    def abs_moment(self, coord="x"):
        if coord == "x":
            return math.sqrt(2.0 / math.pi)
        if self.intercept == 0.0:
            return math.sqrt(2.0 / math.pi) * math.hypot(self.slope, self.noise)
        return super().abs_moment(coord)

    def params(self):
        return {"slope": self.slope, "noise": self.noise, "intercept": self.intercept}


@dataclass(frozen=True, repr=False)
class GaussianSine(DataGenerator):
    """``X ~ N(0, 1)``, ``Y | X ~ N(sin(freq X), noise^2)``.

    The default ``sigma2_mu`` is the squared Lipschitz constant of the map
    ``(X, eps) -> (X, sin(freq X) + noise eps)``, an upper bound on the
    log-Sobolev constant of the image of a standard Gaussian.
    """

    freq: float = 10.0
    noise: float = 1.0
    sigma2_override: float | None = None
    name = "gaussian_sine"

    def __post_init__(self):
        if not self.noise > 0:
            raise ConfigError(f"gaussian_sine noise must be positive, got {self.noise}")
        if self.sigma2_override is not None and not self.sigma2_override > 0:
            raise ConfigError("sigma2_mu must be positive")

    @property
    def sigma2_mu(self) -> float:
        if self.sigma2_override is not None:
            return self.sigma2_override
        jac = np.array([[1.0, 0.0], [self.freq, self.noise]])
        return float(np.linalg.norm(jac, 2) ** 2)

    @property
    def second_moment(self) -> float:
        return 1.0 + 0.5 * (1.0 - math.exp(-2.0 * self.freq**2)) + self.noise**2

    def draw(self, rng, n):
        x = rng.standard_normal(n)
        y = np.sin(self.freq * x) + self.noise * rng.standard_normal(n)
        return x.reshape(-1, 1), y.reshape(-1, 1)

    def abs_moment(self, coord="x"):
        if coord == "x":
            return math.sqrt(2.0 / math.pi)
        return super().abs_moment(coord)

    def params(self):
        p = {"freq": self.freq, "noise": self.noise}
        if self.sigma2_override is not None:
            p["sigma2_mu"] = self.sigma2_override
        return p


class CustomGenerator(DataGenerator):
    """User law: ``sampler(rng, n) -> (X, Y)`` plus declared constants."""

    name = "custom"

    def __init__(self, sampler: Callable, sigma2_mu: float, second_moment: float):
        if not sigma2_mu > 0:
            raise ConfigError("sigma2_mu must be positive")
        self.sampler = sampler
        self.sigma2_mu = float(sigma2_mu)
        self.second_moment = float(second_moment)

    def draw(self, rng, n):
        X, Y = self.sampler(rng, n)
        X = np.asarray(X, dtype=np.float64).reshape(n, -1)
        Y = np.asarray(Y, dtype=np.float64).reshape(n, -1) if Y is not None else np.empty((n, 0))
        return X, Y

    def params(self):
        return {"sigma2_mu": self.sigma2_mu, "second_moment": self.second_moment}


GENERATORS = {
    "uniform_sine": UniformSine,
    "gaussian_linear": GaussianLinear,
    "gaussian_sine": GaussianSine,
}


def sample_dataset(gen: DataGenerator, n: int, seed: int) -> Dataset:
    if n < 2:
        raise ValueError("n must be at least 2")
    return gen.sample(np.random.default_rng(seed), n)


# ---------------------------------------------------------------- losses


@dataclass(frozen=True)
class Loss:
    """``absolute``: ||p - t||, ``squared``: ||p - t||^2, ``identity_abs``: ||p||."""

    kind: str

    KINDS = ("absolute", "squared", "identity_abs")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}; expected one of {self.KINDS}")

    @property
    def needs_target(self) -> bool:
        return self.kind != "identity_abs"

    def values(self, pred: np.ndarray, target: np.ndarray | None) -> np.ndarray:
        """Row-wise losses for ``pred`` of shape (M, p)."""
        if self.kind == "identity_abs":
            return np.linalg.norm(pred, axis=1) if pred.shape[1] > 1 else np.abs(pred[:, 0])
        r = pred - target
        if self.kind == "squared":
            return np.sum(r * r, axis=1)
        return np.linalg.norm(r, axis=1) if r.shape[1] > 1 else np.abs(r[:, 0])

    def derivative(self, pred: np.ndarray, target: np.ndarray | None) -> np.ndarray:
        """Gradient of the loss with respect to a single prediction vector."""
        r = pred if self.kind == "identity_abs" else pred - target
        if self.kind == "squared":
            return 2.0 * r
        size = float(np.linalg.norm(r))
        if size < KINK_TOL:
            raise NondifferentiableError(f"{self.kind} loss at its kink (|r| = {size:.3g})")
        return r / size


def loss_eval(loss: Loss, prediction, target=None) -> float:
    p = np.atleast_1d(np.asarray(prediction, dtype=np.float64))
    if loss.needs_target:
        if target is None:
            raise ValueError(f"{loss.kind} loss needs a target")
        t = np.atleast_1d(np.asarray(target, dtype=np.float64))
        if t.shape != p.shape:
            raise ValueError(f"prediction {p.shape} and target {t.shape} differ in dimension")
        return float(loss.values(p[None, :], t[None, :])[0])
    if target is not None:
        raise ValueError("identity_abs loss takes no target")
    return float(loss.values(p[None, :], None)[0])


# ---------------------------------------------------------------- estimators


def _gauss(u):
    return np.exp(-0.5 * u * u) / SQRT_2PI


class Estimator:
    """A statistic ``T_n`` mapping a dataset to a predictor ``x -> T_D(x)``.

    Subclasses implement the closed form on raw arrays; ``n`` is always the
    number of rows actually passed in, so a deleted fit is ``T_{n-1}``.
    """

    kind = ""

    # -- query convention
    def split(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """(inputs, targets) of query observations given as row blocks."""
        return X, Y

    def check(self, X: np.ndarray, Y: np.ndarray) -> None:
        pass

    def predict_arrays(self, X, Y, inputs) -> np.ndarray:
        """Predictions (M, p) at ``inputs`` (M, ...) from data blocks."""
        raise NotImplementedError

    def vjp(self, X, Y, inp, v) -> tuple[np.ndarray, np.ndarray]:
        """``(d/dX, d/dY)`` of ``v . T_D(inp)`` for one query input."""
        raise NotImplementedError

    def loo_predictions(self, X, Y) -> np.ndarray:
        """``T_{D(-i)}(input_i)`` for every fold, by downdating."""
        raise NotImplementedError

    def predict(self, D, x) -> np.ndarray:
        X, Y = D.arrays()
        self.check(X, Y)
        inp = np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :]
        return self.predict_arrays(X, Y, inp)[0]

    def params(self) -> dict:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{self.kind}({args})"


def _coord_block(coord, X, Y):
    return X if coord == "x" else Y


@dataclass(frozen=True, repr=False)
class EmpiricalMean(Estimator):
    """Sample mean of one block; the query target is the same block of ``z``."""

    coord: str = "x"
    kind = "empirical_mean"

    def __post_init__(self):
        if self.coord not in ("x", "y"):
            raise ConfigError("coord must be 'x' or 'y'")

    def split(self, X, Y):
        B = _coord_block(self.coord, X, Y)
        return B, B

    def predict_arrays(self, X, Y, inputs):
        mean = _coord_block(self.coord, X, Y).mean(axis=0)
        return np.broadcast_to(mean, (inputs.shape[0], mean.shape[0])).copy()

    def vjp(self, X, Y, inp, v):
        n = X.shape[0]
        g = np.broadcast_to(np.asarray(v) / n, (n, len(v))).copy()
        z = np.zeros_like(Y if self.coord == "x" else X)
        return (g, z) if self.coord == "x" else (z, g)

    def loo_predictions(self, X, Y):
        B = _coord_block(self.coord, X, Y)
        n = B.shape[0]
        return (B.sum(axis=0) - B) / (n - 1)

    def params(self):
        return {"coord": self.coord}


@dataclass(frozen=True, repr=False)
class KDE(Estimator):
    """Gaussian kernel density estimate of one scalar block, evaluated at that block of ``z``."""

    bandwidth: float
    coord: str = "x"
    kind = "kde"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError("kde bandwidth must be positive")
        if self.coord not in ("x", "y"):
            raise ConfigError("coord must be 'x' or 'y'")

    def check(self, X, Y):
        if _coord_block(self.coord, X, Y).shape[1] != 1:
            raise ValueError("kde needs a one-dimensional sample block")

    def split(self, X, Y):
        return _coord_block(self.coord, X, Y), None

    def predict_arrays(self, X, Y, inputs):
        s = _coord_block(self.coord, X, Y)[:, 0]
        t = np.asarray(inputs, dtype=np.float64).reshape(-1)
        h = self.bandwidth
        n = s.shape[0]
        if n * t.shape[0] <= _DIRECT_WORK:
            sums = _gauss((t[:, None] - s[None, :]) / h).sum(axis=1)
        else:
            sums = _kernels.gauss_sums(s, np.ones((1, n)), t, h)[0] / SQRT_2PI
        return (sums / (n * h))[:, None]

    def vjp(self, X, Y, inp, v):
        s = _coord_block(self.coord, X, Y)[:, 0]
        n, h = s.shape[0], self.bandwidth
        u = (float(inp[0]) - s) / h
        # d/ds_j K_h(t - s_j) = u_j phi(u_j) / h^2
        g = (float(v[0]) * u * _gauss(u) / (n * h * h))[:, None]
        z = np.zeros_like(Y if self.coord == "x" else X)
        return (g, z) if self.coord == "x" else (z, g)

    def loo_predictions(self, X, Y):
        s = _coord_block(self.coord, X, Y)[:, 0]
        n, h = s.shape[0], self.bandwidth
        if n * n <= _DIRECT_WORK:
            K = _gauss((s[:, None] - s[None, :]) / h)
            np.fill_diagonal(K, 0.0)
            sums = K.sum(axis=1)
        else:
            sums = _kernels.gauss_sums(s, np.ones((1, n)), s, h, self_index=np.arange(n))[0] / SQRT_2PI
        return (sums / ((n - 1) * h))[:, None]

    def params(self):
        return {"bandwidth": self.bandwidth, "coord": self.coord}


def _require_simple(X, Y, kind):
    if X.shape[1] != 1 or Y.shape[1] != 1:
        raise ValueError(f"{kind} needs scalar x and y (k = m = 1)")


@dataclass(frozen=True, repr=False)
class OLS(Estimator):
    """Simple least-squares line ``alpha + beta x``."""

    kind = "ols_simple"

    def check(self, X, Y):
        _require_simple(X, Y, self.kind)

    def _coef(self, x, y):
        xbar, ybar = x.mean(), y.mean()
        dx = x - xbar
        sxx = float(dx @ dx)
        if not sxx > 0:
            raise DegenerateDesignError("x has zero sample variance")
        beta = float(dx @ (y - ybar)) / sxx
        return ybar - beta * xbar, beta, xbar, ybar, sxx

    def predict_arrays(self, X, Y, inputs):
        alpha, beta, *_ = self._coef(X[:, 0], Y[:, 0])
        return (alpha + beta * np.asarray(inputs, dtype=np.float64).reshape(-1))[:, None]

    def vjp(self, X, Y, inp, v):
        x, y = X[:, 0], Y[:, 0]
        n = x.shape[0]
        _, beta, xbar, ybar, sxx = self._coef(x, y)
        dx = x - xbar
        q = float(inp[0]) - xbar
        dbeta_dy = dx / sxx
        dbeta_dx = ((y - ybar) - 2.0 * beta * dx) / sxx
        gy = 1.0 / n + q * dbeta_dy
        gx = q * dbeta_dx - beta / n
        return (float(v[0]) * gx)[:, None], (float(v[0]) * gy)[:, None]

    def loo_predictions(self, X, Y):
        x, y = X[:, 0], Y[:, 0]
        n = x.shape[0]
        xbar, ybar = x.mean(), y.mean()
        dx, dy = x - xbar, y - ybar
        sxx, sxy = float(dx @ dx), float(dx @ dy)
        c = n / (n - 1.0)
        sxx_i = sxx - c * dx * dx
        sxy_i = sxy - c * dx * dy
        xbar_i = (n * xbar - x) / (n - 1)
        ybar_i = (n * ybar - y) / (n - 1)
        out = np.empty(n)
        ok = sxx_i > 1e-8 * sxx
        beta = np.where(ok, sxy_i / np.where(ok, sxx_i, 1.0), 0.0)
        out[:] = ybar_i + beta * (x - xbar_i)
        for i in np.flatnonzero(~ok):
            # downdate lost precision; refit the fold directly
            xs, ys = np.delete(x, i), np.delete(y, i)
            a, b, *_ = self._coef(xs, ys)
            out[i] = a + b * x[i]
        return out[:, None]


def truncate(a, b):
    return np.clip(a, -b, b)


@dataclass(frozen=True, repr=False)
class StabilizedOLS(Estimator):
    """OLS with truncated responses ``g_b(y)`` and slope denominator ``Sxx + n delta``.

    The intercept uses the untruncated response mean, ``alpha = ybar - beta xbar``.
    """

    stabilizer: float
    truncation: float
    kind = "ols_stabilized"

    def __post_init__(self):
        if not self.stabilizer > 0 or not self.truncation > 0:
            raise ConfigError("ols_stabilized needs stabilizer > 0 and truncation > 0")

    def check(self, X, Y):
        _require_simple(X, Y, self.kind)

    def _coef(self, x, y):
        n = x.shape[0]
        yt = truncate(y, self.truncation)
        xbar = x.mean()
        dx = x - xbar
        den = float(dx @ dx) + n * self.stabilizer
        beta = float(dx @ (yt - yt.mean())) / den
        return y.mean() - beta * xbar, beta, xbar, dx, yt, den

    def predict_arrays(self, X, Y, inputs):
        alpha, beta, *_ = self._coef(X[:, 0], Y[:, 0])
        return (alpha + beta * np.asarray(inputs, dtype=np.float64).reshape(-1))[:, None]

    def vjp(self, X, Y, inp, v):
        x, y = X[:, 0], Y[:, 0]
        n = x.shape[0]
        _, beta, xbar, dx, yt, den = self._coef(x, y)
        q = float(inp[0]) - xbar
        inside = (np.abs(y) < self.truncation).astype(np.float64)
        dbeta_dy = dx * inside / den
        dbeta_dx = ((yt - yt.mean()) - 2.0 * beta * dx) / den
        gy = 1.0 / n + q * dbeta_dy
        gx = q * dbeta_dx - beta / n
        return (float(v[0]) * gx)[:, None], (float(v[0]) * gy)[:, None]

    def loo_predictions(self, X, Y):
        x, y = X[:, 0], Y[:, 0]
        n = x.shape[0]
        yt = truncate(y, self.truncation)
        xbar, ybar, ytbar = x.mean(), y.mean(), yt.mean()
        dx, dyt = x - xbar, yt - ytbar
        sxx, sxy = float(dx @ dx), float(dx @ dyt)
        c = n / (n - 1.0)
        sxx_i = sxx - c * dx * dx
        sxy_i = sxy - c * dx * dyt
        if sxx > 0:
            bad = sxx_i < 1e-8 * sxx
        else:
            bad = np.zeros(n, dtype=bool)
        beta = sxy_i / (np.maximum(sxx_i, 0.0) + (n - 1) * self.stabilizer)
        xbar_i = (n * xbar - x) / (n - 1)
        ybar_i = (n * ybar - y) / (n - 1)
        out = ybar_i + beta * (x - xbar_i)
        for i in np.flatnonzero(bad):
            a, b, *_ = self._coef(np.delete(x, i), np.delete(y, i))
            out[i] = a + b * x[i]
        return out[:, None]

    def params(self):
        return {"stabilizer": self.stabilizer, "truncation": self.truncation}


@dataclass(frozen=True, repr=False)
class StabilizedNW(Estimator):
    """Nadaraya-Watson regression with denominator ``sum_j K_h(x - x_j) + n delta``."""

    bandwidth: float
    stabilizer: float
    kind = "nw_kernel_stabilized"

    def __post_init__(self):
        if not self.bandwidth > 0 or not self.stabilizer > 0:
            raise ConfigError("nw_kernel_stabilized needs bandwidth > 0 and stabilizer > 0")

    def check(self, X, Y):
        _require_simple(X, Y, self.kind)

    def _sums(self, x, y, t, self_index=None):
        h = self.bandwidth
        n = x.shape[0]
        if n * t.shape[0] <= _DIRECT_WORK:
            K = _gauss((t[:, None] - x[None, :]) / h) / h
            if self_index is not None:
                K[np.arange(t.shape[0]), self_index] = 0.0
            return K.sum(axis=1), K @ y
        s = _kernels.gauss_sums(x, np.vstack([np.ones(n), y]), t, h, self_index=self_index)
        s /= SQRT_2PI * h
        return s[0], s[1]

    def predict_arrays(self, X, Y, inputs):
        x, y = X[:, 0], Y[:, 0]
        t = np.asarray(inputs, dtype=np.float64).reshape(-1)
        den, num = self._sums(x, y, t)
        return (num / (den + x.shape[0] * self.stabilizer))[:, None]

    def vjp(self, X, Y, inp, v):
        x, y = X[:, 0], Y[:, 0]
        n, h = x.shape[0], self.bandwidth
        t = float(inp[0])
        K = _gauss((t - x) / h) / h
        W = K.sum() + n * self.stabilizer
        T = float(K @ y) / W
        gy = K / W
        gx = (t - x) / (h * h) * K * (y - T) / W
        return (float(v[0]) * gx)[:, None], (float(v[0]) * gy)[:, None]

    def loo_predictions(self, X, Y):
        x, y = X[:, 0], Y[:, 0]
        n = x.shape[0]
        den, num = self._sums(x, y, x, self_index=np.arange(n))
        return (num / (den + (n - 1) * self.stabilizer))[:, None]

    def params(self):
        return {"bandwidth": self.bandwidth, "stabilizer": self.stabilizer}


ESTIMATORS = {
    "empirical_mean": EmpiricalMean,
    "kde": KDE,
    "ols_simple": OLS,
    "ols_stabilized": StabilizedOLS,
    "nw_kernel_stabilized": StabilizedNW,
}


def predict(est: Estimator, D, x) -> np.ndarray:
    """``T_D(x)``; ``D`` may be a Dataset or a DeletedView."""
    return est.predict(D, x)


def query_losses(est: Estimator, loss: Loss, X, Y, QX, QY) -> np.ndarray:
    """Losses of the fit on ``(X, Y)`` at query observations ``(QX, QY)``."""
    est.check(X, Y)
    inputs, targets = est.split(QX, QY)
    pred = est.predict_arrays(X, Y, inputs)
    return loss.values(pred, targets if loss.needs_target else None)
