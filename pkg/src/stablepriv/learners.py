"""Non-private learners and synthetic data generators.

Every learner is a deterministic function of ``(dataset, seed)`` and returns
a classifier with a soft score in [0, 1] and a hard label derived from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import expit, ndtr

from .core import Dataset, ParameterError, child_rng


class Classifier:
    """Base class: subclasses implement ``_soft(X)`` on an (m, d) batch.

    ``predict_soft``/``predict_hard`` accept either a batch or a single
    feature vector (1-D input); a single vector yields a scalar.
    """

    def _soft(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_soft(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim <= 1
        s = np.clip(self._soft(np.atleast_2d(X) if X.ndim else X.reshape(1, 1)), 0.0, 1.0)
        return float(s[0]) if single else s

    def predict_hard(self, X):
        s = self.predict_soft(X)
        if isinstance(s, float):
            return int(s >= 0.5)
        return (s >= 0.5).astype(np.int64)


class ThresholdClassifier(Classifier):
    """h(x) = 1{x >= theta} on the first feature."""

    def __init__(self, theta: float):
        self.theta = float(theta)

    def _soft(self, X):
        return (X[:, 0] >= self.theta).astype(float)

    def __repr__(self):
        return f"ThresholdClassifier(theta={self.theta!r})"


class LinearSigmoidClassifier(Classifier):
    def __init__(self, weights: np.ndarray, bias: float = 0.0, clip_bound: Optional[float] = None):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)
        self.clip_bound = clip_bound

    def _soft(self, X):
        if self.clip_bound is not None:
            X = clip_rows(X, self.clip_bound)
        return expit(X @ self.weights + self.bias)


class ConstantClassifier(Classifier):
    def __init__(self, value: float):
        self.value = float(value)

    def _soft(self, X):
        return np.full(X.shape[0], self.value)

    def __repr__(self):
        return f"ConstantClassifier({self.value!r})"


@dataclass(frozen=True)
class LearnerHandle:
    name: str
    train: Callable[[Dataset, int], Classifier]
    description: str = ""

    def __call__(self, dataset: Dataset, seed: int = 0) -> Classifier:
        return self.train(dataset, seed)


def train_threshold_erm(dataset: Dataset, seed: int = 0) -> ThresholdClassifier:
    """Empirical risk minimiser over 1-D thresholds.

    Candidates are -inf, every distinct feature value and +inf; ties go to
    the smallest candidate.
    """
    del seed
    if len(dataset) == 0:
        raise ParameterError("cannot train on an empty dataset")
    if dataset.dim != 1:
        raise ParameterError("threshold ERM expects 1-D features")
    x = dataset.X[:, 0]
    y = dataset.y
    values, inverse = np.unique(x, return_inverse=True)
    ones = np.bincount(inverse, weights=y, minlength=len(values))
    total = np.bincount(inverse, minlength=len(values))
    zeros = total - ones
    # theta = values[i]: ones strictly below are errors, zeros at or above are errors
    ones_below = np.concatenate([[0.0], np.cumsum(ones)])
    zeros_at_or_above = np.concatenate([np.cumsum(zeros[::-1])[::-1], [0.0]])
    # index 0 predicts 1 everywhere (reported as -inf), index len(values) is +inf
    errors = ones_below + zeros_at_or_above
    best = int(np.argmin(errors))
    if best == 0:
        theta = -math.inf
    elif best == len(values):
        theta = math.inf
    else:
        theta = float(values[best])
    return ThresholdClassifier(theta)


@dataclass(frozen=True)
class SgdConfig:
    step_c: float = 1.0
    passes: int = 1
    mode: str = "one-pass-deterministic"
    l2_regularization: float = 0.0
    clip_bound: float = 1.0
    fit_intercept: bool = True

    MODES = ("one-pass-deterministic", "permutation-shuffled")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ParameterError(f"unknown SGD mode {self.mode!r}")
        if not self.step_c > 0:
            raise ParameterError("step constant must be positive")
        if self.passes < 0:
            raise ParameterError("passes must be nonnegative")
        if self.mode == "one-pass-deterministic" and self.passes > 1:
            raise ParameterError("one-pass-deterministic runs exactly one pass")
        if self.l2_regularization < 0 or not self.clip_bound > 0:
            raise ParameterError("need l2 >= 0 and clip_bound > 0")


def clip_rows(X: np.ndarray, bound: float) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    scale = np.minimum(1.0, bound / np.maximum(norms, 1e-300))
    return X * scale[:, None]


def sgd_order(n: int, config: SgdConfig, seed: int) -> np.ndarray:
    """Index sequence visited by SGD: data order, or one permutation per pass."""
    if config.passes == 0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if config.mode == "one-pass-deterministic":
        return np.arange(n)
    rng = child_rng(seed, 0x5EED)
    return np.concatenate([rng.permutation(n) for _ in range(config.passes)])


def sgd_weights(X: np.ndarray, y: np.ndarray, order: np.ndarray, config: SgdConfig) -> np.ndarray:
    """Logistic-loss SGD with step c/t visiting rows in ``order``; returns weights (bias last)."""
    Xc = clip_rows(X, config.clip_bound) if len(X) else X
    if config.fit_intercept:
        Xc = np.hstack([Xc, np.ones((Xc.shape[0], 1))])
    d = Xc.shape[1]
    w = [0.0] * d
    rows = Xc.tolist()
    labels = y.tolist()
    lam = config.l2_regularization
    c = config.step_c
    for t, i in enumerate(order.tolist(), start=1):
        xi = rows[i]
        z = 0.0
        for a, b in zip(w, xi):
            z += a * b
        p = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        g = p - labels[i]
        eta = c / t
        for q in range(d):
            w[q] -= eta * (g * xi[q] + lam * w[q])
    return np.array(w)


def train_logistic_sgd(dataset: Dataset, config: SgdConfig = SgdConfig(), seed: int = 0) -> LinearSigmoidClassifier:
    order = sgd_order(len(dataset), config, seed)
    w = sgd_weights(dataset.X, dataset.y, order, config)
    if config.fit_intercept:
        return LinearSigmoidClassifier(w[:-1], w[-1], config.clip_bound)
    return LinearSigmoidClassifier(w, 0.0, config.clip_bound)


def train_label_mean(dataset: Dataset, seed: int = 0) -> ConstantClassifier:
    del seed
    if len(dataset) == 0:
        raise ParameterError("cannot train on an empty dataset")
    return ConstantClassifier(float(np.mean(dataset.y)))


def logistic_sgd_learner(config: SgdConfig = SgdConfig()) -> LearnerHandle:
    return LearnerHandle(
        "logistic-sgd",
        lambda d, s: train_logistic_sgd(d, config, s),
        f"logistic regression by SGD ({config.mode}, step {config.step_c}/t)",
    )


LEARNERS: Dict[str, LearnerHandle] = {
    "threshold-erm": LearnerHandle("threshold-erm", train_threshold_erm, "1-D threshold ERM (VC dimension 1)"),
    "logistic-sgd": logistic_sgd_learner(),
    "label-mean": LearnerHandle("label-mean", train_label_mean, "constant mean-label predictor"),
}


def get_learner(name: str) -> LearnerHandle:
    try:
        return LEARNERS[name]
    except KeyError:
        raise ParameterError(f"unknown learner {name!r}; choose from {sorted(LEARNERS)}") from None


# ---------------------------------------------------------------- generators


def gen_threshold_data(n: int, theta_star: float = 0.5, noise_rate: float = 0.0, seed: int = 0) -> Dataset:
    """x ~ U[0, 1], y = 1{x >= theta*} flipped with probability ``noise_rate``."""
    if not 0 <= noise_rate < 0.5:
        raise ParameterError("noise_rate must lie in [0, 1/2)")
    rng = child_rng(seed, 1)
    x = rng.random(n)
    y = (x >= theta_star).astype(np.int64)
    flips = rng.random(n) < noise_rate
    y = np.where(flips, 1 - y, y)
    return Dataset(x.reshape(-1, 1), y)


def margin_label_prob(x, c: float):
    """p(y = 1 | x) when y = 1{x + z >= 0}, z ~ N(0, c^2/8)."""
    return ndtr(np.asarray(x, dtype=float) * math.sqrt(8.0) / c)


def gen_margin_features(n: int, c: float, rng: np.random.Generator) -> np.ndarray:
    mag = c + c * rng.random(n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sign * mag


def margin_labels(x: np.ndarray, c: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(0.0, c / math.sqrt(8.0), size=x.shape)
    return (x + z >= 0).astype(np.int64)


def gen_margin_data(n: int, c: float = 1.0, seed: int = 0) -> Dataset:
    """x uniform on [-2c, -c] U [c, 2c]; y = 1{x + z >= 0} with z ~ N(0, c^2/8)."""
    if not c > 0:
        raise ParameterError("margin c must be positive")
    rng = child_rng(seed, 2)
    x = gen_margin_features(n, c, rng)
    return Dataset(x.reshape(-1, 1), margin_labels(x, c, rng))


def gen_margin_conditional(n: int, c: float, x0: float, seed: int = 0) -> Dataset:
    """n labels drawn from the margin conditional at the fixed feature x0."""
    if not c > 0:
        raise ParameterError("margin c must be positive")
    rng = child_rng(seed, 3)
    x = np.full(n, float(x0))
    return Dataset(x.reshape(-1, 1), margin_labels(x, c, rng))


@dataclass(frozen=True)
class DistributionSampler:
    """i.i.d. sampler: ``sample(n, seed)`` returns a Dataset deterministically."""

    sample: Callable[[int, int], Dataset]
    label_conditional: Optional[Callable] = field(default=None)
    name: str = ""

    def __call__(self, n: int, seed: int) -> Dataset:
        return self.sample(n, seed)


def threshold_sampler(theta_star: float = 0.5, noise_rate: float = 0.0) -> DistributionSampler:
    def cond(x):
        inside = (np.asarray(x, dtype=float) >= theta_star).astype(float)
        return inside * (1 - noise_rate) + (1 - inside) * noise_rate

    return DistributionSampler(
        lambda n, s: gen_threshold_data(n, theta_star, noise_rate, s), cond, f"threshold({theta_star},{noise_rate})"
    )


def margin_sampler(c: float = 1.0) -> DistributionSampler:
    return DistributionSampler(lambda n, s: gen_margin_data(n, c, s), lambda x: margin_label_prob(x, c), f"margin({c})")


def margin_conditional_sampler(c: float, x0: float) -> DistributionSampler:
    return DistributionSampler(
        lambda n, s: gen_margin_conditional(n, c, x0, s),
        lambda x: margin_label_prob(x, c),
        f"margin-conditional({c},{x0})",
    )


def bernoulli_sampler(p: float, dim: int = 1) -> DistributionSampler:
    """Features ~ U[0,1]^dim independent of Bernoulli(p) labels."""
    if not 0 <= p <= 1:
        raise ParameterError("p must lie in [0, 1]")

    def sample(n, seed):
        rng = child_rng(seed, 4)
        X = rng.random((n, dim))
        y = (rng.random(n) < p).astype(np.int64)
        return Dataset(X, y)

    return DistributionSampler(sample, lambda x: np.full(np.shape(x)[:1] or (1,), p), f"bernoulli({p})")
