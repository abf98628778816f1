"""Monte-Carlo estimators for replace-one stability, concentration and quality.

Every estimator is deterministic in ``seed``. Data for all trials comes from
one i.i.d. pool drawn with ``sampler(total, seed)`` and cut into per-trial
slices; the per-trial replacement index and learner seed come from
``child_rng(seed, t)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .core import Dataset, ParameterError, child_rng, child_seed
from .learners import DistributionSampler, LearnerHandle, SgdConfig, train_logistic_sgd

MIN_TRIALS = 100


def standard_error(values) -> float:
    """Sample standard error of the mean of i.i.d. per-trial values."""
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def _check_trials(trials: int) -> None:
    if trials < MIN_TRIALS:
        raise ParameterError(f"need at least {MIN_TRIALS} trials, got {trials}")


def _predict(h, probe_x) -> float:
    return float(h.predict_soft(np.asarray(probe_x, dtype=float).reshape(-1)))


def _pool(sampler: DistributionSampler, total: int, seed: int) -> Dataset:
    return sampler(total, child_seed(seed, 0xDA7A))


@dataclass(frozen=True)
class StabilityEstimate:
    alpha_sq_hat: float
    std_error: float
    n: int
    trials: int
    probe_x: tuple

    @property
    def alpha_hat(self) -> float:
        return math.sqrt(self.alpha_sq_hat)


def replace_one_gaps(learner: LearnerHandle, sampler: DistributionSampler, n: int, probe_x, trials: int, seed: int) -> np.ndarray:
    """Squared prediction gaps |h_D(x) - h_{D^(j)}(x)|^2, one per trial.

    Both models share the trial's learner seed so only the data differs.
    """
    if n < 1:
        raise ParameterError("n must be positive")
    pool = _pool(sampler, trials * (n + 1), seed)
    gaps = np.empty(trials)
    for t in range(trials):
        base = t * (n + 1)
        D = pool[base : base + n]
        v = pool[base + n]
        rng = child_rng(seed, t)
        j = int(rng.integers(n))
        s = int(rng.integers(2**62))
        Dj = D.replace(j, v.X[0], int(v.y[0]))
        gaps[t] = (_predict(learner(D, s), probe_x) - _predict(learner(Dj, s), probe_x)) ** 2
    return gaps


def estimate_on_avg_stability(
    learner: LearnerHandle, sampler: DistributionSampler, n: int, probe_x, trials: int = 1000, seed: int = 0
) -> StabilityEstimate:
    """alpha^2 estimate: mean squared replace-one gap at ``probe_x`` over data and a uniform index."""
    _check_trials(trials)
    gaps = replace_one_gaps(learner, sampler, n, probe_x, trials, seed)
    px = tuple(np.asarray(probe_x, dtype=float).reshape(-1).tolist())
    return StabilityEstimate(float(gaps.mean()), standard_error(gaps), n, trials, px)


def label_mean_alpha_sq(p: float, n: int) -> float:
    """Exact replace-one alpha^2 of the label-mean learner: 2p(1-p)/n^2."""
    return 2.0 * p * (1.0 - p) / n**2


@dataclass(frozen=True)
class ConcentrationResult:
    fraction: float
    std_error: float
    radius: float
    pilot_mean: float


def _predictions(learner, sampler, n, probe_x, count, seed) -> np.ndarray:
    pool = _pool(sampler, count * n, seed)
    out = np.empty(count)
    for t in range(count):
        out[t] = _predict(learner(pool[t * n : (t + 1) * n], child_seed(seed, t)), probe_x)
    return out


def concentration_check(
    learner: LearnerHandle,
    sampler: DistributionSampler,
    n_prime: int,
    probe_x,
    alpha: float,
    trials: int = 1000,
    seed: int = 0,
) -> ConcentrationResult:
    """Fraction of fresh models within 4 alpha sqrt(2 n') of the pilot mean prediction."""
    _check_trials(trials)
    if alpha < 0:
        raise ParameterError("alpha must be nonnegative")
    pilot = _predictions(learner, sampler, n_prime, probe_x, 10 * trials, child_seed(seed, 1))
    mean = float(pilot.mean())
    fresh = _predictions(learner, sampler, n_prime, probe_x, trials, child_seed(seed, 2))
    radius = 4.0 * alpha * math.sqrt(2.0 * n_prime)
    inside = np.abs(fresh - mean) <= radius
    f = float(inside.mean())
    return ConcentrationResult(f, math.sqrt(f * (1.0 - f) / trials), radius, mean)


@dataclass(frozen=True)
class EfronSteinResult:
    variance: float
    bound: float
    variance_se: float
    bound_se: float

    def __iter__(self):
        return iter((self.variance, self.bound))


def efron_stein_check(
    estimator: Callable[[Dataset], float], sampler: DistributionSampler, n: int, trials: int = 10_000, seed: int = 0
) -> EfronSteinResult:
    """Both sides of Var f(D) <= 1/2 sum_j E (f(D) - f(D^(j)))^2.

    The right side uses one uniform index per trial, scaled by n/2.
    """
    if not 1 <= n <= 1000:
        raise ParameterError("n must lie in [1, 1000]")
    if trials < 2:
        raise ParameterError("need at least two trials")
    pool = _pool(sampler, trials * (n + 1), seed)
    js = child_rng(seed, 0x1D).integers(n, size=trials)
    f = np.empty(trials)
    g = np.empty(trials)
    for t in range(trials):
        base = t * (n + 1)
        D = pool[base : base + n]
        v = pool[base + n]
        f[t] = estimator(D)
        g[t] = (f[t] - estimator(D.replace(int(js[t]), v.X[0], int(v.y[0])))) ** 2
    var = float(np.var(f, ddof=1))
    dev = (f - f.mean()) ** 2
    return EfronSteinResult(var, float(0.5 * n * g.mean()), standard_error(dev), 0.5 * n * standard_error(g))


def mean_label(d: Dataset) -> float:
    return float(np.mean(d.y))


def max_label(d: Dataset) -> float:
    return float(np.max(d.y))


def zero_estimator(d: Dataset) -> float:
    return 0.0


ESTIMATORS = {"mean": mean_label, "max": max_label, "constant": zero_estimator}


@dataclass(frozen=True)
class QualityProbe:
    mean_score: float
    nu_hat: float
    std_error: float
    beta_hat: Optional[float] = None

    def __iter__(self):
        return iter((self.mean_score, self.nu_hat))


def quality_probe(
    learner: LearnerHandle,
    sampler: DistributionSampler,
    n: int,
    probe_x,
    trials: int = 1000,
    seed: int = 0,
    strong_nu: Optional[float] = None,
) -> QualityProbe:
    """Mean prediction at ``probe_x`` and its distance to {0, 1}.

    With ``strong_nu`` also reports the fraction of models whose score lies
    in [nu, 1 - nu].
    """
    _check_trials(trials)
    preds = _predictions(learner, sampler, n, probe_x, trials, seed)
    mean = float(preds.mean())
    beta_hat = None
    if strong_nu is not None:
        beta_hat = float(np.mean((preds >= strong_nu) & (preds <= 1.0 - strong_nu)))
    return QualityProbe(mean, min(mean, 1.0 - mean), standard_error(preds), beta_hat)


@dataclass(frozen=True)
class ReductionProbe:
    on_avg_alpha_sq_deterministic: float
    uniform_alpha_sq_permuted: float
    on_avg_std_error: float
    uniform_std_error: float

    def __iter__(self):
        return iter((self.on_avg_alpha_sq_deterministic, self.uniform_alpha_sq_permuted))


def _sgd_pair(config: SgdConfig) -> Tuple[SgdConfig, SgdConfig]:
    if config.passes > 1:
        raise ParameterError("the reduction compares single passes")
    det = dataclasses.replace(config, mode="one-pass-deterministic")
    perm = dataclasses.replace(config, mode="permutation-shuffled")
    return det, perm


def pair_gap_sq(D: Dataset, Dj: Dataset, config: SgdConfig, probe_x, seed: int) -> float:
    """Squared gap between SGD runs on a neighbouring pair sharing one visiting order."""
    a = train_logistic_sgd(D, config, seed)
    b = train_logistic_sgd(Dj, config, seed)
    return (_predict(a, probe_x) - _predict(b, probe_x)) ** 2


def sgd_reduction_probe(
    sampler: DistributionSampler,
    sgd_config: SgdConfig,
    n: int,
    probe_x,
    trials: int = 200,
    seed: int = 0,
    panel_size: int = 20,
) -> ReductionProbe:
    """On-average alpha^2 of data-order SGD next to permuted SGD's worst panel pair.

    The uniform quantity is the largest, over ``panel_size`` fixed
    neighbouring pairs, of the permutation-averaged squared gap. A max over
    a finite panel only approximates the supremum from below.
    """
    _check_trials(trials)
    if panel_size < 20:
        raise ParameterError("panel needs at least 20 neighbouring pairs")
    det, perm = _sgd_pair(sgd_config)
    learner = LearnerHandle("sgd", lambda d, s: train_logistic_sgd(d, det, s))
    on_avg = estimate_on_avg_stability(learner, sampler, n, probe_x, trials, child_seed(seed, 1))

    perms = max(10, trials // panel_size)
    pool = _pool(sampler, panel_size * (n + 1), child_seed(seed, 2))
    best, best_se = 0.0, 0.0
    for p in range(panel_size):
        base = p * (n + 1)
        D = pool[base : base + n]
        v = pool[base + n]
        j = int(child_rng(seed, 3, p).integers(n))
        Dj = D.replace(j, v.X[0], int(v.y[0]))
        gaps = np.array([pair_gap_sq(D, Dj, perm, probe_x, child_seed(seed, 4, p, r)) for r in range(perms)])
        if gaps.mean() > best or p == 0:
            best = float(gaps.mean())
            best_se = float(np.std(gaps, ddof=1) / math.sqrt(perms)) if perms > 1 else 0.0
    return ReductionProbe(on_avg.alpha_sq_hat, best, on_avg.std_error, best_se)
