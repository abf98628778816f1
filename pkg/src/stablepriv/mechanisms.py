"""Sparse vector over sensitivity-1 queries and the distance-to-instability test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, List, Optional

from .core import (
    BOTTOM,
    EXHAUSTED,
    TOP,
    NoiseSource,
    ParameterError,
    Signal,
    laplace_sample,
)


def sparse_vec_lambda(cutoff_T: int, epsilon: float, delta: float) -> float:
    """Noise scale sqrt(32 T log(1/delta)) / epsilon."""
    return math.sqrt(32.0 * cutoff_T * math.log(1.0 / delta)) / epsilon


def sparse_vec_alpha(m: int, cutoff_T: int, beta: float, epsilon: float, delta: float) -> float:
    """Margin above the threshold past which every query is answered TOP w.p. 1 - beta."""
    return math.log(2.0 * m * cutoff_T / beta) * math.sqrt(512.0 * cutoff_T * math.log(1.0 / delta)) / epsilon


@dataclass(frozen=True)
class SparseVecConfig:
    cutoff_T: int
    epsilon: float
    delta: float
    threshold_w: float
    lambda_: Optional[float] = field(default=None)

    def __post_init__(self):
        if int(self.cutoff_T) != self.cutoff_T or self.cutoff_T < 1:
            raise ParameterError(f"cutoff_T must be a positive integer, got {self.cutoff_T}")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ParameterError("delta must lie in (0, 1)")
        if self.lambda_ is None:
            object.__setattr__(self, "lambda_", sparse_vec_lambda(self.cutoff_T, self.epsilon, self.delta))
        elif not self.lambda_ > 0:
            raise ParameterError("lambda override must be positive")

    @property
    def lambda_overridden(self) -> bool:
        return not math.isclose(
            self.lambda_, sparse_vec_lambda(self.cutoff_T, self.epsilon, self.delta), rel_tol=1e-12
        )


def sparse_vec_run(dist_stream: Iterable[float], config: SparseVecConfig, noise: NoiseSource) -> List[Signal]:
    """Answer each query TOP/BOTTOM against a noisy threshold.

    Each BOTTOM increments the counter and refreshes the threshold; once
    the counter exceeds T every remaining query gets EXHAUSTED, so at most
    T + 1 BOTTOMs are ever emitted.
    """
    lam = config.lambda_
    w = config.threshold_w
    w_hat = w + laplace_sample(lam, noise)
    c = 0
    out: List[Signal] = []
    for q in dist_stream:
        if c > config.cutoff_T:
            out.append(EXHAUSTED)
            continue
        if q + laplace_sample(2.0 * lam, noise) > w_hat:
            out.append(TOP)
        else:
            out.append(BOTTOM)
            w_hat = w + laplace_sample(lam, noise)
            c += 1
    return out


@dataclass(frozen=True)
class StabResponse:
    value: Any = None
    released: bool = False

    @property
    def is_bottom(self) -> bool:
        return not self.released


def stab_threshold(epsilon: float, delta: float) -> float:
    """Standalone threshold log(1/delta)/epsilon."""
    return math.log(1.0 / delta) / epsilon


def a_stab(candidate_value: Any, dist: int, threshold_Gamma: float, epsilon: float, noise: NoiseSource) -> StabResponse:
    """Release ``candidate_value`` iff dist + Lap(1/epsilon) > Gamma."""
    if dist < 0:
        raise ParameterError(f"distance to instability must be nonnegative, got {dist}")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if dist + laplace_sample(1.0 / epsilon, noise) > threshold_Gamma:
        return StabResponse(candidate_value, True)
    return StabResponse(None, False)
