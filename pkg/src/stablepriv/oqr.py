"""Online query release: sparse vector over distance-to-instability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, List, Optional

from .core import BOTTOM, EXHAUSTED, NoiseSource, ParameterError, PrivacyParams, laplace_sample
from .mechanisms import a_stab


def oqr_lambda(params: PrivacyParams) -> float:
    return math.sqrt(32.0 * params.cutoff_T * math.log(2.0 / params.delta)) / params.epsilon


def oqr_threshold(params: PrivacyParams, lambda_: Optional[float] = None) -> float:
    lam = oqr_lambda(params) if lambda_ is None else lambda_
    return 2.0 * lam * math.log(2.0 * params.num_queries_m / params.delta)


def oqr_alpha(params: PrivacyParams, beta: float) -> float:
    """Distance above which a query is released with probability 1 - beta (jointly)."""
    T, m = params.cutoff_T, params.num_queries_m
    return (
        32.0
        * math.log(4.0 * m * T / min(params.delta, beta))
        * math.sqrt(2.0 * T * math.log(2.0 / params.delta))
        / params.epsilon
    )


@dataclass
class OqrSession:
    params: PrivacyParams
    lambda_: float
    threshold_w: float
    noisy_threshold: float
    noise: NoiseSource
    unstable_count: int = 0
    answered: int = 0
    overridden: dict = field(default_factory=dict)

    @property
    def exhausted(self) -> bool:
        return self.unstable_count > self.params.cutoff_T

    def refresh_threshold(self) -> None:
        self.noisy_threshold = self.threshold_w + laplace_sample(self.lambda_, self.noise)


def oqr_open(
    params: PrivacyParams,
    noise: NoiseSource,
    *,
    lambda_: Optional[float] = None,
    threshold_w: Optional[float] = None,
) -> OqrSession:
    """Start a session with counter 0 and a freshly noised threshold.

    ``lambda_`` and ``threshold_w`` are test-mode overrides; omitted, they
    follow the calibrated formulas.
    """
    if not isinstance(params, PrivacyParams):
        raise ParameterError("params must be a PrivacyParams")
    overridden = {}
    if lambda_ is None:
        lam = oqr_lambda(params)
    else:
        if not lambda_ > 0:
            raise ParameterError("lambda override must be positive")
        lam = float(lambda_)
        overridden["lambda"] = lam
    if threshold_w is None:
        w = oqr_threshold(params, lam)
    else:
        w = float(threshold_w)
        overridden["w"] = w
    w_hat = w + laplace_sample(lam, noise)
    return OqrSession(params, lam, w, w_hat, noise, overridden=overridden)


def oqr_answer(session: OqrSession, candidate_value: Any, dist: int) -> Any:
    """Release ``candidate_value`` exactly, or return BOTTOM / EXHAUSTED."""
    if session.exhausted:
        return EXHAUSTED
    session.answered += 1
    out = a_stab(candidate_value, dist, session.noisy_threshold, 1.0 / (2.0 * session.lambda_), session.noise)
    if out.released:
        return out.value
    session.unstable_count += 1
    session.refresh_threshold()
    return BOTTOM


def oqr_run(session: OqrSession, candidates: List[Any], dists: List[int]) -> List[Any]:
    return [oqr_answer(session, v, d) for v, d in zip(candidates, dists)]
