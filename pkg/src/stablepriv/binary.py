"""Private binary classification queries via subsample-and-aggregate."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import (
    BOTTOM,
    EXHAUSTED,
    Dataset,
    InsufficientDataError,
    NoiseSource,
    ParameterError,
    PlanInfeasibleError,
    PrivacyParams,
    ceil_snap,
)
from .learners import LearnerHandle
from .oqr import OqrSession, oqr_open
from .subsample import compute_k, subsamp_answer_stream, train_chunk_classifiers

BINARY_RANGE = (0, 1)


@dataclass(frozen=True)
class BinaryPlan:
    m: int
    alpha: float
    gamma_opt: float
    beta: float
    T: int
    k: int
    epsilon: float
    delta: float
    k_overridden: bool = False

    def with_k(self, k: int) -> "BinaryPlan":
        """Test-mode copy with a hand-picked chunk count."""
        return BinaryPlan(self.m, self.alpha, self.gamma_opt, self.beta, self.T, int(k), self.epsilon, self.delta, True)

    def privacy_params(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta, self.T, self.m)


def binary_cutoff_raw(m: int, alpha: float, gamma_opt: float, beta: float) -> float:
    return 3.0 * ((gamma_opt + alpha) * m + math.sqrt(m * math.log(m / beta) / 2.0))


def min_queries(alpha: float, beta: float) -> float:
    """Smallest m for which the realizable query guarantee applies."""
    return 4.0 * math.log(1.0 / (alpha * beta)) / alpha**2


def plan_binary(m: int, alpha: float, gamma_opt: float, beta: float, epsilon: float, delta: float) -> BinaryPlan:
    """Cutoff T from the learners' error budget and k from the chunk-count formula (at beta/2)."""
    if m < 1:
        raise ParameterError("m must be positive")
    if not (0 <= alpha < 1 and 0 <= gamma_opt < 1 and 0 < beta < 1):
        raise ParameterError("need alpha, gamma_opt in [0, 1) and beta in (0, 1)")
    if alpha > 0 and m < min_queries(alpha, beta):
        warnings.warn(
            f"m={m} is below 4 log(1/(alpha beta))/alpha^2 = {min_queries(alpha, beta):.1f}; "
            "the query guarantee does not apply",
            stacklevel=2,
        )
    T = ceil_snap(binary_cutoff_raw(m, alpha, gamma_opt, beta))
    if T < 1:
        raise ParameterError("derived cutoff T must be at least 1")
    if T >= m:
        raise PlanInfeasibleError(f"derived cutoff T={T} is not below m={m}; no utility guarantee")
    k = compute_k(m, T, epsilon, delta, beta / 2.0)
    return BinaryPlan(m, alpha, gamma_opt, beta, T, k, epsilon, delta)


def solve_plan(
    m: int,
    n: int,
    alpha_curve: Callable[[int], float],
    gamma_opt: float,
    beta: float,
    epsilon: float,
    delta: float,
    max_iter: int = 20,
) -> BinaryPlan:
    """Fixed-point iteration k -> alpha(n // k) -> T -> k, stopping once k repeats."""
    plan = plan_binary(m, alpha_curve(n), gamma_opt, beta, epsilon, delta)
    for _ in range(max_iter):
        chunk = n // plan.k
        if chunk < 1:
            raise InsufficientDataError(f"n={n} cannot feed k={plan.k} chunks")
        nxt = plan_binary(m, alpha_curve(chunk), gamma_opt, beta, epsilon, delta)
        if nxt.k == plan.k:
            return nxt
        plan = nxt
    return plan


def _check_consistent(plan: BinaryPlan, params: PrivacyParams) -> None:
    if plan.T != params.cutoff_T or not math.isclose(plan.epsilon, params.epsilon) or not math.isclose(
        plan.delta, params.delta
    ):
        raise ParameterError("plan and privacy params disagree on T, epsilon or delta")


def chunk_vote_matrix(classifiers: Sequence, queries: np.ndarray) -> np.ndarray:
    """(k, m) hard predictions of every chunk classifier on every query."""
    Q = np.asarray(queries, dtype=float)
    if Q.ndim == 1:
        Q = Q.reshape(-1, 1)
    return np.vstack([np.asarray(h.predict_hard(Q)).reshape(-1) for h in classifiers])


def answer_binary_queries(
    dataset: Dataset,
    learner: LearnerHandle,
    queries,
    plan: BinaryPlan,
    params: PrivacyParams,
    noise: NoiseSource,
    *,
    seed: int = 0,
    threads: int = 1,
    session: Optional[OqrSession] = None,
) -> List:
    """Answer each query with 0, 1, BOTTOM or EXHAUSTED.

    The k chunk classifiers are trained once; the vote on query i is their
    hard predictions at x_i.
    """
    _check_consistent(plan, params)
    classifiers = train_chunk_classifiers(dataset, learner, plan.k, seed, threads)
    votes = chunk_vote_matrix(classifiers, queries)
    if session is None:
        session = oqr_open(params, noise)
    m = votes.shape[1]
    return subsamp_answer_stream(
        dataset,
        [BINARY_RANGE] * m,
        lambda i, chunk: int(votes[chunk.index, i]),
        params,
        noise,
        k=plan.k,
        session=session,
    )


@dataclass(frozen=True)
class BinaryScore:
    answered: int
    wrong: int
    bottoms: int
    exhausted: int

    @property
    def total(self) -> int:
        return self.answered + self.bottoms + self.exhausted

    @property
    def answered_error_rate(self) -> float:
        return self.wrong / self.answered if self.answered else 0.0

    @property
    def misclassification_rate(self) -> float:
        """Wrong answers plus every BOTTOM/EXHAUSTED, over all queries."""
        return (self.wrong + self.bottoms + self.exhausted) / self.total if self.total else 0.0


def score_binary(answers: Sequence, truth: Sequence[int]) -> BinaryScore:
    answered = wrong = bottoms = exhausted = 0
    for a, y in zip(answers, truth):
        if a is BOTTOM:
            bottoms += 1
        elif a is EXHAUSTED:
            exhausted += 1
        else:
            answered += 1
            wrong += int(a != y)
    return BinaryScore(answered, wrong, bottoms, exhausted)


@dataclass(frozen=True)
class CountingLemmaResult:
    bad_columns: int
    bound: float
    max_row_mistakes: int

    @property
    def holds(self) -> bool:
        return self.bad_columns < self.bound


def counting_lemma_stats(prediction_matrix, truth, B: int, xi: float) -> CountingLemmaResult:
    P = np.asarray(prediction_matrix)
    y = np.asarray(truth)
    if P.ndim != 2 or y.ndim != 1 or P.shape[1] != y.shape[0]:
        raise ParameterError(f"prediction matrix {P.shape} does not match {y.shape[0]} labels")
    if not 0 < xi <= 0.5:
        raise ParameterError("xi must lie in (0, 1/2]")
    if B < 1:
        raise ParameterError("B must be a positive integer")
    k = P.shape[0]
    mistakes = P != y[None, :]
    bad = int(np.sum(mistakes.sum(axis=0) > xi * k))
    return CountingLemmaResult(bad, B / xi, int(mistakes.sum(axis=1).max(initial=0)))


def check_counting_lemma(prediction_matrix, truth, B: int, xi: float) -> bool:
    """True iff fewer than B/xi queries are missed by more than xi*k classifiers.

    Raises ParameterError when some row already makes more than B mistakes,
    since the bound says nothing about such inputs.
    """
    stats = counting_lemma_stats(prediction_matrix, truth, B, xi)
    if stats.max_row_mistakes > B:
        raise ParameterError(f"a classifier makes {stats.max_row_mistakes} > B={B} mistakes")
    return stats.holds
