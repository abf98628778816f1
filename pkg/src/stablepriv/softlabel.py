"""Soft-label query release over gamma-discretised vote histograms.

Each query is first tested on the plain gamma-partition of [0, 1]; if that
histogram is not stable enough, the threshold is re-noised and the
half-shifted partition gets a second try. A first-stage answer is free,
a second-stage answer costs one unit and a BOTTOM costs two.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DEFAULT_RTOL,
    EXHAUSTED,
    Dataset,
    NoiseSource,
    ParameterError,
    PrivacyParams,
    ceil_snap,
    laplace_sample,
)
from .subsample import top_two_gap, train_chunk_classifiers

# ------------------------------------------------------------------ partitions


@dataclass(frozen=True)
class GammaPartition:
    """Equal-width bins of [0, 1], optionally shifted by half a bin.

    Edges are computed as j/N from the integer N = 1/gamma so that bin
    membership does not depend on accumulated rounding.
    """

    gamma: float
    shifted: bool
    num_intervals: int  # N = 1/gamma

    @property
    def num_bins(self) -> int:
        return self.num_intervals - 1 if self.shifted else self.num_intervals

    @property
    def bins(self) -> List[Tuple[float, float]]:
        N = self.num_intervals
        if self.shifted:
            return [((j + 0.5) / N, (j + 1.5) / N) for j in range(N - 1)]
        return [(j / N, (j + 1) / N) for j in range(N)]

    @property
    def lower(self) -> float:
        return 0.5 / self.num_intervals if self.shifted else 0.0

    @property
    def upper(self) -> float:
        N = self.num_intervals
        return (N - 0.5) / N if self.shifted else 1.0

    def midpoint(self, v: int) -> float:
        """Centre of 1-based bin v: (2v - 1) gamma / 2 plain, v gamma shifted."""
        if not 1 <= v <= self.num_bins:
            raise ParameterError(f"bin {v} out of range 1..{self.num_bins}")
        N = self.num_intervals
        return v / N if self.shifted else (2 * v - 1) / (2 * N)

    def bin_indices(self, scores) -> np.ndarray:
        """0-based bin per score; -1 marks shifted-partition scores outside every bin."""
        s = np.asarray(scores, dtype=float).reshape(-1)
        N = self.num_intervals
        off = 0.5 if self.shifted else 0.0
        j = np.floor(s * N - off).astype(np.int64)
        # nudge floor() decisions that landed on the wrong side of an edge
        j = np.where(s >= (j + 1 + off) / N, j + 1, j)
        j = np.where(s < (j + off) / N, j - 1, j)
        if self.shifted:
            return np.where((j >= 0) & (j <= N - 2), j, -1)
        return np.clip(j, 0, N - 1)


def _integer_inverse(gamma: float) -> int:
    inv = 1.0 / gamma
    N = round(inv)
    if N < 2 or abs(inv - N) > DEFAULT_RTOL * inv:
        raise ParameterError(f"gamma={gamma} must lie in (0, 1/2] with 1/gamma an integer")
    return int(N)


def make_partition(gamma: float, shifted: bool = False) -> GammaPartition:
    if not 0 < gamma <= 0.5:
        raise ParameterError(f"gamma must lie in (0, 1/2], got {gamma}")
    return GammaPartition(float(gamma), bool(shifted), _integer_inverse(gamma))


def snap_gamma(requested: float) -> float:
    """Largest gamma <= requested with 1/gamma an integer."""
    if not 0 < requested <= 0.5:
        raise ParameterError(f"requested gamma must lie in (0, 1/2], got {requested}")
    return 1.0 / ceil_snap(1.0 / requested)


@dataclass(frozen=True)
class GammaHistogram:
    partition: GammaPartition
    counts: Tuple[int, ...]
    uncounted: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts) + self.uncounted


def gen_hist(scores: Sequence[float], partition: GammaPartition) -> GammaHistogram:
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size and (np.any(~np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0):
        raise ParameterError("scores must lie in [0, 1]")
    idx = partition.bin_indices(s)
    inside = idx >= 0
    counts = np.bincount(idx[inside], minlength=partition.num_bins)
    return GammaHistogram(partition, tuple(int(c) for c in counts), int(np.sum(~inside)))


def hist_dist(hist: GammaHistogram) -> int:
    return top_two_gap(hist.counts)[1]


def hist_mode(hist: GammaHistogram) -> Tuple[int, int]:
    """(1-based argmax bin, distance to instability)."""
    idx, dist = top_two_gap(hist.counts)
    return idx + 1, dist


# ------------------------------------------------------------------ parameters


def slc_lambda(params: PrivacyParams) -> float:
    return math.sqrt(64.0 * params.cutoff_T * math.log(2.0 / params.delta)) / params.epsilon


def slc_threshold(params: PrivacyParams, lambda_: Optional[float] = None) -> float:
    lam = slc_lambda(params) if lambda_ is None else lambda_
    return lam * math.log(4.0 * params.num_queries_m / params.delta)


def slc_k_raw(params: PrivacyParams, beta: float) -> float:
    """Chunk count under which every weak-quality query is answered at the first stage."""
    T, m = params.cutoff_T, params.num_queries_m
    return (
        136.0
        * math.log(8.0 * m * T / min(beta, params.delta))
        * math.sqrt(2.0 * T * math.log(2.0 / params.delta))
        / params.epsilon
    )


def slc_k(params: PrivacyParams, beta: float) -> int:
    return ceil_snap(slc_k_raw(params, beta))


def soft_gamma_raw(alpha: float, n_prime: int, nu: float) -> float:
    """16 alpha sqrt(2 n') + nu: bin width matched to the concentration radius."""
    return 16.0 * alpha * math.sqrt(2.0 * n_prime) + nu


def soft_accuracy_bound(alpha: float, n_prime: int, nu: float) -> float:
    return 8.0 * alpha * math.sqrt(2.0 * n_prime) + nu / 2.0


def concentration_radius(alpha: float, n_prime: int) -> float:
    return 4.0 * alpha * math.sqrt(2.0 * n_prime)


@dataclass(frozen=True)
class SlcAux:
    gamma: float
    lambda_: float
    threshold_w: float
    overridden: Tuple[str, ...] = ()

    @classmethod
    def from_params(
        cls,
        params: PrivacyParams,
        gamma: float,
        *,
        lambda_: Optional[float] = None,
        threshold_w: Optional[float] = None,
    ) -> "SlcAux":
        make_partition(gamma)
        over = []
        if lambda_ is None:
            lam = slc_lambda(params)
        else:
            if not lambda_ > 0:
                raise ParameterError("lambda override must be positive")
            lam = float(lambda_)
            over.append("lambda")
        if threshold_w is None:
            w = slc_threshold(params, lam)
        else:
            w = float(threshold_w)
            over.append("w")
        return cls(float(gamma), lam, w, tuple(over))


# ------------------------------------------------------------------ session


class Stage(enum.Enum):
    FIRST = "first-stage"
    SECOND = "second-stage"


@dataclass(frozen=True)
class SoftAnswer:
    score: Optional[float]
    stage: Stage
    bin: Optional[int] = None
    dist: int = 0

    @property
    def is_bottom(self) -> bool:
        return self.score is None


@dataclass
class SlcSession:
    """Trained chunk classifiers plus the mutable threshold and cost counter."""

    params: PrivacyParams
    aux: SlcAux
    classifiers: list
    noise: NoiseSource
    noisy_threshold: float = 0.0
    cost: int = 0
    refreshes: int = 0
    plain: GammaPartition = field(init=False)
    shifted: GammaPartition = field(init=False)

    def __post_init__(self):
        self.plain = make_partition(self.aux.gamma, False)
        self.shifted = make_partition(self.aux.gamma, True)

    @property
    def k(self) -> int:
        return len(self.classifiers)

    @property
    def exhausted(self) -> bool:
        return self.cost > self.params.cutoff_T

    def refresh_threshold(self) -> None:
        self.noisy_threshold = self.aux.threshold_w + laplace_sample(self.aux.lambda_, self.noise)
        self.refreshes += 1

    def scores(self, queries) -> np.ndarray:
        """(k, m) soft predictions of every chunk classifier."""
        Q = np.asarray(queries, dtype=float)
        if Q.ndim == 1:
            Q = Q.reshape(-1, 1)
        return np.vstack([np.asarray(h.predict_soft(Q), dtype=float).reshape(-1) for h in self.classifiers])


def open_slc_session(params: PrivacyParams, aux: SlcAux, classifiers: list, noise: NoiseSource) -> SlcSession:
    """Package classifiers with a fresh noisy threshold w + Lap(lambda)."""
    if not classifiers:
        raise ParameterError("need at least one classifier")
    session = SlcSession(params, aux, list(classifiers), noise)
    session.refresh_threshold()
    session.refreshes = 0
    return session


def a_prvlearn(
    dataset: Dataset,
    learner,
    k: int,
    aux: SlcAux,
    params: PrivacyParams,
    noise: NoiseSource,
    *,
    seed: int = 0,
    threads: int = 1,
) -> SlcSession:
    """Train ``learner`` on k disjoint chunks and open a session over them."""
    return open_slc_session(params, aux, train_chunk_classifiers(dataset, learner, k, seed, threads), noise)


def _noisy_pass(session: SlcSession, dist: int) -> bool:
    return dist + laplace_sample(2.0 * session.aux.lambda_, session.noise) > session.noisy_threshold


def h_priv_from_scores(session: SlcSession, scores: Sequence[float]) -> SoftAnswer:
    plain = gen_hist(scores, session.plain)
    v, dist = hist_mode(plain)
    if _noisy_pass(session, dist):
        return SoftAnswer(session.plain.midpoint(v), Stage.FIRST, v, dist)
    session.refresh_threshold()
    shifted = gen_hist(scores, session.shifted)
    v, dist = hist_mode(shifted)
    if _noisy_pass(session, dist):
        return SoftAnswer(session.shifted.midpoint(v), Stage.SECOND, v, dist)
    return SoftAnswer(None, Stage.SECOND, None, dist)


def h_priv_answer(session: SlcSession, x) -> SoftAnswer:
    """Two-stage private soft label for a single feature vector."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return h_priv_from_scores(session, session.scores(x)[:, 0])


STAGE_COST = {Stage.FIRST: 0, Stage.SECOND: 1}
BOTTOM_COST = 2


@dataclass(frozen=True)
class TraceStep:
    query_index: int
    stage: Stage
    cost: int
    counter: int


@dataclass
class SlcResult:
    answers: list
    trace: List[TraceStep]

    @property
    def bottoms(self) -> int:
        return sum(1 for a in self.answers if isinstance(a, SoftAnswer) and a.is_bottom)

    @property
    def exhausted(self) -> int:
        return sum(1 for a in self.answers if a is EXHAUSTED)

    @property
    def released(self) -> int:
        return sum(1 for a in self.answers if isinstance(a, SoftAnswer) and not a.is_bottom)

    def scores(self) -> List[Optional[float]]:
        return [a.score if isinstance(a, SoftAnswer) else None for a in self.answers]


def a_slc(session: SlcSession, queries) -> SlcResult:
    """Answer queries in order until the cost counter exceeds T.

    A BOTTOM costs 2 and re-noises the threshold; the query that pushes the
    counter past T is still completed and every later query is EXHAUSTED.
    """
    Q = np.asarray(queries, dtype=float)
    if Q.ndim == 1:
        Q = Q.reshape(-1, 1)
    S = session.scores(Q) if len(Q) else np.empty((session.k, 0))
    answers: list = []
    trace: List[TraceStep] = []
    for i in range(Q.shape[0]):
        if session.exhausted:
            answers.append(EXHAUSTED)
            continue
        ans = h_priv_from_scores(session, S[:, i])
        if ans.is_bottom:
            cost = BOTTOM_COST
            session.refresh_threshold()
        else:
            cost = STAGE_COST[ans.stage]
        session.cost += cost
        answers.append(ans)
        trace.append(TraceStep(i, ans.stage, cost, session.cost))
    return SlcResult(answers, trace)
