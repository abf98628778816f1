"""Subsample-and-aggregate: chunk the data, vote, and feed the online release session."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Dataset,
    InsufficientDataError,
    NoiseSource,
    ParameterError,
    PrivacyParams,
    ceil_snap,
    child_seed,
)
from .oqr import OqrSession, oqr_answer, oqr_open


class ChunkEvaluationError(RuntimeError):
    """A chunk's answer function failed while answering ``query_index``."""

    def __init__(self, query_index: int, chunk_index: int, cause: BaseException):
        super().__init__(f"query {query_index}: chunk {chunk_index} failed: {cause!r}")
        self.query_index = query_index
        self.chunk_index = chunk_index
        self.__cause__ = cause


def compute_k_raw(m: int, T: int, epsilon: float, delta: float, beta: float) -> float:
    return 136.0 * math.log(4.0 * m * T / min(delta, beta / 2.0)) * math.sqrt(T * math.log(2.0 / delta)) / epsilon


def compute_k(m: int, T: int, epsilon: float, delta: float, beta: float) -> int:
    """Number of chunks needed for the utility guarantee, rounded up."""
    if m < 1 or T < 1:
        raise ParameterError(f"m and T must be positive, got m={m}, T={T}")
    if not epsilon > 0 or not 0 < delta < 1 or not 0 < beta < 1:
        raise ParameterError("need epsilon > 0 and delta, beta in (0, 1)")
    return max(1, ceil_snap(compute_k_raw(m, T, epsilon, delta, beta)))


@dataclass(frozen=True)
class ChunkPlan:
    k: int
    chunk_size: int
    n: int

    @property
    def chunk_index_ranges(self) -> List[Tuple[int, int]]:
        s = self.chunk_size
        return [(j * s, (j + 1) * s) for j in range(self.k)]

    @property
    def unused(self) -> int:
        return self.n - self.k * self.chunk_size


@dataclass(frozen=True)
class Chunk:
    index: int
    data: Dataset


def split_chunks(dataset: Dataset, k: int) -> ChunkPlan:
    n = len(dataset)
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")
    if n < k:
        raise InsufficientDataError(f"need at least k={k} examples, got n={n}")
    return ChunkPlan(k=k, chunk_size=n // k, n=n)


def iter_chunks(dataset: Dataset, plan: ChunkPlan):
    for j, (lo, hi) in enumerate(plan.chunk_index_ranges):
        yield Chunk(j, dataset[lo:hi])


@dataclass(frozen=True)
class VoteHistogram:
    range: Tuple[Any, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        if len(self.range) == 0:
            raise ParameterError("vote range must be nonempty")
        if len(self.counts) != len(self.range):
            raise ParameterError("counts must align with the range")
        if any(c < 0 for c in self.counts):
            raise ParameterError("counts must be nonnegative")

    @classmethod
    def from_votes(cls, votes: Sequence[Any], range_: Sequence[Any]) -> "VoteHistogram":
        index = {tok: i for i, tok in enumerate(range_)}
        counts = [0] * len(range_)
        for v in votes:
            try:
                counts[index[v]] += 1
            except KeyError:
                raise ParameterError(f"vote {v!r} is outside the query range") from None
        return cls(tuple(range_), tuple(counts))

    @property
    def voters(self) -> int:
        return sum(self.counts)


def top_two_gap(counts: Sequence[int]) -> Tuple[int, int]:
    """(argmax with lowest-index ties, max(0, top - second - 1)); second is 0 for one bin."""
    if len(counts) == 0:
        raise ParameterError("need at least one bin")
    best = 0
    for i in range(1, len(counts)):
        if counts[i] > counts[best]:
            best = i
    top = counts[best]
    second = max((c for i, c in enumerate(counts) if i != best), default=0)
    return best, max(0, top - second - 1)


def mode_and_dist(hist: VoteHistogram) -> Tuple[Any, int]:
    idx, dist = top_two_gap(hist.counts)
    return hist.range[idx], dist


def answer_votes(session: OqrSession, votes: Sequence[Any], range_: Sequence[Any]) -> Any:
    mode, dist = mode_and_dist(VoteHistogram.from_votes(votes, range_))
    return oqr_answer(session, mode, dist)


def subsamp_answer_stream(
    dataset: Dataset,
    range_per_query: Sequence[Sequence[Any]],
    chunk_answers: Callable[[int, Chunk], Any],
    params: PrivacyParams,
    noise: NoiseSource,
    *,
    beta: float = 0.05,
    k: Optional[int] = None,
    session: Optional[OqrSession] = None,
) -> List[Any]:
    """Answer query i with the released vote mode, BOTTOM or EXHAUSTED.

    ``chunk_answers(i, chunk)`` must depend on the chunk's data only; one
    record edit then moves at most one vote. ``k`` defaults to
    :func:`compute_k`; ``session`` defaults to a calibrated one.
    """
    if k is None:
        k = compute_k(params.num_queries_m, params.cutoff_T, params.epsilon, params.delta, beta)
    plan = split_chunks(dataset, k)
    chunks = list(iter_chunks(dataset, plan))
    if session is None:
        session = oqr_open(params, noise)
    out = []
    for i, range_ in enumerate(range_per_query):
        if session.exhausted:
            out.append(oqr_answer(session, None, 0))
            continue
        votes = []
        for chunk in chunks:
            try:
                votes.append(chunk_answers(i, chunk))
            except Exception as exc:
                raise ChunkEvaluationError(i, chunk.index, exc) from exc
        out.append(answer_votes(session, votes, range_))
    return out


def vote_matrix_dists(votes: np.ndarray, range_: Sequence[Any]) -> Tuple[List[Any], List[int]]:
    """Per-column mode and distance for a (k, m) matrix of votes over a shared range."""
    modes, dists = [], []
    for col in np.asarray(votes).T:
        mode, dist = mode_and_dist(VoteHistogram.from_votes(col.tolist(), range_))
        modes.append(mode)
        dists.append(dist)
    return modes, dists


def train_chunk_classifiers(dataset: Dataset, learner, k: int, seed: int = 0, threads: int = 1) -> list:
    """Train ``learner`` on each of the k index-interval chunks.

    Chunk j is trained with a seed derived from (seed, j) only, so the
    classifiers are identical whatever ``threads`` is.
    """
    plan = split_chunks(dataset, k)
    chunks = list(iter_chunks(dataset, plan))

    def fit(chunk: Chunk):
        return learner.train(chunk.data, child_seed(seed, chunk.index))

    if threads is None or threads <= 1:
        return [fit(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fit, chunks))
