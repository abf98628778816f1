"""Label-private learning: privately label public points, then train on them.

:func:`private_labels` is the only step that touches the private dataset.
:func:`transfer_from_labels` sees just the public points and the released
label stream, so everything downstream is post-processing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .binary import BinaryPlan, answer_binary_queries
from .core import BOTTOM, EXHAUSTED, Dataset, NoiseSource, ParameterError, PrivacyParams, child_rng
from .learners import Classifier, DistributionSampler, LearnerHandle

DEFAULT_HOLDOUT = 10_000


@dataclass
class TransferReport:
    relabeled_set: Dataset
    bottom_count: int
    exhausted_count: int
    final_classifier: Classifier
    holdout_error: Optional[float] = None

    @property
    def randomized_count(self) -> int:
        return self.bottom_count + self.exhausted_count


def randomize_bottoms(answers: Sequence, relabel_seed: int) -> Tuple[np.ndarray, int, int]:
    """Replace every BOTTOM / EXHAUSTED with a fair coin; returns (labels, #bottom, #exhausted)."""
    rng = child_rng(relabel_seed, 0xB07)
    labels = np.empty(len(answers), dtype=np.int64)
    bottoms = exhausted = 0
    for i, a in enumerate(answers):
        if a is BOTTOM or a is EXHAUSTED:
            bottoms += a is BOTTOM
            exhausted += a is EXHAUSTED
            labels[i] = rng.integers(2)
        elif a in (0, 1):
            labels[i] = int(a)
        else:
            raise ParameterError(f"answer {a!r} is not a binary label or signal")
    return labels, bottoms, exhausted


def holdout_error(classifier: Classifier, sampler: DistributionSampler, size: int = DEFAULT_HOLDOUT, seed: int = 0) -> float:
    """Misclassification rate on a fresh sample of ``size`` points."""
    d = sampler(size, seed)
    return float(np.mean(classifier.predict_hard(d.X) != d.y))


def private_labels(
    private_dataset: Dataset,
    learner: LearnerHandle,
    unlabeled,
    plan: BinaryPlan,
    params: PrivacyParams,
    noise: NoiseSource,
    *,
    seed: int = 0,
    threads: int = 1,
    session=None,
) -> List:
    U = np.asarray(unlabeled, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    if U.shape[0] != plan.m:
        raise ParameterError(f"plan is for m={plan.m} queries but {U.shape[0]} points were given")
    return answer_binary_queries(
        private_dataset, learner, U, plan, params, noise, seed=seed, threads=threads, session=session
    )


def transfer_from_labels(
    unlabeled,
    answers: Sequence,
    learner: LearnerHandle,
    relabel_seed: int,
    *,
    holdout: Optional[DistributionSampler] = None,
    holdout_size: int = DEFAULT_HOLDOUT,
    holdout_seed: int = 0,
    train_seed: int = 0,
) -> TransferReport:
    """Build the relabeled set from released answers and train a fresh learner on it."""
    U = np.asarray(unlabeled, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    if U.shape[0] != len(answers):
        raise ParameterError("one answer per unlabeled point is required")
    labels, bottoms, exhausted = randomize_bottoms(answers, relabel_seed)
    relabeled = Dataset(U, labels)
    h = learner(relabeled, train_seed)
    err = holdout_error(h, holdout, holdout_size, holdout_seed) if holdout is not None else None
    return TransferReport(relabeled, bottoms, exhausted, h, err)


def a_priv(
    private_dataset: Dataset,
    learner: LearnerHandle,
    unlabeled,
    plan: BinaryPlan,
    params: PrivacyParams,
    noise: NoiseSource,
    relabel_seed: int,
    *,
    seed: int = 0,
    threads: int = 1,
    holdout: Optional[DistributionSampler] = None,
    holdout_size: int = DEFAULT_HOLDOUT,
    holdout_seed: int = 0,
    session=None,
) -> TransferReport:
    answers = private_labels(
        private_dataset, learner, unlabeled, plan, params, noise, seed=seed, threads=threads, session=session
    )
    return transfer_from_labels(
        unlabeled,
        answers,
        learner,
        relabel_seed,
        holdout=holdout,
        holdout_size=holdout_size,
        holdout_seed=holdout_seed,
    )


def write_dataset_csv(dataset: Dataset, path, header: bool = True) -> None:
    """Features then label per row; floats use repr so reading back is exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{i}" for i in range(dataset.dim)] + ["y"])
        for row, label in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
