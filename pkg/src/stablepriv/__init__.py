"""Private prediction by releasing stable answers of non-private learners.

The pieces, bottom up: Laplace noise with an injectable randomness source,
the sparse-vector and stability-test mechanisms, an online query release
session, subsample-and-aggregate voting, and pipelines for binary labels,
label-private transfer and soft-label scores. ``stability_lab`` holds the
Monte-Carlo estimators used to calibrate the soft-label pipeline.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BOTTOM,
    EXHAUSTED,
    TOP,
    DataFormatError,
    Dataset,
    InsufficientDataError,
    LabeledExample,
    NoiseSource,
    ParameterError,
    PlanInfeasibleError,
    PrivacyParams,
    Signal,
    laplace_sample,
)
from .mechanisms import SparseVecConfig, a_stab, sparse_vec_run  # noqa: E402
from .oqr import oqr_answer, oqr_open  # noqa: E402
from .subsample import compute_k, subsamp_answer_stream  # noqa: E402
from .binary import BinaryPlan, answer_binary_queries, check_counting_lemma, plan_binary  # noqa: E402
from .label_private import TransferReport, a_priv  # noqa: E402
from .softlabel import a_prvlearn, a_slc, h_priv_answer, make_partition, snap_gamma  # noqa: E402

__all__ = [
    "BOTTOM",
    "EXHAUSTED",
    "TOP",
    "DataFormatError",
    "Dataset",
    "InsufficientDataError",
    "LabeledExample",
    "NoiseSource",
    "ParameterError",
    "PlanInfeasibleError",
    "PrivacyParams",
    "Signal",
    "laplace_sample",
    "SparseVecConfig",
    "a_stab",
    "sparse_vec_run",
    "oqr_answer",
    "oqr_open",
    "compute_k",
    "subsamp_answer_stream",
    "BinaryPlan",
    "answer_binary_queries",
    "check_counting_lemma",
    "plan_binary",
    "TransferReport",
    "a_priv",
    "a_prvlearn",
    "a_slc",
    "h_priv_answer",
    "make_partition",
    "snap_gamma",
]
