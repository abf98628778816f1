"""Shared types, the injectable randomness contract and Laplace noise."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

DEFAULT_RTOL = 1e-9


class ParameterError(ValueError):
    """Raised when a mechanism or planner receives out-of-range parameters."""


class InsufficientDataError(ValueError):
    """Raised when a dataset is too small for the requested number of chunks."""


class PlanInfeasibleError(ValueError):
    """Raised when the derived cutoff leaves no utility guarantee."""


class DataFormatError(ValueError):
    """Raised on malformed input files."""


class Signal(enum.Enum):
    """Non-value outcomes of the online mechanisms."""

    TOP = "top"
    BOTTOM = "bottom"
    EXHAUSTED = "budget_exhausted"

    def __repr__(self) -> str:
        return f"Signal.{self.name}"


TOP = Signal.TOP
BOTTOM = Signal.BOTTOM
EXHAUSTED = Signal.EXHAUSTED


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget (epsilon, delta), unstable-query cutoff T and query count m."""

    epsilon: float
    delta: float
    cutoff_T: int
    num_queries_m: int

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.cutoff_T) != self.cutoff_T or int(self.num_queries_m) != self.num_queries_m:
            raise ParameterError("cutoff_T and num_queries_m must be integers")
        if not 1 <= self.cutoff_T <= self.num_queries_m:
            raise ParameterError(
                f"need 1 <= cutoff_T <= num_queries_m, got T={self.cutoff_T}, m={self.num_queries_m}"
            )


class NoiseSource:
    """Single-owner supplier of uniforms and Laplace draws.

    ``kind="seeded-uniform"`` draws from a PCG64 stream so the same seed
    reproduces the same sequence bit for bit. ``kind="zero-noise"`` returns
    0 for every Laplace draw, which turns every mechanism into its
    deterministic threshold predicate.
    """

    KINDS = ("seeded-uniform", "zero-noise")

    def __init__(self, kind: str = "seeded-uniform", seed: int = 0):
        if kind not in self.KINDS:
            raise ParameterError(f"unknown noise kind {kind!r}")
        self.kind = kind
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed)) if kind == "seeded-uniform" else None

    @classmethod
    def seeded(cls, seed: int) -> "NoiseSource":
        return cls("seeded-uniform", seed)

    @classmethod
    def zero(cls) -> "NoiseSource":
        return cls("zero-noise", 0)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero-noise"

    def uniform(self) -> float:
        """One draw from the open interval (0, 1)."""
        if self._rng is None:
            return 0.5
        u = self._rng.random()
        while u == 0.0:
            u = self._rng.random()
        return float(u)

    def uniforms(self, size: int) -> np.ndarray:
        if self._rng is None:
            return np.full(size, 0.5)
        u = self._rng.random(size)
        while np.any(u == 0.0):
            zeros = u == 0.0
            u[zeros] = self._rng.random(int(zeros.sum()))
        return u

    def laplace(self, scale: float) -> float:
        return laplace_sample(scale, self)

    def laplace_array(self, scale: float, size: int) -> np.ndarray:
        _check_scale(scale)
        if self.is_zero:
            return np.zeros(size)
        u = self.uniforms(size) - 0.5
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def __repr__(self) -> str:
        return f"NoiseSource(kind={self.kind!r}, seed={self.seed})"


def _check_scale(scale: float) -> None:
    if not (scale > 0 and math.isfinite(scale)):
        raise ParameterError(f"Laplace scale must be positive and finite, got {scale}")


def laplace_from_uniform(u: float, scale: float) -> float:
    """Inverse-CDF transform of a uniform u in (0, 1) into a Lap(scale) draw."""
    _check_scale(scale)
    if not 0.0 < u < 1.0:
        raise ParameterError(f"uniform must lie in (0, 1), got {u}")
    c = u - 0.5
    if c == 0.0:
        return 0.0
    return -scale * math.copysign(1.0, c) * math.log1p(-2.0 * abs(c))


def laplace_sample(scale: float, noise: NoiseSource) -> float:
    _check_scale(scale)
    if noise.is_zero:
        return 0.0
    return laplace_from_uniform(noise.uniform(), scale)


def laplace_cdf(x: float, scale: float) -> float:
    _check_scale(scale)
    if x < 0:
        return 0.5 * math.exp(x / scale)
    return 1.0 - 0.5 * math.exp(-x / scale)


@dataclass(frozen=True)
class LabeledExample:
    features: tuple
    label: int


class Dataset:
    """Ordered labeled examples stored as a feature matrix and a label vector.

    Order matters: chunking is by index interval.
    """

    __slots__ = ("X", "y")

    def __init__(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataFormatError("features must form a 2-D array")
        if y.shape != (X.shape[0],):
            raise DataFormatError(f"got {X.shape[0]} feature rows but labels of shape {y.shape}")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataFormatError("labels must be 0 or 1")
        self.X = X
        self.y = y.astype(np.int64)

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample]) -> "Dataset":
        if not examples:
            return cls(np.empty((0, 1)), np.empty(0, dtype=np.int64))
        widths = {len(e.features) for e in examples}
        if len(widths) != 1:
            raise DataFormatError("feature vector length must be constant within a dataset")
        return cls([e.features for e in examples], [e.label for e in examples])

    @classmethod
    def empty(cls, dim: int = 1) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __iter__(self) -> Iterator[LabeledExample]:
        for row, label in zip(self.X, self.y):
            yield LabeledExample(tuple(float(v) for v in row), int(label))

    def __getitem__(self, idx) -> "Dataset":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1)
        return Dataset(self.X[idx], self.y[idx])

    def replace(self, j: int, features, label: int) -> "Dataset":
        """Copy of the dataset with entry j swapped for (features, label)."""
        X = self.X.copy()
        y = self.y.copy()
        X[j] = features
        y[j] = label
        return Dataset(X, y)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim})"


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for a (seed, index, ...) path."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def child_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1, np.uint64)[0] >> 1)


def ceil_snap(x: float, rtol: float = DEFAULT_RTOL) -> int:
    """Ceiling that treats values within rtol of an integer as that integer.

    Formulas whose parameters were chosen to cancel to an integer would
    otherwise round up on the last floating-point bit.
    """
    nearest = round(x)
    if abs(x - nearest) <= rtol * max(1.0, abs(x)):
        return int(nearest)
    return int(math.ceil(x))
