"""One-shot combiners for shard estimates.

Plain averaging takes the componentwise mean of the shard minimizers.
The subsampled correction additionally averages minimizers computed on
a without-replacement subsample of each shard (size ceil(r n)) and
returns (mean1 - r * mean2) / (1 - r), which cancels the leading-order
bias of the shard minimizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DimensionMismatchError, InvalidArgumentError
from .rng import make_generator

AVGM = "avgm"
SAVGM = "savgm"
SGD_AVGM = "sgd_avgm"


@dataclass(frozen=True)
class SubsampleSpec:
    """Subsampling rate r in [0, 1) and the seed of the index draw."""

    ratio: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.ratio < 1.0):
            raise InvalidArgumentError(f"subsample ratio must be in [0, 1), got {self.ratio}")

    def size(self, n: int) -> int:
        return math.ceil(self.ratio * n)


@dataclass
class CombineResult:
    mean1: np.ndarray
    mean2: np.ndarray | None
    theta_final: np.ndarray
    method: str


def _stack(estimates) -> np.ndarray:
    estimates = [np.asarray(e, dtype=np.float64).ravel() for e in estimates]
    if not estimates:
        raise InvalidArgumentError("no estimates to combine")
    d = estimates[0].shape[0]
    for e in estimates:
        if e.shape[0] != d:
            raise DimensionMismatchError("estimates have mixed dimensions")
    return np.stack(estimates)


def avgm_combine(estimates) -> CombineResult:
    """Componentwise mean of the shard estimates."""
    mean1 = _stack(estimates).mean(axis=0)
    return CombineResult(mean1=mean1, mean2=None, theta_final=mean1, method=AVGM)


def sgd_avgm_combine(estimates) -> CombineResult:
    """Mean of per-shard SGD outputs; same arithmetic, distinct label."""
    mean1 = _stack(estimates).mean(axis=0)
    return CombineResult(mean1=mean1, mean2=None, theta_final=mean1, method=SGD_AVGM)


def subsample_without_replacement(shard: Dataset, spec: SubsampleSpec) -> Dataset:
    """ceil(r n) distinct rows of the shard, uniform without replacement.

    A seeded partial Fisher-Yates shuffle selects the rows in O(k)
    swaps, so the draw is exactly uniform and stable under the seed.
    r = 0 yields the empty dataset; if ceil(r n) = n the subsample is
    the whole shard.
    """
    n = len(shard)
    k = spec.size(n)
    if k == 0:
        return shard.take(np.empty(0, dtype=np.intp))
    rng = make_generator(spec.seed)
    idx = np.arange(n)
    # swap positions drawn up front; swaps themselves must stay sequential
    draws = rng.integers(0, n - np.arange(k), size=k) + np.arange(k)
    for i in range(k):
        j = draws[i]
        idx[i], idx[j] = idx[j], idx[i]
    return shard.take(idx[:k])


def savgm_combine(mean1, mean2, r: float) -> CombineResult:
    """Weighted de-biasing combination (mean1 - r mean2) / (1 - r).

    At r = 0 the second average is not consulted and may be None.
    """
    if not (0.0 <= r < 1.0):
        raise InvalidArgumentError(f"ratio must be in [0, 1), got {r}")
    mean1 = np.asarray(mean1, dtype=np.float64).ravel()
    if r == 0.0:
        return CombineResult(
            mean1=mean1, mean2=None, theta_final=mean1.copy(), method=SAVGM
        )
    if mean2 is None:
        raise InvalidArgumentError("r > 0 requires the subsample average")
    mean2 = np.asarray(mean2, dtype=np.float64).ravel()
    if mean2.shape[0] != mean1.shape[0]:
        raise DimensionMismatchError("averages have mixed dimensions")
    theta = (mean1 - r * mean2) / (1.0 - r)
    return CombineResult(mean1=mean1, mean2=mean2, theta_final=theta, method=SAVGM)


def suggest_ratio(m: int, n: int, scale: float = 1.0) -> float:
    """Rate suggestion r = scale * sqrt(m) / n, clamped to at most 0.5.

    The theoretically optimal constant depends on unobservable problem
    curvature, so `scale` is caller-supplied; the default 1 is a
    pragmatic choice.
    """
    if m < 1 or n < 1 or scale <= 0:
        raise InvalidArgumentError("m, n must be positive integers and scale > 0")
    return min(scale * math.sqrt(m) / n, 0.5)
