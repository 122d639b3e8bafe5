"""Dataset container and the sparse text interchange format.

A dataset is a fixed-order collection of (feature vector, target) pairs.
Features are stored as a dense (n, d) float64 array, or as a CSR matrix
when the dimension is large.  Sparse input below `DENSIFY_DIM` is
densified on construction; everything downstream accepts both layouts
through the shared matrix protocol (`@`, `.T`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, InvalidArgumentError

DENSIFY_DIM = 4096


@dataclass(frozen=True)
class Sample:
    """One observation: feature vector and a scalar target.

    For logistic models the target is a label in {-1, +1}; for the
    1-d pathological loss the target is unused and set to 0.
    """

    features: np.ndarray
    target: float

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.asarray(self.features, dtype=np.float64).ravel()
        )


@dataclass
class Dataset:
    """Ordered sample collection with shared dimension `d`.

    X : (n, d) ndarray or CSR matrix
    y : (n,) ndarray of targets
    """

    X: object
    y: np.ndarray
    d: int = field(default=0)

    def __post_init__(self):
        if sp.issparse(self.X):
            self.X = self.X.tocsr()
            if self.X.shape[1] <= DENSIFY_DIM:
                self.X = np.asarray(self.X.todense(), dtype=np.float64)
        else:
            self.X = np.asarray(self.X, dtype=np.float64)
            if self.X.ndim == 1:
                self.X = self.X.reshape(-1, 1)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise DimensionMismatchError(
                f"{self.X.shape[0]} feature rows but {self.y.shape[0]} targets"
            )
        if self.d == 0:
            self.d = int(self.X.shape[1])
        elif self.d != self.X.shape[1]:
            raise DimensionMismatchError(
                f"declared d={self.d} but features have {self.X.shape[1]} columns"
            )

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    def sample(self, i: int) -> Sample:
        row = self.X[i]
        if sp.issparse(row):
            row = np.asarray(row.todense()).ravel()
        return Sample(features=np.asarray(row).ravel(), target=float(self.y[i]))

    def take(self, indices) -> "Dataset":
        """New dataset with the given rows, in the given order."""
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(X=self.X[indices], y=self.y[indices], d=self.d)

    def is_sparse(self) -> bool:
        return sp.issparse(self.X)


def from_samples(samples, d: int | None = None) -> Dataset:
    """Build a Dataset from an iterable of Sample objects."""
    samples = list(samples)
    if not samples:
        raise InvalidArgumentError("cannot build a dataset from zero samples")
    if d is None:
        d = samples[0].features.shape[0]
    X = np.stack([s.features for s in samples])
    y = np.array([s.target for s in samples])
    return Dataset(X=X, y=y, d=d)


def save_text(dataset: Dataset, path) -> None:
    """Write `target idx:val idx:val ...` lines, one sample per line.

    Indices are 0-based positions of the nonzero feature entries.
    """
    with open(path, "w") as fh:
        for i in range(len(dataset)):
            row = dataset.X[i]
            if sp.issparse(row):
                row = row.tocoo()
                idx, val = row.col, row.data
            else:
                row = np.asarray(row).ravel()
                idx = np.flatnonzero(row)
                val = row[idx]
            parts = [repr(float(dataset.y[i]))]
            parts.extend(f"{int(j)}:{float(v)!r}" for j, v in zip(idx, val))
            fh.write(" ".join(parts) + "\n")


def load_text(path, d: int | None = None) -> Dataset:
    """Read the format produced by `save_text`.

    The dimension is inferred as (max index + 1) unless given explicitly.
    """
    targets: list[float] = []
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    max_idx = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            try:
                targets.append(float(fields[0]))
                for tok in fields[1:]:
                    j, v = tok.split(":", 1)
                    j = int(j)
                    rows.append(lineno)
                    cols.append(j)
                    vals.append(float(v))
                    max_idx = max(max_idx, j)
            except (ValueError, IndexError) as exc:
                raise InvalidArgumentError(
                    f"malformed dataset line {lineno + 1}: {line!r}"
                ) from exc
    if not targets:
        raise InvalidArgumentError(f"no samples in {path}")
    if d is None:
        d = max_idx + 1
    if max_idx >= d:
        raise DimensionMismatchError(f"index {max_idx} >= declared d={d}")
    X = sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(targets), d), dtype=np.float64
    )
    return Dataset(X=X, y=np.array(targets), d=d)
