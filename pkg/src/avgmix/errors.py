"""Exception types shared across the package."""


class AvgmixError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(AvgmixError, ValueError):
    """Vector/matrix dimensions disagree with the model or each other."""


class InvalidSampleError(AvgmixError, ValueError):
    """A sample violates the loss model's domain (e.g. non-binary feature)."""


class InvalidArgumentError(AvgmixError, ValueError):
    """An argument is outside its documented range."""


class SingularMatrixError(AvgmixError, ValueError):
    """Normal-equation system is singular.

    Attributes
    ----------
    rank : int
        Numerical rank of the Gram matrix.
    dim : int
        Expected full rank.
    """

    def __init__(self, rank: int, dim: int):
        self.rank = rank
        self.dim = dim
        super().__init__(f"singular Gram matrix: rank {rank} < {dim}")


class DivergenceError(AvgmixError, RuntimeError):
    """An iterative solver produced a non-finite iterate or objective."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        super().__init__(message)


class UndefinedMetricError(AvgmixError, ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class ShardFailureError(AvgmixError, RuntimeError):
    """One or more shard solves failed.

    Attributes
    ----------
    shard_ids : tuple of int
        Indices of the failing shards.
    """

    def __init__(self, shard_ids, causes=None):
        self.shard_ids = tuple(shard_ids)
        self.causes = tuple(causes) if causes is not None else ()
        detail = "; ".join(str(c) for c in self.causes[:3])
        super().__init__(
            f"shard solve failed for shards {list(self.shard_ids)}"
            + (f": {detail}" if detail else "")
        )


class ProtocolError(AvgmixError, RuntimeError):
    """Wire-protocol violation (bad frame, version mismatch, oversize)."""

    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(f"protocol error {code}: {message}")
