"""Synthetic data sources and their true parameters.

Three regression models over a fixed design distribution:

* ``normal``           y = <u, x> + eps
* ``cubic``            y = <u, x> + sum_j v_j x_j^3 + eps
* ``heteroskedastic``  y = <u, x> + h(x) |eps|,  h(x) = sum_j (x_j / 2)^3

with eps ~ N(0, 1) i.i.d., plus a Bernoulli(1/2) source for the 1-d
pathological loss and a synthetic sparse-binary "click" source for
logistic experiments.  Feature vectors are either five-sparse (five
distinct uniformly random coordinates, standard normal values) or fully
dense standard normal.

Sample streams are generated in fixed-size blocks, each keyed by
(seed, block index) on a counter-based generator, so any index range of
a stream can be regenerated independently, byte-for-byte, without
producing the preceding samples.  This is what lets remote workers
rebuild their shard from a small recipe instead of receiving the rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import solvers
from .data import DENSIFY_DIM, Dataset
from .errors import InvalidArgumentError
from .losses import sigmoid
from .rng import TAG_DATA, TAG_ORACLE, TAG_TRUTH, derive_seed, make_generator

MODEL_NORMAL = "normal"
MODEL_CUBIC = "cubic"
MODEL_HETEROSKEDASTIC = "heteroskedastic"
MODEL_BERNOULLI = "bernoulli_pathological"
MODEL_CLICK = "sparse_click"

MODELS = (
    MODEL_NORMAL,
    MODEL_CUBIC,
    MODEL_HETEROSKEDASTIC,
    MODEL_BERNOULLI,
    MODEL_CLICK,
)

FEATURE_SPARSE5 = "sparse5"
FEATURE_DENSE = "dense_gaussian"

CLOSED_FORM = "closed_form"
ORACLE_FIT = "oracle_fit"

BLOCK = 8192


@dataclass(frozen=True)
class GenSpec:
    """Recipe for one synthetic data stream.

    `seed` determines both the truth draw and the sample stream.  `nnz`
    is the ones-per-row count of the click source (default 5).
    `zero_noise` is a test hook that forces eps = 0 while leaving the
    feature stream untouched.
    """

    model: str
    d: int
    feature_style: str = FEATURE_SPARSE5
    seed: int = 0
    nnz: int = 5
    zero_noise: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidArgumentError(f"unknown model {self.model!r}")
        if self.d < 1:
            raise InvalidArgumentError("d must be positive")
        if self.feature_style not in (FEATURE_SPARSE5, FEATURE_DENSE):
            raise InvalidArgumentError(
                f"unknown feature style {self.feature_style!r}"
            )
        if self.model == MODEL_BERNOULLI and self.d != 1:
            raise InvalidArgumentError("bernoulli_pathological forces d = 1")
        if (
            self.model in (MODEL_NORMAL, MODEL_CUBIC, MODEL_HETEROSKEDASTIC)
            and self.feature_style == FEATURE_SPARSE5
            and self.d < 5
        ):
            raise InvalidArgumentError("sparse5 features require d >= 5")
        if self.model == MODEL_CLICK:
            if not (1 <= self.nnz <= self.d):
                raise InvalidArgumentError("need 1 <= nnz <= d for the click source")


@dataclass
class TruthRecord:
    """True parameters behind a stream and the population minimizer.

    theta_star is exact where a closed form exists and None until
    `resolve_theta_star` runs for the oracle-fit cases.
    """

    u: np.ndarray
    v: np.ndarray | None
    theta_star: np.ndarray | None
    theta_star_source: str


def draw_truth(spec: GenSpec) -> TruthRecord:
    """Draw u (and v) from the seeded truth stream and fill theta*.

    Closed forms: the normal model has theta* = u; the cubic model with
    dense Gaussian features has theta* = u + 3v; the Bernoulli
    pathological source has theta* = 0; the click source records its
    hidden generating vector.  The heteroskedastic model and the cubic
    model with sparse features are marked for an oracle fit.
    """
    rng = make_generator(derive_seed(spec.seed, TAG_TRUTH))
    if spec.model == MODEL_BERNOULLI:
        z = np.zeros(1)
        return TruthRecord(u=z, v=None, theta_star=z.copy(), theta_star_source=CLOSED_FORM)
    if spec.model == MODEL_CLICK:
        u = rng.uniform(-1.0, 1.0, size=spec.d)
        return TruthRecord(u=u, v=None, theta_star=u.copy(), theta_star_source=CLOSED_FORM)
    u = rng.random(spec.d)
    if spec.model == MODEL_NORMAL:
        return TruthRecord(u=u, v=None, theta_star=u.copy(), theta_star_source=CLOSED_FORM)
    if spec.model == MODEL_CUBIC:
        v = rng.random(spec.d)
        if spec.feature_style == FEATURE_DENSE:
            return TruthRecord(
                u=u, v=v, theta_star=u + 3.0 * v, theta_star_source=CLOSED_FORM
            )
        return TruthRecord(u=u, v=v, theta_star=None, theta_star_source=ORACLE_FIT)
    return TruthRecord(u=u, v=None, theta_star=None, theta_star_source=ORACLE_FIT)


def _distinct_indices(rng, nrows: int, k: int, d: int) -> np.ndarray:
    """nrows x k matrix of distinct column indices, uniform per row.

    Draws with replacement and redraws rows containing duplicates; the
    redraw loop is deterministic given the generator state.
    """
    idx = rng.integers(0, d, size=(nrows, k))
    if k == 1:
        return idx
    while True:
        srt = np.sort(idx, axis=1)
        bad = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        nbad = int(bad.sum())
        if nbad == 0:
            return idx
        idx[bad] = rng.integers(0, d, size=(nbad, k))


def _feature_block(spec: GenSpec, rng, nrows: int):
    if spec.model == MODEL_BERNOULLI:
        return rng.integers(0, 2, size=(nrows, 1)).astype(np.float64)
    if spec.model == MODEL_CLICK:
        idx = _distinct_indices(rng, nrows, spec.nnz, spec.d)
        if spec.d > DENSIFY_DIM:
            indptr = np.arange(0, nrows * spec.nnz + 1, spec.nnz)
            cols = np.sort(idx, axis=1).ravel()
            return sp.csr_matrix(
                (np.ones(nrows * spec.nnz), cols, indptr),
                shape=(nrows, spec.d),
            )
        X = np.zeros((nrows, spec.d))
        X[np.arange(nrows)[:, None], idx] = 1.0
        return X
    if spec.feature_style == FEATURE_DENSE:
        return rng.standard_normal((nrows, spec.d))
    idx = _distinct_indices(rng, nrows, 5, spec.d)
    vals = rng.standard_normal((nrows, 5))
    X = np.zeros((nrows, spec.d))
    X[np.arange(nrows)[:, None], idx] = vals
    return X


def _targets(spec: GenSpec, truth: TruthRecord, X, rng, nrows: int) -> np.ndarray:
    if spec.model == MODEL_CLICK:
        p = sigmoid(np.asarray(X @ truth.theta_star).ravel())
        return np.where(rng.random(nrows) < p, 1.0, -1.0)
    if spec.model == MODEL_BERNOULLI:
        return np.zeros(nrows)
    eps = rng.standard_normal(nrows)
    if spec.zero_noise:
        eps = np.zeros(nrows)
    mean = np.asarray(X @ truth.u).ravel()
    if spec.model == MODEL_NORMAL:
        return mean + eps
    if spec.model == MODEL_CUBIC:
        X3 = X.power(3) if sp.issparse(X) else X**3
        return mean + np.asarray(X3 @ truth.v).ravel() + eps
    # heteroskedastic: h(x) = sum_j (x_j / 2)^3
    X3 = X.power(3) if sp.issparse(X) else X**3
    h = np.asarray(X3.sum(axis=1)).ravel() / 8.0
    return mean + h * np.abs(eps)


def _gen_block(spec: GenSpec, truth: TruthRecord, block_index: int):
    rng = make_generator(derive_seed(spec.seed, TAG_DATA), block_index)
    X = _feature_block(spec, rng, BLOCK)
    y = _targets(spec, truth, X, rng, BLOCK)
    return X, y


def gen_range(spec: GenSpec, truth: TruthRecord, start: int, stop: int) -> Dataset:
    """Samples [start, stop) of the stream defined by (spec, truth)."""
    if not (0 <= start <= stop):
        raise InvalidArgumentError(f"bad range [{start}, {stop})")
    first, last = start // BLOCK, (stop - 1) // BLOCK if stop > start else start // BLOCK
    xs, ys = [], []
    for b in range(first, last + 1):
        X, y = _gen_block(spec, truth, b)
        lo = max(start - b * BLOCK, 0)
        hi = min(stop - b * BLOCK, BLOCK)
        xs.append(X[lo:hi])
        ys.append(y[lo:hi])
    X = sp.vstack(xs).tocsr() if sp.issparse(xs[0]) else np.vstack(xs)
    return Dataset(X=X, y=np.concatenate(ys), d=spec.d)


def gen_dataset(spec: GenSpec, truth: TruthRecord, count: int) -> Dataset:
    """First `count` samples of the stream."""
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    return gen_range(spec, truth, 0, count)


def resolve_theta_star(
    spec: GenSpec,
    truth: TruthRecord,
    count: int,
    oversample: int = 10,
    oracle_seed: int | None = None,
) -> np.ndarray:
    """Estimate theta* by least squares on `oversample * count` fresh samples.

    Closed-form truths are returned unchanged.  The fit streams blocks
    through accumulated normal equations, so the oracle sample set is
    never materialized.  The result is cached on the TruthRecord.
    """
    if truth.theta_star_source == CLOSED_FORM or truth.theta_star is not None:
        return truth.theta_star
    if oversample < 1:
        raise InvalidArgumentError("oversample must be positive")
    seed = oracle_seed if oracle_seed is not None else derive_seed(spec.seed, TAG_ORACLE)
    stream = replace(spec, seed=seed, zero_noise=False)
    total = oversample * count
    gram = np.zeros((spec.d, spec.d))
    moment = np.zeros(spec.d)
    done = 0
    while done < total:
        take = min(BLOCK, total - done)
        X, y = _gen_block(stream, truth, done // BLOCK)
        X, y = X[:take], y[:take]
        if sp.issparse(X):
            gram += np.asarray((X.T @ X).todense())
        else:
            gram += X.T @ X
        moment += np.asarray(X.T @ y).ravel()
        done += take
    theta = solvers.solve_normal_equations(gram / total, moment / total, lam=0.0)
    truth.theta_star = theta
    return theta


def gen_click_dataset(
    d: int, nnz_per_row: int, count: int, seed: int
) -> tuple[Dataset, TruthRecord]:
    """Sparse-binary logistic source: rows with exactly `nnz_per_row` ones.

    Labels are +-1 drawn from the logistic model at a hidden parameter
    with entries uniform in [-1, 1]; the parameter is returned in the
    TruthRecord.
    """
    spec = GenSpec(model=MODEL_CLICK, d=d, nnz=nnz_per_row, seed=seed)
    truth = draw_truth(spec)
    return gen_dataset(spec, truth, count), truth
