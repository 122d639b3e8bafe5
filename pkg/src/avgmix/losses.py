"""Loss families: value, gradient, and Hessian evaluation.

Three instantaneous losses are supported, each convex in the parameter:

* ``least_squares``      f(t; x, y) = (1/2) (<t, x> - y)^2
* ``ridge_logistic``     f(t; x, y) = log(1 + exp(-y <t, x>)) + (lam/2) |t|^2
* ``pathological_1d``    the 1-d loss with a discontinuous second
  derivative, defined on Bernoulli features x in {0, 1}:
  f(t; 0) = t^2 - t  and  f(t; 1) = t^2 [t <= 0] + t.

The ridge term is part of the per-sample loss, so the empirical risk of
the logistic model is the mean of regularized per-sample losses.  All
functions are pure; parameter vectors are plain float64 ndarrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset, Sample
from .errors import DimensionMismatchError, InvalidArgumentError, InvalidSampleError

LEAST_SQUARES = "least_squares"
RIDGE_LOGISTIC = "ridge_logistic"
PATHOLOGICAL_1D = "pathological_1d"

KINDS = (LEAST_SQUARES, RIDGE_LOGISTIC, PATHOLOGICAL_1D)


@dataclass(frozen=True)
class LossModel:
    """A loss family over a fixed parameter dimension.

    Parameters
    ----------
    kind : str
        One of ``least_squares``, ``ridge_logistic``, ``pathological_1d``.
    d : int
        Parameter dimension; forced to 1 for the pathological loss.
    lam : float
        Ridge weight for ``ridge_logistic`` (>= 0, ignored otherwise).
    """

    kind: str
    d: int
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown loss kind {self.kind!r}")
        if self.d < 1:
            raise InvalidArgumentError("dimension must be positive")
        if self.kind == PATHOLOGICAL_1D and self.d != 1:
            raise InvalidArgumentError("pathological loss is one-dimensional")
        if self.lam < 0:
            raise InvalidArgumentError("ridge weight must be nonnegative")


def least_squares(d: int) -> LossModel:
    return LossModel(LEAST_SQUARES, d)


def ridge_logistic(d: int, lam: float) -> LossModel:
    return LossModel(RIDGE_LOGISTIC, d, lam)


def pathological_1d() -> LossModel:
    return LossModel(PATHOLOGICAL_1D, 1)


def _check_theta(model: LossModel, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.shape[0] != model.d:
        raise DimensionMismatchError(
            f"parameter has length {theta.shape[0]}, model dimension is {model.d}"
        )
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("parameter vector has non-finite entries")
    return theta


def _check_sample(model: LossModel, s: Sample) -> Sample:
    if s.features.shape[0] != model.d:
        raise DimensionMismatchError(
            f"sample has {s.features.shape[0]} features, model dimension is {model.d}"
        )
    if model.kind == PATHOLOGICAL_1D and s.features[0] not in (0.0, 1.0):
        raise InvalidSampleError(
            f"pathological feature must be 0 or 1, got {s.features[0]}"
        )
    if model.kind == RIDGE_LOGISTIC and s.target not in (-1.0, 1.0):
        raise InvalidSampleError(f"logistic target must be +-1, got {s.target}")
    return s


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_value(model: LossModel, theta: np.ndarray, s: Sample) -> float:
    """Instantaneous loss f(theta; s)."""
    theta = _check_theta(model, theta)
    _check_sample(model, s)
    if model.kind == LEAST_SQUARES:
        return 0.5 * float(theta @ s.features - s.target) ** 2
    if model.kind == RIDGE_LOGISTIC:
        margin = s.target * float(theta @ s.features)
        # log(1 + exp(-margin)) without overflow for large |margin|
        return float(np.logaddexp(0.0, -margin)) + 0.5 * model.lam * float(
            theta @ theta
        )
    t = float(theta[0])
    if s.features[0] == 0.0:
        return t * t - t
    return (t * t if t <= 0.0 else 0.0) + t


def loss_gradient(model: LossModel, theta: np.ndarray, s: Sample) -> np.ndarray:
    """Gradient of `loss_value` in theta.

    At the pathological kink (theta=0, x=1) the right derivative is
    returned; the two one-sided derivatives coincide there anyway.
    """
    theta = _check_theta(model, theta)
    _check_sample(model, s)
    if model.kind == LEAST_SQUARES:
        return (float(theta @ s.features) - s.target) * s.features
    if model.kind == RIDGE_LOGISTIC:
        margin = s.target * float(theta @ s.features)
        return (-s.target * (1.0 - sigmoid(margin))) * s.features + model.lam * theta
    t = float(theta[0])
    if s.features[0] == 0.0:
        return np.array([2.0 * t - 1.0])
    return np.array([(2.0 * t if t <= 0.0 else 0.0) + 1.0])


def loss_hessian(model: LossModel, theta: np.ndarray, s: Sample) -> np.ndarray:
    """Hessian of `loss_value`; symmetric d x d matrix.

    The pathological Hessian is 2 for x=0 and 2*[theta <= 0] for x=1; it
    is discontinuous at 0 by construction.
    """
    theta = _check_theta(model, theta)
    _check_sample(model, s)
    if model.kind == LEAST_SQUARES:
        return np.outer(s.features, s.features)
    if model.kind == RIDGE_LOGISTIC:
        p = float(sigmoid(float(theta @ s.features)))
        return p * (1.0 - p) * np.outer(s.features, s.features) + model.lam * np.eye(
            model.d
        )
    t = float(theta[0])
    if s.features[0] == 0.0:
        return np.array([[2.0]])
    return np.array([[2.0 if t <= 0.0 else 0.0]])


def _check_data(model: LossModel, data: Dataset) -> None:
    if len(data) == 0:
        raise InvalidArgumentError("empty dataset")
    if data.d != model.d:
        raise DimensionMismatchError(
            f"dataset dimension {data.d} != model dimension {model.d}"
        )


def _margins(theta: np.ndarray, data: Dataset) -> np.ndarray:
    return np.asarray(data.X @ theta).ravel()


def empirical_risk(model: LossModel, theta: np.ndarray, data: Dataset) -> float:
    """Mean of per-sample losses over the dataset."""
    theta = _check_theta(model, theta)
    _check_data(model, data)
    if model.kind == LEAST_SQUARES:
        r = _margins(theta, data) - data.y
        return 0.5 * float(r @ r) / len(data)
    if model.kind == RIDGE_LOGISTIC:
        margins = data.y * _margins(theta, data)
        return float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * model.lam * float(
            theta @ theta
        )
    t = float(theta[0])
    x = np.asarray(data.X).ravel()
    n0 = float(np.sum(x == 0.0))
    n1 = len(data) - n0
    f0 = t * t - t
    f1 = (t * t if t <= 0.0 else 0.0) + t
    return (n0 * f0 + n1 * f1) / len(data)


def empirical_risk_gradient(
    model: LossModel, theta: np.ndarray, data: Dataset
) -> np.ndarray:
    """Mean of per-sample gradients."""
    theta = _check_theta(model, theta)
    _check_data(model, data)
    n = len(data)
    if model.kind == LEAST_SQUARES:
        r = _margins(theta, data) - data.y
        return np.asarray(data.X.T @ r).ravel() / n
    if model.kind == RIDGE_LOGISTIC:
        margins = data.y * _margins(theta, data)
        w = -data.y * (1.0 - sigmoid(margins))
        return np.asarray(data.X.T @ w).ravel() / n + model.lam * theta
    t = float(theta[0])
    x = np.asarray(data.X).ravel()
    n0 = float(np.sum(x == 0.0))
    n1 = n - n0
    g0 = 2.0 * t - 1.0
    g1 = (2.0 * t if t <= 0.0 else 0.0) + 1.0
    return np.array([(n0 * g0 + n1 * g1) / n])


def empirical_risk_hessian(
    model: LossModel, theta: np.ndarray, data: Dataset
) -> np.ndarray:
    """Mean of per-sample Hessians, materialized as a dense d x d matrix."""
    theta = _check_theta(model, theta)
    _check_data(model, data)
    n = len(data)
    if model.kind == LEAST_SQUARES:
        H = data.X.T @ data.X / n
        return np.asarray(H.todense()) if sp.issparse(H) else np.asarray(H)
    if model.kind == RIDGE_LOGISTIC:
        p = sigmoid(_margins(theta, data))
        w = p * (1.0 - p)
        if data.is_sparse():
            Xw = data.X.multiply(w[:, None]).tocsr()
            H = np.asarray((data.X.T @ Xw).todense()) / n
        else:
            H = data.X.T @ (data.X * w[:, None]) / n
        return H + model.lam * np.eye(model.d)
    t = float(theta[0])
    x = np.asarray(data.X).ravel()
    n0 = float(np.sum(x == 0.0))
    n1 = n - n0
    h1 = 2.0 if t <= 0.0 else 0.0
    return np.array([[(n0 * 2.0 + n1 * h1) / n]])


def empirical_risk_hessvec(
    model: LossModel, theta: np.ndarray, data: Dataset, v: np.ndarray
) -> np.ndarray:
    """Hessian-vector product without materializing the Hessian."""
    theta = _check_theta(model, theta)
    _check_data(model, data)
    v = np.asarray(v, dtype=np.float64).ravel()
    n = len(data)
    if model.kind == LEAST_SQUARES:
        return np.asarray(data.X.T @ np.asarray(data.X @ v).ravel()).ravel() / n
    if model.kind == RIDGE_LOGISTIC:
        p = sigmoid(_margins(theta, data))
        w = p * (1.0 - p)
        Xv = np.asarray(data.X @ v).ravel()
        return np.asarray(data.X.T @ (w * Xv)).ravel() / n + model.lam * v
    return empirical_risk_hessian(model, theta, data) @ v


def pointwise_gradient_fn(model: LossModel):
    """Return grad(theta, x_row, target) on raw arrays, for SGD inner loops.

    Skips per-call validation; callers guarantee dimensions.
    """
    if model.kind == LEAST_SQUARES:

        def grad(theta, x, y):
            return (x @ theta - y) * x

    elif model.kind == RIDGE_LOGISTIC:
        lam = model.lam

        def grad(theta, x, y):
            margin = y * (x @ theta)
            if margin >= 0:
                s = 1.0 / (1.0 + np.exp(-margin))
            else:
                e = np.exp(margin)
                s = e / (1.0 + e)
            return (-y * (1.0 - s)) * x + lam * theta

    else:

        def grad(theta, x, y):
            t = theta[0]
            if x[0] == 0.0:
                return np.array([2.0 * t - 1.0])
            return np.array([(2.0 * t if t <= 0.0 else 0.0) + 1.0])

    return grad
