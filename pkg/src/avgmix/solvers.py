"""Local empirical-risk minimizers.

Four routes to a shard minimizer:

* closed-form least squares via the normal equations (the oracle path),
* damped Newton with an Armijo backtracking line search,
* projected stochastic gradient descent, one seeded pass over the shard,
* the two-stage pipeline: a short SGD burn-in followed by gradient
  descent run to the gradient tolerance.

All solvers are pure functions of (model, data, config); SGD visit order
comes from the config seed, never from global state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import losses
from .data import Dataset
from .errors import (
    DivergenceError,
    InvalidArgumentError,
    SingularMatrixError,
)
from .rng import TAG_SOLVER, derive_seed, make_generator

CLOSED_FORM_LS = "closed_form_ls"
NEWTON = "newton"
SGD = "sgd"
TWO_STAGE = "two_stage"

METHODS = (CLOSED_FORM_LS, NEWTON, SGD, TWO_STAGE)

SCHEDULE_C_OVER_LAMBDA_T = "c_over_lambda_t"
SCHEDULE_D_OVER_10_D_PLUS_T = "d_over_10_d_plus_t"

# Armijo line-search constants used by Newton damping and stage-2 descent.
ARMIJO_SLOPE = 0.3
ARMIJO_SHRINK = 0.5

# Dense Cholesky below this dimension, conjugate gradient above.
DENSE_HESSIAN_DIM = 512


@dataclass(frozen=True)
class SGDOptions:
    """Stepsize and projection settings for the SGD-based methods.

    radius None selects the default ball 10 |theta0| + 100; math.inf
    disables the projection entirely.  stage1_iters None lets the
    two-stage solver default to ceil(log(n)^2) burn-in steps; pass the
    global sample count rule explicitly when it is known.
    """

    c: float = 1.0
    lam: float = 1.0
    radius: float | None = None
    schedule: str = SCHEDULE_C_OVER_LAMBDA_T
    stage1_iters: int | None = None

    def __post_init__(self):
        if self.schedule not in (SCHEDULE_C_OVER_LAMBDA_T, SCHEDULE_D_OVER_10_D_PLUS_T):
            raise InvalidArgumentError(f"unknown schedule {self.schedule!r}")
        if self.schedule == SCHEDULE_C_OVER_LAMBDA_T:
            if self.c < 1.0:
                raise InvalidArgumentError("c >= 1 required for the c/(lam t) schedule")
            if self.lam <= 0.0:
                raise InvalidArgumentError("lam > 0 required for the c/(lam t) schedule")
        if self.radius is not None and not self.radius > 0:
            raise InvalidArgumentError("radius must be positive (or math.inf)")


@dataclass(frozen=True)
class SolverConfig:
    method: str = NEWTON
    grad_tol: float = 1e-10
    max_iter: int = 10000
    sgd: SGDOptions = field(default_factory=SGDOptions)
    seed: int = 0
    theta0: np.ndarray | None = None
    record_iterates: tuple[int, ...] = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown solver method {self.method!r}")
        if not self.grad_tol > 0:
            raise InvalidArgumentError("grad_tol must be positive")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be positive")


@dataclass
class LocalEstimate:
    """Result of one local solve with diagnostics."""

    theta: np.ndarray
    iterations: int
    final_grad_norm: float
    wall_time: float
    converged: bool
    notes: str = ""
    trace: dict[int, np.ndarray] | None = None


def _initial_theta(cfg: SolverConfig, d: int) -> np.ndarray:
    if cfg.theta0 is None:
        return np.zeros(d)
    theta0 = np.asarray(cfg.theta0, dtype=np.float64).ravel()
    if theta0.shape[0] != d:
        raise InvalidArgumentError(f"theta0 has length {theta0.shape[0]}, expected {d}")
    return theta0.copy()


def resolve_radius(opts: SGDOptions, theta0: np.ndarray) -> float:
    """Projection radius actually used: configured, or 10 |theta0| + 100."""
    if opts.radius is None:
        return 10.0 * float(np.linalg.norm(theta0)) + 100.0
    return float(opts.radius)


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the origin-centered ball of given radius."""
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return v
    return v * (radius / norm)


def solve_normal_equations(gram: np.ndarray, moment: np.ndarray, lam: float) -> np.ndarray:
    """Solve (gram + lam I) theta = moment by Cholesky.

    Raises SingularMatrixError naming the deficient rank when the
    unregularized system is singular.
    """
    gram = np.asarray(gram, dtype=np.float64)
    moment = np.asarray(moment, dtype=np.float64).ravel()
    d = gram.shape[0]
    A = gram + lam * np.eye(d)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        if lam == 0.0:
            raise SingularMatrixError(rank=int(np.linalg.matrix_rank(gram)), dim=d)
        L = np.linalg.cholesky(A + 1e-12 * np.eye(d))
    z = np.linalg.solve(L, moment)
    return np.linalg.solve(L.T, z)


def solve_closed_form_ls(data: Dataset, lam: float = 0.0) -> LocalEstimate:
    """Exact (ridge) least squares through the normal equations."""
    if lam < 0:
        raise InvalidArgumentError("lam must be nonnegative")
    t0 = time.perf_counter()
    n = len(data)
    if n == 0:
        raise InvalidArgumentError("empty dataset")
    gram = data.X.T @ data.X
    if sp.issparse(gram):
        gram = np.asarray(gram.todense())
    moment = np.asarray(data.X.T @ data.y).ravel()
    theta = solve_normal_equations(gram / n, moment / n, lam)
    # gradient of the solved objective (ridge term included when lam > 0)
    grad = np.asarray(data.X.T @ (np.asarray(data.X @ theta).ravel() - data.y)).ravel() / n
    grad = grad + lam * theta
    return LocalEstimate(
        theta=theta,
        iterations=1,
        final_grad_norm=float(np.linalg.norm(grad)),
        wall_time=time.perf_counter() - t0,
        converged=True,
    )


def _hessian_direction(model, theta, data, grad) -> tuple[np.ndarray, str]:
    """Newton direction -H^{-1} g; falls back to -g if the solve fails."""
    d = theta.shape[0]
    if d <= DENSE_HESSIAN_DIM:
        H = losses.empirical_risk_hessian(model, theta, data)
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            try:
                L = np.linalg.cholesky(H + 1e-12 * np.eye(d))
            except np.linalg.LinAlgError:
                return -grad, "hessian_solve_failed"
        p = -np.linalg.solve(L.T, np.linalg.solve(L, grad))
    else:
        p, ok = _conjugate_gradient(
            lambda v: losses.empirical_risk_hessvec(model, theta, data, v),
            grad,
            tol=1e-12,
            max_iter=10 * d,
        )
        if not ok:
            return -grad, "hessian_solve_failed"
        p = -p
    if float(p @ grad) >= 0.0:  # not a descent direction; fall back
        return -grad, "hessian_solve_failed"
    return p, ""


def _conjugate_gradient(matvec, b, tol, max_iter) -> tuple[np.ndarray, bool]:
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    threshold = max(tol * math.sqrt(float(b @ b)), 1e-300)
    for _ in range(max_iter):
        if math.sqrt(rs) <= threshold:
            return x, True
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            return x, False
        alpha = rs / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, math.sqrt(rs) <= threshold


def _backtrack(model, data, theta, value, grad, direction, step0=1.0):
    """Backtracking line search; returns (step, new_theta, new_value, moved).

    Primary test is Armijo sufficient decrease.  Near the minimizer the
    true decrease underflows the float64 resolution of the objective
    value, so whenever a candidate's value is indistinguishable from the
    current one, the step is instead accepted if it shrinks the gradient
    norm, which stays resolvable arbitrarily close to the optimum.
    Returns moved=False with theta unchanged when no acceptable step
    exists at any probed scale.
    """
    slope = float(grad @ direction)
    grad_norm = float(np.linalg.norm(grad))
    noise = 16.0 * np.finfo(float).eps * (abs(value) + 1e-300)
    step = step0
    for _ in range(60):
        candidate = theta + step * direction
        val = losses.empirical_risk(model, candidate, data)
        if val <= value + ARMIJO_SLOPE * step * slope and value - val > noise:
            return step, candidate, val, True
        if val <= value + noise:
            new_grad = losses.empirical_risk_gradient(model, candidate, data)
            if float(np.linalg.norm(new_grad)) < grad_norm:
                return step, candidate, min(val, value), True
        step *= ARMIJO_SHRINK
    return step, theta, value, False


def solve_newton(model, data: Dataset, cfg: SolverConfig) -> LocalEstimate:
    """Damped Newton iteration to the gradient tolerance."""
    t0 = time.perf_counter()
    theta = _initial_theta(cfg, model.d)
    value = losses.empirical_risk(model, theta, data)
    notes = []
    grad_norm = math.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = losses.empirical_risk_gradient(model, theta, data)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= cfg.grad_tol:
            return LocalEstimate(
                theta=theta,
                iterations=it - 1,
                final_grad_norm=grad_norm,
                wall_time=time.perf_counter() - t0,
                converged=True,
                notes=";".join(sorted(set(notes))),
            )
        direction, note = _hessian_direction(model, theta, data, grad)
        if note:
            notes.append(note)
        _, theta, value, moved = _backtrack(model, data, theta, value, grad, direction)
        if not np.isfinite(value) or not np.all(np.isfinite(theta)):
            raise DivergenceError("non-finite objective in Newton solve", iteration=it)
        if not moved:
            notes.append("line_search_stalled")
            break
    grad_norm = float(np.linalg.norm(losses.empirical_risk_gradient(model, theta, data)))
    return LocalEstimate(
        theta=theta,
        iterations=it,
        final_grad_norm=grad_norm,
        wall_time=time.perf_counter() - t0,
        converged=grad_norm <= cfg.grad_tol,
        notes=";".join(sorted(set(notes) | {"max_iter_exhausted"})),
    )


def _stepsize_fn(opts: SGDOptions, d: int):
    if opts.schedule == SCHEDULE_C_OVER_LAMBDA_T:
        c, lam = opts.c, opts.lam
        return lambda t: c / (lam * t)
    return lambda t: d / (10.0 * (d + t))


def _sgd_iterations(model, data, theta, steps, opts, seed, record=()):
    """Run `steps` projected SGD updates over a seeded shard permutation.

    Visits the permutation cyclically when steps exceeds the shard size.
    Returns (theta, trace) with trace capturing requested iterates.
    """
    n = len(data)
    order = make_generator(derive_seed(seed, TAG_SOLVER)).permutation(n)
    X = data.X
    if not sp.issparse(X):
        Xp = np.ascontiguousarray(X[order])
        rows = lambda i: Xp[i]  # noqa: E731
    else:
        Xcsr = X[order].tocsr()
        rows = lambda i: np.asarray(Xcsr[i].todense()).ravel()  # noqa: E731
    yp = data.y[order]
    eta = _stepsize_fn(opts, model.d)
    grad = losses.pointwise_gradient_fn(model)
    radius = resolve_radius(opts, theta)
    constrained = math.isfinite(radius)
    r2 = radius * radius
    trace = {}
    record = frozenset(record)
    for t in range(1, steps + 1):
        i = (t - 1) % n
        theta = theta - eta(t) * grad(theta, rows(i), yp[i])
        nrm2 = float(theta @ theta)
        if not math.isfinite(nrm2):
            raise DivergenceError("non-finite SGD iterate", iteration=t)
        if constrained and nrm2 > r2:
            theta = project_ball(theta, radius)
        if t in record:
            trace[t] = theta.copy()
    return theta, trace


def solve_sgd(model, data: Dataset, cfg: SolverConfig) -> LocalEstimate:
    """One pass of projected SGD: exactly n updates in seeded random order."""
    t0 = time.perf_counter()
    theta = _initial_theta(cfg, model.d)
    n = len(data)
    if n == 0:
        raise InvalidArgumentError("empty dataset")
    theta, trace = _sgd_iterations(
        model, data, theta, n, cfg.sgd, cfg.seed, cfg.record_iterates
    )
    grad_norm = float(np.linalg.norm(losses.empirical_risk_gradient(model, theta, data)))
    return LocalEstimate(
        theta=theta,
        iterations=n,
        final_grad_norm=grad_norm,
        wall_time=time.perf_counter() - t0,
        converged=True,
        trace=trace or None,
    )


def _gradient_descent(model, data, theta, cfg) -> tuple[np.ndarray, int, float, bool]:
    value = losses.empirical_risk(model, theta, data)
    step0 = 1.0
    for it in range(1, cfg.max_iter + 1):
        grad = losses.empirical_risk_gradient(model, theta, data)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= cfg.grad_tol:
            return theta, it - 1, grad_norm, True
        step, theta, value, moved = _backtrack(model, data, theta, value, grad, -grad, step0)
        if not np.isfinite(value) or not np.all(np.isfinite(theta)):
            raise DivergenceError("non-finite objective in gradient descent", iteration=it)
        if not moved:
            break
        step0 = min(step * 2.0, 1e8)  # warm-start next line search
    grad_norm = float(np.linalg.norm(losses.empirical_risk_gradient(model, theta, data)))
    return theta, cfg.max_iter, grad_norm, grad_norm <= cfg.grad_tol


def default_stage1_iters(n: int) -> int:
    """Burn-in budget when none is configured: ceil(log(n)^2)."""
    return int(math.ceil(math.log(max(n, 2)) ** 2))


def solve_two_stage(model, data: Dataset, cfg: SolverConfig) -> LocalEstimate:
    """SGD burn-in, then gradient descent to the gradient tolerance."""
    t0 = time.perf_counter()
    theta = _initial_theta(cfg, model.d)
    n = len(data)
    if n == 0:
        raise InvalidArgumentError("empty dataset")
    stage1 = cfg.sgd.stage1_iters
    if stage1 is None:
        stage1 = default_stage1_iters(n)
    if stage1 > 0:
        theta, _ = _sgd_iterations(model, data, theta, stage1, cfg.sgd, cfg.seed)
    theta, stage2, grad_norm, converged = _gradient_descent(model, data, theta, cfg)
    return LocalEstimate(
        theta=theta,
        iterations=stage1 + stage2,
        final_grad_norm=grad_norm,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        notes="" if converged else "max_iter_exhausted",
    )


def solve(model, data: Dataset, cfg: SolverConfig) -> LocalEstimate:
    """Dispatch on cfg.method."""
    if cfg.method == CLOSED_FORM_LS:
        if model.kind != losses.LEAST_SQUARES:
            raise InvalidArgumentError("closed_form_ls only applies to least squares")
        return solve_closed_form_ls(data, lam=0.0)
    if cfg.method == NEWTON:
        return solve_newton(model, data, cfg)
    if cfg.method == SGD:
        return solve_sgd(model, data, cfg)
    return solve_two_stage(model, data, cfg)


def with_seed(cfg: SolverConfig, seed: int) -> SolverConfig:
    return replace(cfg, seed=seed)
