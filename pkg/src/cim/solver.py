"""Non-negative ell1-regularized least squares via operator splitting.

Solves

    min_s  ||x - D s||_2^2 + 2*alpha*sum_k s_k     s.t.  s_k >= 0

by alternating three updates: a ridge step on the fitting term through the
cached Cholesky factorization of (D^T D + rho*I), a shifted soft-threshold
clamped at zero on the split variable q, and a multiplier ascent step of
size theta (theta defaults to rho, the standard dual step). The reported
weights are the q iterate, which is non-negative exactly by construction
of the clamp; s only approaches the constraint set.

Everything here is pure and deterministic: identical inputs and config
produce bit-identical outputs. Solves over a batch of images may run
concurrently, but the update sequence within one solve is inherently
serial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InstanceTooLarge, NonFiniteIterate, ShapeMismatch, SingularSystem
from .tensor_io import FeatureVector

ORACLE_MAX_CHANNELS = 16

# Weights at most this far from zero count as inactive when classifying
# stationarity conditions.
ACTIVITY_EPS = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the splitting scheme.

    theta=None means "use rho", the conventional dual ascent step.
    """

    alpha: float = 0.1
    rho: float = 1.0
    theta: float | None = None
    max_iters: int = 1000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.rho <= 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.theta is not None and self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be > 0")

    @property
    def dual_step(self) -> float:
        return self.rho if self.theta is None else self.theta


@dataclass(frozen=True)
class SolverState:
    """Iterates and residuals at one point of the update sequence."""

    s: np.ndarray
    q: np.ndarray
    m: np.ndarray
    iteration: int
    primal_residual: float
    dual_residual: float


@dataclass(frozen=True)
class WeightVector:
    """Solved per-channel weights; every entry is >= 0 exactly."""

    weights: np.ndarray
    converged: bool
    iterations_used: int
    final_objective: float

    def __len__(self) -> int:
        return self.weights.shape[0]


def _as_vector(x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return x.data
    if isinstance(x, WeightVector):
        return x.weights
    return np.asarray(x, dtype=np.float64)


def _check_instance(D, x) -> tuple[np.ndarray, np.ndarray]:
    D = np.asarray(D, dtype=np.float64)
    x = _as_vector(x)
    if D.ndim != 2:
        raise ShapeMismatch(f"dictionary must be a matrix, got shape {D.shape}")
    if x.ndim != 1 or x.shape[0] != D.shape[0]:
        raise ShapeMismatch(
            f"dictionary rows {D.shape[0]} != vector dim {x.shape[0] if x.ndim == 1 else x.shape}")
    if not np.isfinite(D).all() or not np.isfinite(x).all():
        raise NonFiniteIterate("dictionary or target contains NaN/Inf")
    return D, x


def objective(D, x, s, alpha: float) -> float:
    """||x - D s||_2^2 + 2*alpha*||s||_1."""
    D, x = _check_instance(D, x)
    s = _as_vector(s)
    if s.shape[0] != D.shape[1]:
        raise ShapeMismatch(f"weights length {s.shape[0]} != columns {D.shape[1]}")
    r = x - D @ s
    return float(r @ r + 2.0 * alpha * np.sum(np.abs(s)))


def kkt_violation(D, x, s, alpha: float, activity_eps: float = ACTIVITY_EPS) -> float:
    """Stationarity certificate for the non-negative problem; 0 at an optimum.

    With g = 2 D^T (D s - x) + 2*alpha*1, an optimum has g_k = 0 on active
    coordinates (s_k > activity_eps) and g_k >= 0 on the rest. Returns the
    largest violation of those conditions.
    """
    D, x = _check_instance(D, x)
    s = _as_vector(s)
    if s.shape[0] != D.shape[1]:
        raise ShapeMismatch(f"weights length {s.shape[0]} != columns {D.shape[1]}")
    g = 2.0 * (D.T @ (D @ s - x)) + 2.0 * alpha
    active = s > activity_eps
    viol = 0.0
    if active.any():
        viol = float(np.abs(g[active]).max())
    if (~active).any():
        viol = max(viol, float(np.maximum(-g[~active], 0.0).max()))
    return viol


def solve(D, x, cfg: SolverConfig = SolverConfig(), full_output: bool = False):
    """Fit non-negative sparse channel weights.

    Returns a WeightVector; with full_output=True returns
    (WeightVector, SolverState, trace) where trace is the per-iteration
    list of (primal_residual, dual_residual).

    Terminates once primal_residual <= tol_primal and
    dual_residual <= tol_dual, or at max_iters with converged=False.
    """
    D, x = _check_instance(D, x)
    k = D.shape[1]
    alpha, rho, theta = cfg.alpha, cfg.rho, cfg.dual_step

    # rho > 0 makes the Gram system positive definite whatever rank D has
    # (dim = H*W can be smaller than K on late layers); factor it once.
    gram = D.T @ D + rho * np.eye(k)
    try:
        fac = cho_factor(gram, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystem(f"Gram factorization failed: {exc}") from exc

    dtx = D.T @ x
    s = np.zeros(k)
    q = np.zeros(k)
    m = np.zeros(k)
    shift = alpha / rho

    trace: list[tuple[float, float]] = []
    converged = False
    iteration = 0
    primal = dual = np.inf
    for iteration in range(1, cfg.max_iters + 1):
        s = cho_solve(fac, dtx + rho * q - m, check_finite=False)
        q_prev = q
        q = np.maximum(s + m / rho - shift, 0.0)
        m = m + theta * (s - q)

        primal = float(np.linalg.norm(s - q))
        dual = float(rho * np.linalg.norm(q - q_prev))
        if full_output:
            trace.append((primal, dual))
        if not np.isfinite(primal) or not np.isfinite(dual):
            raise NonFiniteIterate(f"iterates diverged at iteration {iteration}")
        if primal <= cfg.tol_primal and dual <= cfg.tol_dual:
            converged = True
            break

    result = WeightVector(
        weights=q,
        converged=converged,
        iterations_used=iteration,
        final_objective=objective(D, x, q, alpha),
    )
    if not full_output:
        return result
    state = SolverState(s=s, q=q, m=m, iteration=iteration,
                        primal_residual=primal, dual_residual=dual)
    return result, state, trace


def oracle_solve(D, x, alpha: float, *, restarts: int = 8,
                 kkt_tol: float = 1e-10, max_sweeps: int = 200_000,
                 seed: int = 0) -> WeightVector:
    """Ground-truth solver for small instances, used in tests only.

    Projected cyclic coordinate descent run until the stationarity
    violation drops below kkt_tol, repeated from several random starting
    points. The problem is convex, so every restart must land on the same
    objective; a disagreement raises rather than returning a wrong answer.
    """
    D, x = _check_instance(D, x)
    k = D.shape[1]
    if k > ORACLE_MAX_CHANNELS:
        raise InstanceTooLarge(
            f"oracle accepts at most {ORACLE_MAX_CHANNELS} columns, got {k}")

    col_sq = np.einsum("ij,ij->j", D, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(col_sq > 0, (D.T @ x) / np.where(col_sq > 0, col_sq, 1.0), 0.0)
    start_scale = 1.0 + max(0.0, float(ratios.max(initial=0.0)))

    rng = np.random.default_rng(seed)
    best_s = None
    best_obj = np.inf
    objs = []
    total_sweeps = 0
    for restart in range(restarts):
        s = np.zeros(k) if restart == 0 else rng.uniform(0.0, start_scale, size=k)
        for _ in range(max_sweeps):
            total_sweeps += 1
            resid = x - D @ s
            for j in range(k):
                if col_sq[j] == 0.0:
                    continue
                step = (D[:, j] @ resid - alpha) / col_sq[j]
                new = s[j] + step
                if new < 0.0:
                    new = 0.0
                delta = new - s[j]
                if delta != 0.0:
                    resid = resid - delta * D[:, j]
                    s[j] = new
            if kkt_violation(D, x, s, alpha) <= kkt_tol:
                break
        else:
            raise RuntimeError("oracle failed to reach the requested stationarity")
        obj = objective(D, x, s, alpha)
        objs.append(obj)
        if obj < best_obj:
            best_obj, best_s = obj, s.copy()

    spread = max(objs) - min(objs)
    if spread > 1e-8 * max(1.0, abs(best_obj)):
        raise RuntimeError(f"restarts disagree on the objective by {spread}")

    return WeightVector(weights=best_s, converged=True,
                        iterations_used=total_sweeps, final_objective=best_obj)
