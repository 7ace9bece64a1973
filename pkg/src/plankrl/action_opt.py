"""Uncertainty-aware action selection over the Q-function.

The policy minimizes the upper-confidence objective m - delta * sigma of
the Q posterior.  Actions live in a symmetric box; a sigmoid
reparameterization maps unbounded optimizer variables onto the open box,
and Rprop with central-difference gradients does the minimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import gp
from .domain import ACTION_DIM, STATE_DIM, Action, ActionBounds, as_action_array, as_state_array
from .errors import ContractViolationError, GradientEvaluationError, OptimizationFailedError
from .qlearner import QModel

# Keep optimizer iterates where tanh is still strictly below 1 in float64;
# past this the transform is flat and larger alphas only break the strict
# in-bounds guarantee through saturation.
ALPHA_LIMIT = 30.0


@dataclass(frozen=True)
class UcbConfig:
    """Weights and Rprop constants for the action search.

    delta is signed exactly as in the acquisition m - delta * sigma, so the
    default -0.5 *adds* half a standard deviation to the minimized
    objective, i.e. penalizes uncertain actions.
    """

    delta: float = -0.5
    restarts: int = 5
    max_iters: int = 100
    grad_step: float = 1e-4
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    step_init: float = 0.1
    step_min: float = 1e-6
    step_max: float = 5.0

    def __post_init__(self):
        if self.restarts < 1:
            raise ContractViolationError("restarts must be >= 1")
        if not (self.grad_step > 0 and self.step_init > 0 and self.step_min > 0 and self.step_max > 0):
            raise ContractViolationError("step sizes must be positive")
        if not self.eta_plus > 1 > self.eta_minus > 0:
            raise ContractViolationError("need eta_plus > 1 > eta_minus > 0")


def q_ucb(q: QModel, s, a, delta: float) -> float:
    """Posterior mean minus delta times posterior standard deviation."""
    return float(q_ucb_batch(q, s, as_action_array(a).reshape(1, -1), delta)[0])


def q_ucb_batch(q: QModel, s, actions: np.ndarray, delta: float) -> np.ndarray:
    """q_ucb for each row of ``actions`` at a fixed state."""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    sv = as_state_array(s)
    X = np.empty((actions.shape[0], STATE_DIM + ACTION_DIM))
    X[:, :STATE_DIM] = sv
    X[:, STATE_DIM:] = actions
    mean, var = gp.posterior_batch(q.gp, X)
    return mean - delta * np.sqrt(var)


def bound_transform(alpha, bounds: ActionBounds) -> np.ndarray:
    """Map unbounded variables onto the open action box.

    a_j = xi_j * (1 - exp(-alpha_j)) / (1 + exp(-alpha_j)), evaluated as
    tanh(alpha/2) for stability; odd, strictly increasing, saturating at
    +-xi_j.
    """
    alpha = np.asarray(alpha, dtype=float)
    return bounds.xi * np.tanh(alpha / 2.0)


def inverse_bound_transform(a, bounds: ActionBounds) -> np.ndarray:
    """Inverse of bound_transform; defined for strictly interior actions."""
    v = as_action_array(a)
    r = v / bounds.xi
    if np.any(np.abs(r) >= 1.0):
        raise ContractViolationError(f"action {v} is not strictly inside the bounds")
    return 2.0 * np.arctanh(r)


def numeric_gradient(f, alpha, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of alpha."""
    if step <= 0:
        raise ContractViolationError("finite-difference step must be positive")
    alpha = np.asarray(alpha, dtype=float)
    grad = np.empty_like(alpha)
    for j in range(alpha.size):
        e = np.zeros_like(alpha)
        e[j] = step
        fp, fm = f(alpha + e), f(alpha - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientEvaluationError(f"objective non-finite near {alpha}")
        grad[j] = (fp - fm) / (2.0 * step)
    return grad


def _numeric_gradient_batch(f_batch, alpha: np.ndarray, step: float) -> np.ndarray:
    """Same central differences, but with all 2*D probes in one batched call."""
    probes = np.repeat(alpha.reshape(1, -1), 2 * alpha.size, axis=0)
    for j in range(alpha.size):
        probes[2 * j, j] += step
        probes[2 * j + 1, j] -= step
    values = f_batch(probes)
    if not np.all(np.isfinite(values)):
        raise GradientEvaluationError(f"objective non-finite near {alpha}")
    return (values[0::2] - values[1::2]) / (2.0 * step)


def _rprop_minimize(f_batch, start: np.ndarray, cfg: UcbConfig) -> tuple[np.ndarray, float]:
    """Sign-based Rprop descent; returns the best point seen, not the last.

    Each iteration evaluates the current point and all 2*D central-difference
    probes in a single batched objective call.
    """
    d = start.size
    x = start.astype(float).copy()
    best_x = x.copy()
    best_f = np.inf
    step = np.full(d, cfg.step_init)
    prev_grad = np.zeros(d)
    prev_move = np.zeros(d)
    for _ in range(cfg.max_iters):
        probes = np.repeat(x.reshape(1, -1), 2 * d + 1, axis=0)
        for j in range(d):
            probes[2 * j + 1, j] += cfg.grad_step
            probes[2 * j + 2, j] -= cfg.grad_step
        values = f_batch(probes)
        if not np.all(np.isfinite(values)):
            raise GradientEvaluationError(f"objective non-finite near {x}")
        if values[0] < best_f:
            best_f, best_x = float(values[0]), x.copy()
        grad = (values[1::2] - values[2::2]) / (2.0 * cfg.grad_step)
        sign_product = grad * prev_grad
        grew = sign_product > 0
        flipped = sign_product < 0
        step[grew] = np.minimum(step[grew] * cfg.eta_plus, cfg.step_max)
        step[flipped] = np.maximum(step[flipped] * cfg.eta_minus, cfg.step_min)
        move = -np.sign(grad) * step
        # Sign flip means the minimum was overstepped: retract that move and
        # skip its adaptation next round.
        move[flipped] = -prev_move[flipped]
        grad[flipped] = 0.0
        x = np.clip(x + move, -ALPHA_LIMIT, ALPHA_LIMIT)
        prev_grad, prev_move = grad, move
        if np.max(step) <= cfg.step_min:
            break
    fx = float(f_batch(x.reshape(1, -1))[0])
    if fx < best_f:
        best_f, best_x = fx, x.copy()
    return best_x, best_f


def halton_actions(n: int, bounds: ActionBounds) -> np.ndarray:
    """Deterministic low-discrepancy grid of n strictly in-bounds actions."""
    sampler = qmc.Halton(d=ACTION_DIM, scramble=False)
    sampler.fast_forward(1)  # first unscrambled sample is the box corner
    u = sampler.random(n)
    return (2.0 * u - 1.0) * bounds.xi


def optimize_action(
    q: QModel,
    s,
    cfg: UcbConfig,
    bounds: ActionBounds,
    seed: int = 0,
    objective=None,
) -> Action:
    """Minimize q_ucb over the action box via Rprop in the unbounded space.

    Starts from alpha = 0 plus (restarts - 1) seeded random draws, keeps the
    best candidate across starts and iterations.  ``objective`` may replace
    the default q_ucb closure (same signature: batch of actions -> values).
    """
    if objective is None:
        def objective(actions):
            return q_ucb_batch(q, s, actions, cfg.delta)

    def f_batch(alphas):
        return objective(bound_transform(alphas, bounds))

    rng = np.random.default_rng(seed)
    starts = [np.zeros(ACTION_DIM)]
    starts += [rng.normal(scale=1.5, size=ACTION_DIM) for _ in range(cfg.restarts - 1)]
    best_alpha, best_f = None, np.inf
    failures = []
    for i, start in enumerate(starts):
        try:
            alpha, fval = _rprop_minimize(f_batch, start, cfg)
        except GradientEvaluationError as err:
            failures.append(f"restart {i}: {err}")
            continue
        if fval < best_f:
            best_f, best_alpha = fval, alpha
    if best_alpha is None:
        raise OptimizationFailedError(f"all {cfg.restarts} restarts failed: {failures}")
    return Action.from_array(bound_transform(best_alpha, bounds))
