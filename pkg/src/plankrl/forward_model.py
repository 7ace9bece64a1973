"""Multi-output GP forward model over state changes.

Seven independent GPs share the same (state, action) training rows; each
predicts the change of one observation dimension.  Predictions come back
as a diagonal Gaussian over the next state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp
from .domain import (
    ACTION_DIM,
    IDX_D,
    IDX_DELTA_D,
    INPUT_DIM,
    STATE_DIM,
    ActionBounds,
    GaussianState,
    Transition,
    as_action_array,
    as_state_array,
)
from .errors import ContractViolationError, FittingFailedError

MIN_TRAIN_TRANSITIONS = 10


@dataclass(frozen=True)
class ForwardModel:
    """One GP per state dimension, all sharing identical training inputs."""

    models: tuple[gp.GpModel, ...]

    def __post_init__(self):
        if len(self.models) != STATE_DIM:
            raise ContractViolationError(f"forward model needs {STATE_DIM} per-dimension GPs")

    @property
    def n(self) -> int:
        return self.models[0].n

    @property
    def train_inputs(self) -> np.ndarray:
        return self.models[0].inputs

    @classmethod
    def prior(cls, hyper: gp.Hyperparams | None = None, max_points: int = gp.DEFAULT_MAX_POINTS) -> "ForwardModel":
        if hyper is None:
            hyper = gp.Hyperparams(np.ones(INPUT_DIM), 1.0, 0.1)
        return cls(tuple(gp.GpModel.prior(hyper, max_points) for _ in range(STATE_DIM)))


def stack_transitions(transitions: list[Transition]) -> tuple[np.ndarray, np.ndarray]:
    """Rows of (s, a) inputs and the per-dimension state changes."""
    X = np.empty((len(transitions), INPUT_DIM))
    dY = np.empty((len(transitions), STATE_DIM))
    for i, tr in enumerate(transitions):
        s = tr.s.as_array()
        X[i, :STATE_DIM] = s
        X[i, STATE_DIM:] = tr.a.as_array()
        dY[i] = tr.s_next.as_array() - s
    return X, dY


def _init_hyper_for_dim(X: np.ndarray, targets: np.ndarray) -> gp.Hyperparams:
    # Lengthscales from input spread, signal from target spread, 10% noise.
    ls = np.std(X, axis=0)
    ls = np.where(ls > 1e-3, ls, 1.0)
    sf = float(np.std(targets))
    if not sf > 1e-6:
        sf = 1e-3
    return gp.Hyperparams(ls, sf, 0.1 * sf)


def train(
    transitions: list[Transition],
    init: gp.Hyperparams | None = None,
    restarts: int = gp.DEFAULT_RESTARTS,
    seed: int = 0,
    max_points: int = gp.DEFAULT_MAX_POINTS,
) -> ForwardModel:
    """Fit all seven per-dimension GPs on the recorded transitions."""
    if len(transitions) < MIN_TRAIN_TRANSITIONS:
        raise ContractViolationError(f"training needs at least {MIN_TRAIN_TRANSITIONS} transitions")
    X, dY = stack_transitions(transitions)
    models = []
    for dim in range(STATE_DIM):
        dim_init = init if init is not None else _init_hyper_for_dim(X, dY[:, dim])
        try:
            models.append(gp.fit(X, dY[:, dim], init=dim_init, restarts=restarts, seed=seed + dim, max_points=max_points))
        except FittingFailedError as err:
            raise FittingFailedError(f"forward model dimension {dim}: {err}") from err
    return ForwardModel(tuple(models))


def add_transitions(fm: ForwardModel, transitions: list[Transition]) -> ForwardModel:
    """Append rows to every per-dimension GP without refitting hyperparameters."""
    if not transitions:
        return fm
    X, dY = stack_transitions(transitions)
    return ForwardModel(tuple(gp.add_observations(m, X, dY[:, d]) for d, m in enumerate(fm.models)))


def refit(fm: ForwardModel, restarts: int = 1, seed: int = 0) -> ForwardModel:
    """Re-optimize hyperparameters on the current data, warm-started."""
    models = []
    for dim, m in enumerate(fm.models):
        try:
            models.append(
                gp.fit(m.inputs, m.targets, init=m.hyper, restarts=restarts, seed=seed + dim, max_points=m.max_points)
            )
        except FittingFailedError as err:
            raise FittingFailedError(f"forward model dimension {dim}: {err}") from err
    return ForwardModel(tuple(models))


def predict(fm: ForwardModel, s, a) -> GaussianState:
    """Diagonal Gaussian over the next observed state for a state-action pair.

    Variances are predictive: the fitted noise variance is added to the
    posterior variance, since the next observation carries the sensor and
    partner stochasticity that the noise hyperparameter absorbed during
    training.  The redundant goal-distance dimension is recomputed from the
    predicted ball position (the goal is recovered from the queried state)
    so the two cannot drift apart.
    """
    sv = as_state_array(s)
    av = as_action_array(a)
    x = np.concatenate([sv, av])
    mean = np.empty(STATE_DIM)
    var = np.empty(STATE_DIM)
    for dim, m in enumerate(fm.models):
        mu, v = gp.posterior(m, x)
        mean[dim] = sv[dim] + mu
        var[dim] = v + m.hyper.noise_std**2
    goal = sv[IDX_D] - sv[IDX_DELTA_D]
    mean[IDX_DELTA_D] = mean[IDX_D] - goal
    var[IDX_DELTA_D] = var[IDX_D]
    return GaussianState(mean, var)


def relevance(fm: ForwardModel) -> np.ndarray:
    """7x10 table of input relevances (inverse squared lengthscales).

    Each row is normalized by its maximum, so entries live in (0, 1] and the
    most relevant input of every output dimension scores 1.
    """
    table = np.empty((STATE_DIM, INPUT_DIM))
    for dim, m in enumerate(fm.models):
        table[dim] = 1.0 / m.hyper.lengthscales**2
    return table / table.max(axis=1, keepdims=True)


def rollout(
    fm: ForwardModel,
    s0,
    policy,
    steps: int,
    seed: int = 0,
    bounds: ActionBounds | None = None,
) -> list[tuple[GaussianState, np.ndarray]]:
    """Simulate forward by feeding each predicted mean back into the policy.

    ``policy(state_vector, rng) -> action`` is called once per step with a
    generator seeded from ``seed``, so the rollout is reproducible.
    """
    if steps < 1:
        raise ContractViolationError("rollout needs steps >= 1")
    rng = np.random.default_rng(seed)
    s = as_state_array(s0)
    out = []
    for _ in range(steps):
        a = as_action_array(policy(s, rng))
        if bounds is not None and not bounds.contains(a):
            raise ContractViolationError(f"policy returned out-of-bounds action {a}")
        g = predict(fm, s, a)
        out.append((g, a))
        s = g.mean
    return out
