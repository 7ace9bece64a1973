"""GP-represented action-value function and its probabilistic update.

The Q-function is a zero-mean GP over (state, action) rows.  Updates are
Bellman-style assignments whose immediate-cost and bootstrap terms are
expectations over the forward model's Gaussian next-state prediction; both
expectations have closed forms for the SE-ARD kernel, so no sampling is
involved anywhere in the update path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import forward_model as fwd
from . import gp
from .domain import (
    ACTION_DIM,
    INPUT_DIM,
    STATE_DIM,
    ActionBounds,
    GaussianState,
    Transition,
    as_action_array,
    as_state_array,
)
from .errors import ContractViolationError

MATCH_TOLERANCE = 1e-9

# Bellman and immediate-cost targets are intrinsically noisy; fitting the
# Q-function with a lower noise floor than this turns it into an erratic
# interpolator whose UCB is meaningless.
Q_NOISE_FLOOR = 0.05


@dataclass(frozen=True)
class CostSpec:
    """Diagonal quadratic cost: sum_i weights[i] * (s_i - target[i])^2."""

    weights: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        t = np.asarray(self.target, dtype=float).reshape(-1)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "target", t)
        if w.size != STATE_DIM or t.size != STATE_DIM:
            raise ContractViolationError("cost spec needs 7 weights and 7 targets")
        if np.any(w < 0):
            raise ContractViolationError("cost weights must be non-negative")

    @classmethod
    def position_only(cls) -> "CostSpec":
        """Penalize goal distance and ball velocity: weights 1.0 and 0.2."""
        w = np.zeros(STATE_DIM)
        w[3], w[5] = 1.0, 0.2
        return cls(w, np.zeros(STATE_DIM))

    @classmethod
    def with_force(cls, force_weight: float = 0.01) -> "CostSpec":
        """position_only plus a penalty on the interaction force."""
        base = cls.position_only()
        w = base.weights.copy()
        w[6] = force_weight
        return cls(w, base.target)


def state_cost(s, spec: CostSpec) -> float:
    """Plain quadratic cost of a concrete observation."""
    diff = as_state_array(s) - spec.target
    return float(np.dot(spec.weights, diff * diff))


def expected_cost(g: GaussianState, spec: CostSpec) -> float:
    """Expectation of the quadratic cost under a diagonal Gaussian state."""
    diff = g.mean - spec.target
    return float(np.dot(spec.weights, diff * diff) + np.dot(spec.weights, g.var))


@dataclass(frozen=True)
class QModel:
    """Q-function GP plus the discount and cost it was trained for."""

    gp: gp.GpModel
    gamma: float
    cost: CostSpec

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolationError("gamma must be in [0, 1)")
        if self.gp.n and self.gp.dim != INPUT_DIM:
            raise ContractViolationError("Q-function GP must live on (state, action) inputs")


def expected_q(q: QModel, g: GaussianState, a) -> float:
    """Analytic expectation of the GP posterior mean over the Gaussian state.

    Augments the query with the action (zero variance on the action block);
    collapses to the plain posterior mean when all variances are zero, and
    to zero for an empty model.
    """
    return float(expected_q_batch(q, g, as_action_array(a).reshape(1, -1))[0])


def expected_q_batch(q: QModel, g: GaussianState, actions: np.ndarray) -> np.ndarray:
    """expected_q evaluated for each row of ``actions`` (M,3)."""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    m = actions.shape[0]
    if q.gp.n == 0:
        return np.zeros(m)
    ell2 = q.gp.hyper.lengthscales**2
    sf2 = q.gp.hyper.signal_std**2
    var_aug = np.concatenate([g.var, np.zeros(ACTION_DIM)])
    prefactor = float(np.prod(var_aug / ell2 + 1.0) ** -0.5)
    denom = var_aug + ell2
    X = q.gp.inputs
    state_part = np.einsum(
        "nd,d->n", (X[:, :STATE_DIM] - g.mean) ** 2, 1.0 / denom[:STATE_DIM]
    )
    action_diff = X[:, None, STATE_DIM:] - actions[None, :, :]
    action_part = np.einsum("nmd,d->nm", action_diff**2, 1.0 / denom[STATE_DIM:])
    L = sf2 * np.exp(-0.5 * (state_part[:, None] + action_part))
    return prefactor * (q.gp.alpha @ L)


def min_expected_q(q: QModel, g: GaussianState, action_candidates: np.ndarray) -> tuple[np.ndarray, float]:
    """Best candidate action and its expected Q under the Gaussian state."""
    candidates = np.atleast_2d(np.asarray(action_candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ContractViolationError("need at least one action candidate")
    values = expected_q_batch(q, g, candidates)
    best = int(np.argmin(values))
    return candidates[best], float(values[best])


def q_update(q: QModel, s, a, g_next: GaussianState, action_candidates) -> QModel:
    """One Bellman assignment for the pair (s, a).

    target = E[cost(s')] + gamma * min_a' E[Q(s', a')].  A row whose input
    already matches (s, a) within 1e-9 is overwritten instead of appended,
    because the update is an assignment and duplicates hurt conditioning.
    """
    bootstrap = 0.0
    if q.gamma > 0.0 and q.gp.n > 0:
        _, bootstrap = min_expected_q(q, g_next, action_candidates)
    target = expected_cost(g_next, q.cost) + q.gamma * bootstrap
    x = np.concatenate([as_state_array(s), as_action_array(a)])
    if q.gp.n:
        gaps = np.max(np.abs(q.gp.inputs - x), axis=1)
        row = int(np.argmin(gaps))
        if gaps[row] < MATCH_TOLERANCE:
            return replace(q, gp=gp.replace_observation(q.gp, row, target))
    return replace(q, gp=gp.add_observations(q.gp, x.reshape(1, -1), np.array([target])))


def init_q(
    fm: fwd.ForwardModel,
    seed_pairs: list[tuple],
    cost: CostSpec,
    gamma: float,
    hyper_init: gp.Hyperparams | None = None,
    restarts: int = gp.DEFAULT_RESTARTS,
    seed: int = 0,
    max_points: int = gp.DEFAULT_MAX_POINTS,
) -> QModel:
    """Seed the Q-function with the immediate predicted cost of each pair."""
    if len(seed_pairs) < 10:
        raise ContractViolationError("init_q needs at least 10 seed pairs")
    X = np.empty((len(seed_pairs), INPUT_DIM))
    y = np.empty(len(seed_pairs))
    for i, (s, a) in enumerate(seed_pairs):
        sv, av = as_state_array(s), as_action_array(a)
        X[i, :STATE_DIM] = sv
        X[i, STATE_DIM:] = av
        y[i] = expected_cost(fwd.predict(fm, sv, av), cost)
    model = gp.fit(
        X, y, init=hyper_init, restarts=restarts, seed=seed, max_points=max_points, noise_floor=Q_NOISE_FLOOR
    )
    return QModel(gp=model, gamma=gamma, cost=cost)


def greedy_candidate_action(q: QModel, s, action_candidates: np.ndarray) -> np.ndarray:
    """Candidate minimizing the posterior-mean Q at a concrete state."""
    g = GaussianState.point(as_state_array(s))
    a, _ = min_expected_q(q, g, action_candidates)
    return a


def run_episode(
    q: QModel,
    fm: fwd.ForwardModel,
    s0,
    epsilon: float,
    steps: int,
    action_candidates: np.ndarray,
    seed: int = 0,
    bounds: ActionBounds | None = None,
) -> QModel:
    """One simulated episode of epsilon-greedy Q updates through the forward model.

    Per step the generator is consulted once for the explore/exploit draw
    and, when exploring, once per action dimension; this fixed order makes
    the episode reproducible from the seed alone.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolationError("epsilon must be in [0, 1]")
    if steps < 1:
        raise ContractViolationError("episode needs steps >= 1")
    if bounds is None:
        bounds = ActionBounds.default()
    candidates = np.atleast_2d(np.asarray(action_candidates, dtype=float))
    rng = np.random.default_rng(seed)
    s = as_state_array(s0)
    prev_greedy: np.ndarray | None = None
    for _ in range(steps):
        if rng.random() < epsilon:
            a = rng.uniform(-bounds.xi, bounds.xi)
        else:
            a = greedy_candidate_action(q, s, candidates)
            prev_greedy = a
        step_candidates = candidates if prev_greedy is None else np.vstack([candidates, prev_greedy])
        g_next = fwd.predict(fm, s, a)
        q = q_update(q, s, a, g_next, step_candidates)
        s = g_next.mean
    return q


@dataclass(frozen=True)
class EpisodeConfig:
    """Shared knobs for the simulated-episode phase of a training iteration."""

    episodes: int = 50
    steps: int = 20
    epsilon: float = 0.2
    bounds: ActionBounds = ActionBounds.default()
    candidates: np.ndarray | None = None
    fm_restarts: int = 1
    q_restarts: int = 2
    seed: int = 0


def train_iteration(
    q: QModel,
    fm: fwd.ForwardModel,
    transitions: list[Transition],
    episodes: int,
    cfg: EpisodeConfig,
) -> tuple[QModel, fwd.ForwardModel]:
    """One outer-loop iteration: absorb new experience, then simulate episodes.

    New transitions extend and refit the forward model; episodes start from
    states drawn uniformly out of the new real-environment data; the
    Q-function hyperparameters are refit once at the end (per-update
    refitting would be cubic in the training-set size).
    """
    if not transitions and episodes == 0:
        return q, fm
    rng = np.random.default_rng(cfg.seed)
    if transitions:
        fm = fwd.add_transitions(fm, transitions)
        fm = fwd.refit(fm, restarts=cfg.fm_restarts, seed=cfg.seed)
    if episodes > 0:
        if fm.n:
            # All recorded real states, not only this iteration's: a pool
            # restricted to the latest on-policy data loses the approach
            # corridor as soon as one policy degenerates.
            pool = fm.train_inputs[:, :STATE_DIM]
        elif transitions:
            pool = np.vstack([t.s.as_array() for t in transitions])
        else:
            raise ContractViolationError("no start states available for simulated episodes")
        candidates = cfg.candidates
        if candidates is None:
            from .action_opt import halton_actions

            candidates = halton_actions(64, cfg.bounds)
        for e in range(episodes):
            s0 = pool[int(rng.integers(pool.shape[0]))]
            q = run_episode(
                q, fm, s0, cfg.epsilon, cfg.steps, candidates, seed=int(rng.integers(2**31)), bounds=cfg.bounds
            )
        fitted = gp.fit(
            q.gp.inputs,
            q.gp.targets,
            init=q.gp.hyper,
            restarts=cfg.q_restarts,
            seed=cfg.seed,
            max_points=q.gp.max_points,
            noise_floor=Q_NOISE_FLOOR,
        )
        q = replace(q, gp=fitted)
    return q, fm
