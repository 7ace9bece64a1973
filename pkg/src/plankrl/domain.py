"""Shared domain types: observations, commands, predicted states, bounds.

The 7-dimensional observation layout is fixed across the package:
[x, z, theta, delta_d, d, d_dot, tau].  Indices below are the single
source of truth for that layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError

STATE_FIELDS = ("x", "z", "theta", "delta_d", "d", "d_dot", "tau")
STATE_DIM = 7
ACTION_FIELDS = ("x_dot", "z_dot", "theta_dot")
ACTION_DIM = 3
INPUT_DIM = STATE_DIM + ACTION_DIM

IDX_X, IDX_Z, IDX_THETA, IDX_DELTA_D, IDX_D, IDX_D_DOT, IDX_TAU = range(7)


@dataclass(frozen=True)
class State:
    """One sensorimotor observation.

    x, z: end-effector position (m); theta: plank pitch (rad);
    delta_d: ball distance to goal (scaled, d - goal); d: ball position on
    the plank (scaled, in [0, 1]); d_dot: ball velocity (scaled 1/s);
    tau: interaction force magnitude (summed absolute grasp torque, >= 0).
    """

    x: float
    z: float
    theta: float
    delta_d: float
    d: float
    d_dot: float
    tau: float

    def __post_init__(self):
        if not -1e-9 <= self.d <= 1.0 + 1e-9:
            raise ContractViolationError(f"ball position d={self.d} outside [0, 1]")
        if self.tau < 0:
            raise ContractViolationError(f"interaction force tau={self.tau} negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z, self.theta, self.delta_d, self.d, self.d_dot, self.tau])

    @classmethod
    def from_array(cls, v) -> "State":
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != STATE_DIM:
            raise ContractViolationError(f"state vector must have {STATE_DIM} entries, got {v.size}")
        return cls(*(float(x) for x in v))


@dataclass(frozen=True)
class Action:
    """Commanded end-effector velocities: horizontal, vertical, pitch."""

    x_dot: float
    z_dot: float
    theta_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_dot, self.z_dot, self.theta_dot])

    @classmethod
    def from_array(cls, v) -> "Action":
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != ACTION_DIM:
            raise ContractViolationError(f"action vector must have {ACTION_DIM} entries, got {v.size}")
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def zero(cls) -> "Action":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class GaussianState:
    """Predicted next observation: per-dimension mean and variance."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        var = np.asarray(self.var, dtype=float).reshape(-1)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        if mean.size != STATE_DIM or var.size != STATE_DIM:
            raise ContractViolationError("GaussianState needs 7 means and 7 variances")
        if np.any(var < 0):
            raise ContractViolationError("GaussianState variances must be non-negative")

    @classmethod
    def point(cls, mean) -> "GaussianState":
        """Zero-variance (delta) state."""
        return cls(np.asarray(mean, dtype=float), np.zeros(STATE_DIM))


@dataclass(frozen=True)
class Transition:
    """One recorded environment step."""

    s: State
    a: Action
    s_next: State


@dataclass(frozen=True, eq=False)
class ActionBounds:
    """Symmetric per-dimension action half-ranges (xi)."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        object.__setattr__(self, "xi", xi)
        if xi.size != ACTION_DIM or np.any(xi <= 0):
            raise ContractViolationError("bounds need 3 strictly positive half-ranges")

    def __eq__(self, other):
        return isinstance(other, ActionBounds) and np.array_equal(self.xi, other.xi)

    def contains(self, a, strict: bool = False) -> bool:
        v = a.as_array() if isinstance(a, Action) else np.asarray(a, dtype=float)
        if strict:
            return bool(np.all(np.abs(v) < self.xi))
        return bool(np.all(np.abs(v) <= self.xi + 1e-12))

    @classmethod
    def default(cls) -> "ActionBounds":
        return cls(np.array([0.1, 0.1, 0.2]))


def as_state_array(s) -> np.ndarray:
    if isinstance(s, State):
        return s.as_array()
    if isinstance(s, GaussianState):
        return s.mean.copy()
    v = np.asarray(s, dtype=float).reshape(-1)
    if v.size != STATE_DIM:
        raise ContractViolationError(f"state vector must have {STATE_DIM} entries, got {v.size}")
    return v


def as_action_array(a) -> np.ndarray:
    if isinstance(a, Action):
        return a.as_array()
    v = np.asarray(a, dtype=float).reshape(-1)
    if v.size != ACTION_DIM:
        raise ContractViolationError(f"action vector must have {ACTION_DIM} entries, got {v.size}")
    return v
