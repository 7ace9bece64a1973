"""Deterministic 2-D simulation of a ball rolling on a jointly held plank.

Geometry: the agent holds one end of the plank (at x, z) and commands its
Cartesian velocities plus a pitch rate; the partner's end height z_h is a
state, so the pitch is theta = asin((z_h - z) / plank_length).  The partner
grasps that end through a spring-damper attached to a virtual hand whose
velocity is the partner's command; the vertical grasp force tilts the plank
through an admittance term, and the summed absolute grasp force is reported
as the interaction torque tau.

The ball is a solid sphere rolling without slip, so its along-plank
acceleration is -(5/7) (g sin(theta) + frame acceleration projected onto
the plank).  Integration is semi-implicit Euler; one `step` call is exactly
one Euler step of the given size (callers substep).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .domain import Action, ActionBounds, State, as_action_array
from .errors import ContractViolationError
from .qlearner import CostSpec, state_cost

ROLLING_FACTOR = 5.0 / 7.0

HUMAN_KINDS = ("still", "compliant", "resistive", "goal-seeking")

# Cascaded tilt law of the goal-seeking partner: ball error -> desired ball
# speed -> desired plank tilt.  Velocity tracking tolerates the grasp lag
# far better than direct position PD on the tilt; gains are sized for the
# ~0.3 s hand-spring-admittance lag (faster loops limit-cycle).
GOAL_SPEED_GAIN = 0.5
GOAL_SPEED_LIMIT = 0.2
GOAL_TILT_GAIN = 0.2
GOAL_TILT_LIMIT = 0.12

# The far end cannot move faster than this, whatever the grasp force says.
END_RATE_LIMIT = 2.0


@dataclass(frozen=True)
class Coupling:
    """Spring-damper grasp between the partner's hand and the plank end.

    admittance * damping must stay below 1 or the discrete end-velocity
    feedback alternates and diverges; the constructor enforces it.
    """

    stiffness: float = 40.0
    damping: float = 12.0
    admittance: float = 0.05
    max_force: float = 25.0
    tau_scale: float = 0.2

    def __post_init__(self):
        if self.admittance * self.damping >= 1.0:
            raise ContractViolationError("unstable coupling: admittance * damping must be < 1")
        if self.max_force <= 0:
            raise ContractViolationError("max_force must be positive")


@dataclass(frozen=True)
class HumanProfile:
    """Scripted partner behavior.

    kp/kd act on the partner's preferred plank-end pose; goal_awareness
    blends in the ball-goal tilt law; noise_std perturbs the command and
    reaction_delay postpones it by whole control steps.
    """

    kind: str = "still"
    kp: float = 6.0
    kd: float = 0.5
    goal_awareness: float = 1.0
    noise_std: float = 0.0
    reaction_delay: int = 0

    def __post_init__(self):
        if self.kind not in HUMAN_KINDS:
            raise ContractViolationError(f"unknown human profile kind {self.kind!r}")
        if self.kp < 0 or self.kd < 0 or self.reaction_delay < 0:
            raise ContractViolationError("profile gains and delay must be non-negative")


@dataclass(frozen=True)
class Scenario:
    """Everything that parameterizes one simulated session."""

    plank_length: float = 1.0
    gravity: float = 9.81
    rolling_resistance: float = 2.0
    coupling: Coupling = field(default_factory=Coupling)
    human: HumanProfile = field(default_factory=HumanProfile)
    bounds: ActionBounds = field(default_factory=ActionBounds.default)
    vision_noise_d: float = 0.0
    vision_noise_d_dot: float = 0.0
    sensor_rate_hz: float = 4.0
    physics_dt: float = 0.05
    tilt_limit: float = 0.5
    hand_speed_limit: float = 0.2
    ball_start: float = 0.2
    ball_goal: float = 0.8
    seed: int = 0

    @property
    def control_period(self) -> float:
        return 1.0 / self.sensor_rate_hz

    @property
    def substeps_per_control(self) -> int:
        return max(1, round(self.control_period / self.physics_dt))

    def to_json(self, path: str | Path) -> None:
        data = asdict(self)
        data["bounds"] = list(self.bounds.xi)
        Path(path).write_text(json.dumps(data, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "Scenario":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ContractViolationError(f"cannot load scenario {path}: {err}") from err
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        data = dict(data)
        if "coupling" in data:
            data["coupling"] = Coupling(**data["coupling"])
        if "human" in data:
            data["human"] = HumanProfile(**data["human"])
        if "bounds" in data:
            data["bounds"] = ActionBounds(np.asarray(data["bounds"], dtype=float))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractViolationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)


class SimWorld:
    """Mutable ground-truth state of one session."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.x = 0.0
        self.z = 0.0
        self.z_h = 0.0
        self.ball_p = scenario.ball_start * scenario.plank_length
        self.ball_v = 0.0
        self.hand_x = scenario.plank_length  # grasp starts relaxed at the far end
        self.hand_z = 0.0
        self.hand_vx = 0.0
        self.hand_vz = 0.0
        self.prev_vx = 0.0
        self.prev_vz = 0.0
        self.end_vx = 0.0
        self.end_vz = 0.0
        self.tau = 0.0
        self.time = 0.0
        self.rng_seed = scenario.seed if seed is None else seed
        self.rng = np.random.default_rng(self.rng_seed)

    @property
    def theta(self) -> float:
        return float(np.arcsin((self.z_h - self.z) / self.scenario.plank_length))

    @property
    def x_h(self) -> float:
        return self.x + self.scenario.plank_length * float(np.cos(self.theta))

    @property
    def ball_d(self) -> float:
        return self.ball_p / self.scenario.plank_length

    def grasp_force(self) -> tuple[float, float]:
        """Spring-damper force, clamped componentwise: the grasp slips
        rather than transmit more than max_force."""
        c = self.scenario.coupling
        fx = c.stiffness * (self.hand_x - self.x_h) + c.damping * (self.hand_vx - self.end_vx)
        fz = c.stiffness * (self.hand_z - self.z_h) + c.damping * (self.hand_vz - self.end_vz)
        fx = float(np.clip(fx, -c.max_force, c.max_force))
        fz = float(np.clip(fz, -c.max_force, c.max_force))
        return fx, fz


def step(w: SimWorld, robot_a, human_v, dt: float) -> SimWorld:
    """Advance the world by one Euler step of size dt (in place).

    robot_a is the agent's velocity command, human_v the partner's hand
    velocity command (vx, vz).
    """
    if dt <= 0:
        raise ContractViolationError("dt must be positive")
    a = as_action_array(robot_a)
    scn = w.scenario
    if not scn.bounds.contains(a):
        raise ContractViolationError(f"robot action {a} violates bounds {scn.bounds.xi}")
    hvx, hvz = float(human_v[0]), float(human_v[1])
    speed_cap = scn.hand_speed_limit
    hvx = float(np.clip(hvx, -speed_cap, speed_cap))
    hvz = float(np.clip(hvz, -speed_cap, speed_cap))

    L = scn.plank_length
    theta = w.theta
    cos_t, sin_t = float(np.cos(theta)), float(np.sin(theta))
    fx, fz = w.grasp_force()

    # Agent end: commanded velocities are tracked instantly.
    vx, vz = float(a[0]), float(a[1])
    frame_ax = (vx - w.prev_vx) / dt
    frame_az = (vz - w.prev_vz) / dt
    old_xh, old_zh = w.x_h, w.z_h
    w.x += vx * dt
    w.z += vz * dt

    # Far-end height: pitch command plus the grasp admittance.
    zh_rate = vz + a[2] * L * cos_t + scn.coupling.admittance * fz
    zh_rate = float(np.clip(zh_rate, -END_RATE_LIMIT, END_RATE_LIMIT))
    w.z_h = w.z_h + zh_rate * dt
    max_dz = L * float(np.sin(scn.tilt_limit))
    w.z_h = w.z + float(np.clip(w.z_h - w.z, -max_dz, max_dz))

    # Ball: rolling sphere in the (possibly accelerating) plank frame.
    theta_new = w.theta
    cos_n, sin_n = float(np.cos(theta_new)), float(np.sin(theta_new))
    along_frame = frame_ax * cos_n + frame_az * sin_n
    accel = -ROLLING_FACTOR * (scn.gravity * sin_n + along_frame) - scn.rolling_resistance * w.ball_v
    w.ball_v += accel * dt
    w.ball_p += w.ball_v * dt
    if w.ball_p <= 0.0:
        w.ball_p, w.ball_v = 0.0, 0.0
    elif w.ball_p >= L:
        w.ball_p, w.ball_v = L, 0.0

    # Partner hand and bookkeeping for the next step's damper.
    w.hand_x += hvx * dt
    w.hand_z += hvz * dt
    w.hand_vx, w.hand_vz = hvx, hvz
    w.end_vx = (w.x_h - old_xh) / dt
    w.end_vz = (w.z_h - old_zh) / dt
    w.prev_vx, w.prev_vz = vx, vz
    w.tau = scn.coupling.tau_scale * (abs(fx) + abs(fz))
    w.time += dt
    return w


class HumanController:
    """Stateful scripted partner: remembers its preferred pose, noise and delay.

    Commands are recomputed at the physics rate (the partner does not act on
    the agent's control clock); reaction_delay counts control periods and is
    realized as a substep-deep queue.
    """

    def __init__(self, profile: HumanProfile, ball_goal: float, seed: int, world: SimWorld):
        self.profile = profile
        self.ball_goal = ball_goal
        self.rng = np.random.default_rng(seed)
        self.preferred = (world.x_h, world.z_h)
        depth = profile.reaction_delay * world.scenario.substeps_per_control
        self.queue: deque = deque([(0.0, 0.0)] * depth)

    def _raw_command(self, w: SimWorld) -> tuple[float, float]:
        p = self.profile
        if p.kind == "still":
            return 0.0, 0.0
        if p.kind == "compliant":
            return p.kp * (w.x_h - w.hand_x), p.kp * (w.z_h - w.hand_z)
        if p.kind == "resistive":
            return (
                p.kp * (self.preferred[0] - w.x_h) - p.kd * w.end_vx,
                p.kp * (self.preferred[1] - w.z_h) - p.kd * w.end_vz,
            )
        # goal-seeking: tilt the plank to drive the ball toward the goal.
        scn = w.scenario
        d, d_dot = w.ball_d, w.ball_v / scn.plank_length
        v_des = float(np.clip(GOAL_SPEED_GAIN * (self.ball_goal - d), -GOAL_SPEED_LIMIT, GOAL_SPEED_LIMIT))
        theta_des = float(np.clip(GOAL_TILT_GAIN * (d_dot - v_des), -GOAL_TILT_LIMIT, GOAL_TILT_LIMIT))
        z_end_des = w.z + scn.plank_length * float(np.sin(theta_des))
        v_goal = (p.kp * (w.x_h - w.hand_x), p.kp * (z_end_des - w.hand_z))
        v_hold = (p.kp * (self.preferred[0] - w.x_h), p.kp * (self.preferred[1] - w.z_h))
        blend = p.goal_awareness
        return (
            blend * v_goal[0] + (1 - blend) * v_hold[0],
            blend * v_goal[1] + (1 - blend) * v_hold[1],
        )

    def command(self, w: SimWorld) -> tuple[float, float]:
        vx, vz = self._raw_command(w)
        if self.profile.noise_std > 0:
            noise = self.rng.normal(0.0, self.profile.noise_std, size=2)
            vx, vz = vx + noise[0], vz + noise[1]
        if self.profile.reaction_delay > 0:
            self.queue.append((vx, vz))
            vx, vz = self.queue.popleft()
        cap = w.scenario.hand_speed_limit
        return float(np.clip(vx, -cap, cap)), float(np.clip(vz, -cap, cap))


def human_policy(w: SimWorld, profile: HumanProfile, ball_goal: float, seed: int = 0) -> tuple[float, float]:
    """One-shot partner command (a fresh controller; delay state not kept)."""
    return HumanController(profile, ball_goal, seed, w).command(w)


def observe(w: SimWorld, ball_goal: float) -> State:
    """Map ground truth to the 7-dimensional observation.

    Ball position and velocity get the configured Gaussian vision noise
    (drawn from the world's generator); the noisy position is clamped back
    to [0, 1] and the goal distance is derived from it.
    """
    scn = w.scenario
    noise = w.rng.normal(0.0, 1.0, size=2)
    d = float(np.clip(w.ball_d + scn.vision_noise_d * noise[0], 0.0, 1.0))
    d_dot = w.ball_v / scn.plank_length + scn.vision_noise_d_dot * noise[1]
    return State(
        x=w.x,
        z=w.z,
        theta=w.theta,
        delta_d=d - ball_goal,
        d=d,
        d_dot=float(d_dot),
        tau=w.tau,
    )


def cost(s: State, spec: CostSpec) -> float:
    """Quadratic observation cost (weights select goal distance, speed, force)."""
    return state_cost(s, spec)


def control_step(w: SimWorld, robot_a, human: HumanController | None) -> None:
    """Advance one control period; the partner command refreshes per substep."""
    scn = w.scenario
    for _ in range(scn.substeps_per_control):
        command = human.command(w) if human is not None else (0.0, 0.0)
        step(w, robot_a, command, scn.physics_dt)
