"""Desk-scale experimental protocol: bootstrap, iterative training, evaluation.

One run directory. is laid out as::

    run/
      config.json           resolved experiment configuration
      bootstrap.csv         random-policy transitions
      iter_001/collect.csv  on-policy transitions gathered before iteration 2+
      eval/iter000_trial00.csv ...  per-step evaluation logs
      summary.csv           one row per (iteration, trial) with metrics
      relevance.csv         normalized ARD relevance table
      checkpoint/           final models

Evaluation logs carry the forward model's one-step predictions next to the
observed states, which is what the calibration and band reports consume.
Everything is seeded; identical configs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import action_opt, checkpoint, csvio, gp
from . import forward_model as fwd
from . import qlearner, sim
from .domain import Action, State, Transition
from .errors import ContractViolationError
from .qlearner import CostSpec, EpisodeConfig, QModel
from .sim import HumanController, Scenario, SimWorld

STATE_COLS = ["x", "z", "theta", "delta_d", "d", "d_dot", "tau"]
ACTION_COLS = ["a_x_dot", "a_z_dot", "a_theta_dot"]

TRANSITION_SCHEMA = ["t"] + STATE_COLS + ACTION_COLS + [f"next_{c}" for c in STATE_COLS]
EVAL_SCHEMA = (
    ["t"]
    + STATE_COLS
    + ACTION_COLS
    + ["cost", "q_mean", "q_std", "q_ucb"]
    + [f"pred_mean_{c}" for c in STATE_COLS]
    + [f"pred_std_{c}" for c in STATE_COLS]
)
SUMMARY_SCHEMA = [
    "iteration",
    "trial",
    "overshoot",
    "settling_time",
    "mean_tau",
    "mean_cost",
    "final_abs_delta_d",
]

COST_PRESETS = ("position-only", "with-force")


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of one experiment; defaults follow the task's standard settings."""

    scenario: Scenario = field(default_factory=Scenario)
    cost_preset: str = "position-only"
    force_weight: float = 0.01
    gamma: float = 0.2
    delta: float = -0.5
    bootstrap_samples: int = 150
    iterations: int = 3
    iteration_samples: int = 60
    episodes: int = 50
    steps: int = 20
    epsilon: float = 0.2
    eval_trials: int = 3
    eval_duration: float = 15.0
    fit_restarts: int = 4
    ucb_restarts: int = 3
    ucb_max_iters: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.cost_preset not in COST_PRESETS:
            raise ContractViolationError(f"cost_preset must be one of {COST_PRESETS}")
        for name in ("bootstrap_samples", "iterations", "episodes", "steps", "eval_trials"):
            if getattr(self, name) < 0 or (name == "bootstrap_samples" and getattr(self, name) < 10):
                raise ContractViolationError(f"{name} must be positive")

    @property
    def cost(self) -> CostSpec:
        if self.cost_preset == "with-force":
            return CostSpec.with_force(self.force_weight)
        return CostSpec.position_only()

    def to_dict(self) -> dict:
        data = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "scenario"}
        data["scenario"] = checkpoint._scenario_dict(self.scenario)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        scn = data.pop("scenario", None)
        if isinstance(scn, str):
            scenario = Scenario.from_json(scn)
        elif isinstance(scn, dict):
            scenario = Scenario.from_dict(scn)
        else:
            scenario = Scenario()
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractViolationError(f"unknown experiment config fields: {sorted(unknown)}")
        return cls(scenario=scenario, **data)


def _transition_row(t: float, tr: Transition) -> list:
    return [t, *tr.s.as_array(), *tr.a.as_array(), *tr.s_next.as_array()]


def transitions_from_rows(rows: list[list[str]]) -> list[Transition]:
    out = []
    for row in rows:
        vals = [float(v) for v in row]
        out.append(
            Transition(
                State.from_array(vals[1:8]),
                Action.from_array(vals[8:11]),
                State.from_array(vals[11:18]),
            )
        )
    return out


def load_transitions(path: str | Path) -> list[Transition]:
    header, rows = csvio.read_csv(path)
    if header != TRANSITION_SCHEMA:
        raise ContractViolationError(f"{path} does not match the transition schema")
    return transitions_from_rows(rows)


def _smoothed_random_policy(bounds, rng, smoothing=0.8):
    """Low-pass filtered uniform exploration; stays in bounds by convexity."""
    state = {"a": np.zeros(3)}

    def policy(_s, _w):
        fresh = rng.uniform(-bounds.xi, bounds.xi)
        state["a"] = smoothing * state["a"] + (1.0 - smoothing) * fresh
        return state["a"]

    return policy


def collect(
    scenario: Scenario,
    policy,
    n_steps: int,
    world_seed: int,
    human_seed: int,
) -> tuple[list[Transition], SimWorld]:
    """Run a policy against the simulator for n control steps."""
    world = SimWorld(scenario, seed=world_seed)
    human = HumanController(scenario.human, scenario.ball_goal, human_seed, world)
    transitions = []
    s = sim.observe(world, scenario.ball_goal)
    for _ in range(n_steps):
        a = np.asarray(policy(s, world), dtype=float)
        sim.control_step(world, a, human)
        s_next = sim.observe(world, scenario.ball_goal)
        transitions.append(Transition(s, Action.from_array(a), s_next))
        s = s_next
    return transitions, world


def bootstrap(config: ExperimentConfig, outdir: str | Path) -> list[Transition]:
    """Collect the initial random-policy dataset and log it to bootstrap.csv."""
    outdir = Path(outdir)
    rng = np.random.default_rng(config.seed)
    policy = _smoothed_random_policy(config.scenario.bounds, rng)
    transitions, _ = collect(
        config.scenario,
        policy,
        config.bootstrap_samples,
        world_seed=config.seed,
        human_seed=config.seed + 1,
    )
    period = config.scenario.control_period
    rows = [_transition_row(i * period, tr) for i, tr in enumerate(transitions)]
    csvio.write_csv(outdir / "bootstrap.csv", TRANSITION_SCHEMA, rows)
    return transitions


def greedy_ucb_policy(q: QModel, config: ExperimentConfig, seed: int):
    """Policy of the trained agent: minimize the UCB objective each step."""
    cfg = action_opt.UcbConfig(
        delta=config.delta, restarts=config.ucb_restarts, max_iters=config.ucb_max_iters
    )
    counter = {"step": 0}

    def policy(s, _w):
        counter["step"] += 1
        a = action_opt.optimize_action(
            q, s.as_array() if isinstance(s, State) else s, cfg, config.scenario.bounds,
            seed=seed + counter["step"],
        )
        return a.as_array()

    return policy


@dataclass
class TrialMetrics:
    overshoot: float
    settling_time: float
    mean_tau: float
    mean_cost: float
    final_abs_delta_d: float


def overshoot_metric(d_series: np.ndarray, goal: float, start: float) -> float:
    """Max excursion of d past the goal after the first crossing (0 if never)."""
    direction = 1.0 if goal >= start else -1.0
    signed = direction * (np.asarray(d_series) - goal)
    crossed = np.nonzero(signed >= 0.0)[0]
    if crossed.size == 0:
        return 0.0
    return float(np.max(signed[crossed[0] :]))


def settling_time_metric(times: np.ndarray, delta_d: np.ndarray, threshold=0.1, hold=5.0) -> float:
    """First time |delta_d| stays below threshold for `hold` seconds (inf if never)."""
    times = np.asarray(times)
    inside = np.abs(np.asarray(delta_d)) < threshold
    if times.size < 2:
        return float("inf")
    dt = float(times[1] - times[0])
    need = int(round(hold / dt))
    for i in range(inside.size - need + 1):
        if np.all(inside[i : i + need]):
            return float(times[i])
    return float("inf")


def evaluate(
    q: QModel,
    fm: fwd.ForwardModel,
    config: ExperimentConfig,
    outdir: str | Path,
    iteration: int,
    trials: int | None = None,
) -> list[TrialMetrics]:
    """Greedy-UCB evaluation rollouts with fresh seeds; logs one CSV per trial."""
    outdir = Path(outdir)
    trials = config.eval_trials if trials is None else trials
    scenario = config.scenario
    cost_spec = config.cost
    period = scenario.control_period
    n_steps = int(round(config.eval_duration / period))
    metrics = []
    for trial in range(trials):
        base = config.seed + 10_000 * (iteration + 1) + 100 * trial
        world = SimWorld(scenario, seed=base + 1)
        human = HumanController(scenario.human, scenario.ball_goal, base + 2, world)
        policy = greedy_ucb_policy(q, config, seed=base + 3)
        s = sim.observe(world, scenario.ball_goal)
        rows = []
        d_series, delta_series, tau_series, cost_series, times = [], [], [], [], []
        for k in range(n_steps):
            a = policy(s, world)
            g_pred = fwd.predict(fm, s, a)
            x = np.concatenate([s.as_array(), a])
            q_mean, q_var = gp.posterior(q.gp, x)
            q_std = float(np.sqrt(q_var))
            ucb = q_mean - config.delta * q_std
            sim.control_step(world, a, human)
            s_next = sim.observe(world, scenario.ball_goal)
            c = sim.cost(s_next, cost_spec)
            t = k * period
            rows.append(
                [t, *s.as_array(), *a, c, q_mean, q_std, ucb, *g_pred.mean, *np.sqrt(g_pred.var)]
            )
            times.append(t)
            d_series.append(s_next.d)
            delta_series.append(s_next.delta_d)
            tau_series.append(s_next.tau)
            cost_series.append(c)
            s = s_next
        csvio.write_csv(outdir / "eval" / f"iter{iteration:03d}_trial{trial:02d}.csv", EVAL_SCHEMA, rows)
        metrics.append(
            TrialMetrics(
                overshoot=overshoot_metric(np.array(d_series), scenario.ball_goal, scenario.ball_start),
                settling_time=settling_time_metric(np.array(times), np.array(delta_series)),
                mean_tau=float(np.mean(tau_series)),
                mean_cost=float(np.mean(cost_series)),
                final_abs_delta_d=float(abs(delta_series[-1])),
            )
        )
    return metrics


@dataclass
class RunResult:
    q: QModel
    fm: fwd.ForwardModel
    summary: list[list]
    outdir: Path


def run(config: ExperimentConfig, outdir: str | Path) -> RunResult:
    """Full training loop: bootstrap, iterate, evaluate after every iteration."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")

    bootstrap_path = outdir / "bootstrap.csv"
    if bootstrap_path.exists():
        transitions = load_transitions(bootstrap_path)
    else:
        transitions = bootstrap(config, outdir)

    fm = fwd.train(transitions, restarts=config.fit_restarts, seed=config.seed)
    pairs = [(tr.s, tr.a) for tr in transitions]
    q = qlearner.init_q(
        fm, pairs, config.cost, config.gamma, restarts=config.fit_restarts, seed=config.seed
    )

    summary_rows: list[list] = []

    def record(iteration: int, metrics: list[TrialMetrics]):
        for trial, m in enumerate(metrics):
            summary_rows.append(
                [iteration, trial, m.overshoot, m.settling_time, m.mean_tau, m.mean_cost, m.final_abs_delta_d]
            )

    record(0, evaluate(q, fm, config, outdir, iteration=0))

    episode_cfg = EpisodeConfig(
        episodes=config.episodes,
        steps=config.steps,
        epsilon=config.epsilon,
        bounds=config.scenario.bounds,
        candidates=action_opt.halton_actions(64, config.scenario.bounds),
        seed=config.seed,
    )
    for it in range(1, config.iterations + 1):
        if it == 1:
            new_transitions: list[Transition] = []  # bootstrap already absorbed
        else:
            policy = greedy_ucb_policy(q, config, seed=config.seed + 777 * it)
            new_transitions, _ = collect(
                config.scenario,
                policy,
                config.iteration_samples,
                world_seed=config.seed + 31 * it,
                human_seed=config.seed + 31 * it + 1,
            )
            rows = [
                _transition_row(i * config.scenario.control_period, tr)
                for i, tr in enumerate(new_transitions)
            ]
            csvio.write_csv(outdir / f"iter_{it:03d}" / "collect.csv", TRANSITION_SCHEMA, rows)
        q, fm = qlearner.train_iteration(
            q, fm, new_transitions, config.episodes, replace(episode_cfg, seed=config.seed + it)
        )
        record(it, evaluate(q, fm, config, outdir, iteration=it))

    csvio.write_csv(outdir / "summary.csv", SUMMARY_SCHEMA, summary_rows)
    table = fwd.relevance(fm)
    rel_rows = [[STATE_COLS[i], *table[i]] for i in range(table.shape[0])]
    csvio.write_csv(outdir / "relevance.csv", ["output"] + STATE_COLS + ACTION_COLS, rel_rows)
    checkpoint.save(outdir / "checkpoint", q, fm, config.delta, config.scenario)
    return RunResult(q=q, fm=fm, summary=summary_rows, outdir=outdir)
