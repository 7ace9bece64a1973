"""Checkpoint directory: the two models plus the policy settings they need."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import gp
from .domain import ActionBounds
from .errors import CheckpointError
from .forward_model import ForwardModel
from .qlearner import CostSpec, QModel
from .sim import Scenario

META_VERSION = "checkpoint-v1"


def save(directory: str | Path, q: QModel, fm: ForwardModel, delta: float, scenario: Scenario) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": META_VERSION,
        "gamma": q.gamma,
        "delta": delta,
        "cost_weights": [repr(float(v)) for v in q.cost.weights],
        "cost_target": [repr(float(v)) for v in q.cost.target],
        "bounds": [repr(float(v)) for v in scenario.bounds.xi],
        "scenario": _scenario_dict(scenario),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    (directory / "q.gp").write_text(gp.save_text(q.gp))
    for dim, model in enumerate(fm.models):
        (directory / f"fm_{dim}.gp").write_text(gp.save_text(model))
    return directory


def _scenario_dict(scenario: Scenario) -> dict:
    data = asdict(scenario)
    data["bounds"] = list(scenario.bounds.xi)
    return data


def load(directory: str | Path) -> tuple[QModel, ForwardModel, float, Scenario]:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise CheckpointError(f"no checkpoint at {directory} (missing meta.json)")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as err:
        raise CheckpointError(f"corrupt checkpoint metadata in {meta_path}: {err}") from err
    if meta.get("version") != META_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}, expected {META_VERSION!r}")
    try:
        scenario = Scenario.from_dict(meta["scenario"])
        cost = CostSpec(
            np.array([float(v) for v in meta["cost_weights"]]),
            np.array([float(v) for v in meta["cost_target"]]),
        )
        q_model = gp.load_text((directory / "q.gp").read_text())
        fm = ForwardModel(tuple(gp.load_text((directory / f"fm_{dim}.gp").read_text()) for dim in range(7)))
        q = QModel(q_model, gamma=float(meta["gamma"]), cost=cost)
        delta = float(meta["delta"])
    except (OSError, KeyError, ValueError) as err:
        raise CheckpointError(f"cannot load checkpoint {directory}: {err}") from err
    return q, fm, delta, scenario
