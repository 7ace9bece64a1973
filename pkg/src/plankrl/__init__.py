"""Model-based GP Q-learning for a jointly held ball-on-plank task."""

from .domain import Action, ActionBounds, GaussianState, State, Transition
from .gp import GpModel, Hyperparams
from .forward_model import ForwardModel
from .qlearner import CostSpec, QModel
from .sim import HumanProfile, Scenario, SimWorld

__all__ = [
    "Action",
    "ActionBounds",
    "CostSpec",
    "ForwardModel",
    "GaussianState",
    "GpModel",
    "HumanProfile",
    "Hyperparams",
    "QModel",
    "Scenario",
    "SimWorld",
    "State",
    "Transition",
]

__version__ = "0.1.0"
