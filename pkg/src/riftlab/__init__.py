"""Tabular max-entropy RL, residual fine-tuning and e-stop intervention experiments."""

from .intervention import ExplicitTable, QGap, RandomUniform, StateBased, collect_dataset, rollout_with_estop
from .kernels import BACKEND
from .maxent import SoftQTable, SoftValueTable, policy_from_q, soft_policy_evaluation, soft_value_iteration
from .mdp import GridworldSpec, TabularMdp, build_gridworld, exact_visitation
from .rift import RiftConfig, rift_loop, rlif_train
from .rql import ResidualQTable, residual_soft_q_iteration

__version__ = "0.1.0"
