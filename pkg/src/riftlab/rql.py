"""Residual soft Q-learning and the KL-regularised fine-tuning objective.

The residual engine always runs at temperature ``alpha = omega``; this is the
setting in which the residual fixed point maximises
``E[sum_t gamma^t (r - omega KL(pi || pi0))]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .maxent import DEFAULT_MAX_ITERS, DEFAULT_TOL, ConvergenceError, policy_from_q, soft_value_iteration, softmax
from .mdp import PRIOR_EPS, TabularMdp, check_policy, state_visitation


@dataclass(frozen=True)
class ResidualQTable:
    """Residual soft-Q ``Q_R = Q_1 - omega Q_0`` with its prior and temperature."""

    q_r: np.ndarray
    omega: float
    alpha: float
    prior_log_probs: np.ndarray

    @property
    def q_tilde(self) -> np.ndarray:
        """Policy logits ``(Q_R + omega log pi0) / alpha``."""
        return (self.q_r + self.omega * self.prior_log_probs) / self.alpha

    def policy(self) -> np.ndarray:
        return softmax(self.q_tilde, axis=1)

    def soft_value(self) -> np.ndarray:
        z = self.q_tilde
        m = z.max(axis=1)
        return self.alpha * (m + np.log(np.exp(z - m[:, None]).sum(axis=1)))


def check_interior(prior, eps: float = PRIOR_EPS) -> np.ndarray:
    prior = check_policy(prior)
    if np.min(prior) < eps * (1.0 - 1e-9):
        raise ValueError(f"prior must have every entry >= {eps:g}; got min {np.min(prior):.3g}")
    return prior


def residual_soft_q_iteration(mdp: TabularMdp, prior, residual_reward, omega: float,
                              tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS):
    """Solve the residual Bellman equation; return ``(ResidualQTable, policy)``.

    Iteration starts from ``Q_R = 0``, i.e. from the prior policy.
    """
    if omega <= 0:
        raise ValueError("omega must be positive for residual fine-tuning")
    prior = check_interior(prior)
    check_policy(prior, mdp)
    r = np.asarray(residual_reward, dtype=np.float64)
    log_prior = np.log(prior)
    q, it, res = kernels.soft_bellman(mdp.transition, r, omega * log_prior, mdp.discount, omega,
                                      np.zeros_like(r), tol, max_iters)
    if res > tol:
        raise ConvergenceError(res, it)
    table = ResidualQTable(q, omega, omega, log_prior)
    return table, table.policy()


def finetune_equivalent_direct(mdp: TabularMdp, prior, residual_reward, omega: float,
                               tol: float = DEFAULT_TOL) -> np.ndarray:
    """Max-ent RL on ``r + omega log pi0`` at temperature ``omega``."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    prior = check_interior(prior)
    composite = np.asarray(residual_reward, dtype=np.float64) + omega * np.log(prior)
    return policy_from_q(soft_value_iteration(mdp, omega, tol=tol, reward=composite))


def kl_rows(policy, prior) -> np.ndarray:
    """Per-state ``KL(policy || prior)``; infinite where prior is zero under policy mass."""
    p = np.asarray(policy, dtype=np.float64)
    q = np.asarray(prior, dtype=np.float64)
    if np.any((p > 0) & (q <= 0)):
        raise ValueError("policy puts mass where the prior is zero (infinite KL)")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(np.where(q > 0, q, 1.0))), 0.0)
    return terms.sum(axis=1)


def evaluate_j_ft(mdp: TabularMdp, policy, reward, prior, omega: float) -> float:
    """Discounted return of ``reward`` minus ``omega`` times the discounted KL to ``prior``."""
    policy = check_policy(policy, mdp)
    rho = state_visitation(mdp, policy)
    per_state = (policy * np.asarray(reward)).sum(axis=1)
    if omega != 0:
        per_state = per_state - omega * kl_rows(policy, prior)
    return float(rho @ per_state / (1.0 - mdp.discount))


def evaluate_j_int(mdp: TabularMdp, policy, strategy, prior, omega: float) -> float:
    phi = strategy.table(mdp.num_states, mdp.num_actions)
    return evaluate_j_ft(mdp, policy, -phi, prior, omega)
