"""Maximum-entropy RL primitives and the reward / soft-Q / (policy, value) maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mdp import TabularMdp, check_policy, exact_visitation

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000


class ConvergenceError(RuntimeError):
    """Fixed-point iteration hit its iteration cap before reaching tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SoftQTable:
    q: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"temperature must be positive, got {self.alpha}")
        if not np.all(np.isfinite(self.q)):
            raise ValueError("soft-Q table must be finite")


@dataclass(frozen=True)
class SoftValueTable:
    v: np.ndarray
    alpha: float


def logsumexp(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def entropy(policy) -> np.ndarray:
    p = np.asarray(policy)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=1)


def expected_next(mdp: TabularMdp, v) -> np.ndarray:
    """``E_{s' ~ T(.|s,a)}[v(s')]`` as an ``(S, A)`` table."""
    return mdp.transition @ np.asarray(v)


def soft_value_iteration(mdp: TabularMdp, alpha: float, tol: float = DEFAULT_TOL,
                         max_iters: int = DEFAULT_MAX_ITERS, reward=None, q0=None) -> SoftQTable:
    """Fixed point of ``Q = r + gamma E[alpha log sum exp(Q(s', .) / alpha)]``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    r = mdp.reward if reward is None else np.asarray(reward, dtype=np.float64)
    q_init = np.zeros_like(r) if q0 is None else q0
    q, it, res = kernels.soft_bellman(mdp.transition, r, np.zeros_like(r), mdp.discount, alpha,
                                      q_init, tol, max_iters)
    if res > tol:
        raise ConvergenceError(res, it)
    return SoftQTable(q, alpha)


def policy_from_q(q: SoftQTable) -> np.ndarray:
    return softmax(q.q / q.alpha, axis=1)


def value_from_q(q: SoftQTable) -> SoftValueTable:
    return SoftValueTable(q.alpha * logsumexp(q.q / q.alpha, axis=1), q.alpha)


def advantage(q: SoftQTable) -> np.ndarray:
    return q.q - value_from_q(q).v[:, None]


def _log_positive(policy) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if np.any(policy <= 0):
        raise ValueError("policy must be strictly positive to take logs")
    return np.log(policy)


def q_from_policy_value(policy, v: SoftValueTable) -> SoftQTable:
    return SoftQTable(v.alpha * _log_positive(policy) + v.v[:, None], v.alpha)


def reward_from_q(mdp: TabularMdp, q: SoftQTable) -> np.ndarray:
    return q.q - mdp.discount * expected_next(mdp, value_from_q(q).v)


def reward_from_policy_value(mdp: TabularMdp, policy, v: SoftValueTable) -> np.ndarray:
    """Shaped reward ``alpha log pi + V(s) - gamma E[V(s')]``."""
    return v.alpha * _log_positive(policy) + v.v[:, None] - mdp.discount * expected_next(mdp, v.v)


def soft_policy_evaluation(mdp: TabularMdp, policy, reward, alpha: float):
    """Exact ``(Q^pi, V^pi)`` for the entropy-regularised return of ``policy``.

    ``V = pi.r + alpha H + gamma P_pi V`` is linear in ``V`` and solved directly.
    """
    policy = check_policy(policy, mdp)
    reward = np.asarray(reward, dtype=np.float64)
    S = mdp.num_states
    P_pi = np.einsum("sa,san->sn", policy, mdp.transition)
    b = (policy * reward).sum(axis=1) + alpha * entropy(policy)
    v = np.linalg.solve(np.eye(S) - mdp.discount * P_pi, b)
    q = reward + mdp.discount * expected_next(mdp, v)
    return SoftQTable(q, alpha), SoftValueTable(v, alpha)


def evaluate_maxent_objective(mdp: TabularMdp, policy, reward, alpha: float) -> float:
    """``E_{s0 ~ d}[V^pi(s0)]``, cross-checked against the occupancy form."""
    _, v = soft_policy_evaluation(mdp, policy, reward, alpha)
    j = float(mdp.initial @ v.v)
    j_occ = maxent_objective_from_occupancy(mdp, policy, reward, alpha)
    if abs(j - j_occ) > 1e-8 * max(1.0, abs(j)):
        raise RuntimeError(f"objective mismatch: value form {j!r} vs occupancy form {j_occ!r}")
    return j


def maxent_objective_from_occupancy(mdp: TabularMdp, policy, reward, alpha: float) -> float:
    policy = check_policy(policy, mdp)
    mu = exact_visitation(mdp, policy).mu
    per_sa = np.asarray(reward) + alpha * entropy(policy)[:, None]
    return float((mu * per_sa).sum() / (1.0 - mdp.discount))
