"""Finite MDPs, gridworld construction and occupancy measures."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .rng import generator

PRIOR_EPS = 1e-6
ACTIONS = ("up", "right", "down", "left")
_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


class GridError(ValueError):
    """Raised for malformed gridworld layouts."""


@dataclass
class TabularMdp:
    """Finite discounted MDP ``(S, A, r, T, d, gamma)``.

    ``terminal`` marks absorbing cells that end a rollout.  ``transition_reward``
    optionally gives per-outcome rewards ``r(s, a, s')`` for sampling; ``reward``
    must be its expectation under ``transition``.
    """

    reward: np.ndarray
    transition: np.ndarray
    initial: np.ndarray
    discount: float
    terminal: np.ndarray | None = None
    transition_reward: np.ndarray | None = None

    def __post_init__(self):
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.discount = float(self.discount)
        S, A = self.reward.shape
        if self.transition.shape != (S, A, S):
            raise ValueError(f"transition shape {self.transition.shape} != {(S, A, S)}")
        if self.initial.shape != (S,):
            raise ValueError(f"initial shape {self.initial.shape} != {(S,)}")
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be probability distributions")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("reward must be finite")
        if self.terminal is None:
            self.terminal = np.zeros(S, dtype=bool)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        if self.transition_reward is None:
            self.transition_reward = np.broadcast_to(self.reward[:, :, None], (S, A, S))
        else:
            self.transition_reward = np.asarray(self.transition_reward, dtype=np.float64)
            expected = np.einsum("san,san->sa", self.transition, self.transition_reward)
            if np.max(np.abs(expected - self.reward)) > 1e-9:
                raise ValueError("reward must equal the expectation of transition_reward")

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    def with_reward(self, reward) -> "TabularMdp":
        """Same dynamics, new state-action reward table."""
        return TabularMdp(reward, self.transition, self.initial, self.discount, self.terminal)


@dataclass
class VisitationDistribution:
    """Discounted occupancy ``mu[s, a]`` and its state marginal ``rho[s]``."""

    mu: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray | None = None


@dataclass
class GridworldSpec:
    """Gridworld layout: ``S`` start, ``G`` goal, ``X`` hazard, ``#`` wall, ``.`` empty."""

    rows: list[str]
    step_reward: float = -0.01
    goal_reward: float = 1.0
    hazard_reward: float = -1.0
    slip_prob: float = 0.0
    discount: float = 0.95
    cells: list[tuple[int, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.rows = [r.rstrip("\n") for r in self.rows]
        if not self.rows:
            raise GridError("empty grid")
        width = len(self.rows[0])
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise GridError(f"row {i} has length {len(row)}, expected {width}")
            for j, ch in enumerate(row):
                if ch not in "SGX#.":
                    raise GridError(f"unknown cell {ch!r} at row {i}, column {j}")
        flat = "".join(self.rows)
        if "S" not in flat:
            raise GridError("grid has no start cell 'S'")
        if "G" not in flat:
            raise GridError("grid has no goal cell 'G'")
        if not 0.0 <= self.slip_prob < 1.0:
            raise GridError(f"slip_prob must lie in [0, 1), got {self.slip_prob}")
        self.cells = [(i, j) for i, row in enumerate(self.rows) for j, ch in enumerate(row) if ch != "#"]

    @classmethod
    def from_text(cls, text: str, **kwargs) -> "GridworldSpec":
        rows = [line.strip() for line in text.splitlines() if line.strip()]
        return cls(rows, **kwargs)

    @classmethod
    def from_file(cls, path, **kwargs) -> "GridworldSpec":
        return cls.from_text(Path(path).read_text(), **kwargs)

    def kind(self, state: int) -> str:
        i, j = self.cells[state]
        return self.rows[i][j]


def build_gridworld(spec: GridworldSpec) -> TabularMdp:
    """Row-major states over non-wall cells, actions (up, right, down, left).

    The intended move happens with probability ``1 - slip_prob``; otherwise the
    agent moves in one of the two perpendicular directions uniformly.  Blocked
    moves keep the agent in place.  Goal and hazard cells are absorbing with
    zero reward; entering one pays its reward on top of the step reward.
    """
    index = {c: k for k, c in enumerate(spec.cells)}
    S, A = len(spec.cells), 4
    T = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    terminal = np.array([spec.kind(s) in "GX" for s in range(S)])
    bonus = np.array([
        spec.goal_reward if spec.kind(s) == "G" else spec.hazard_reward if spec.kind(s) == "X" else 0.0
        for s in range(S)
    ])

    def dest(s, m):
        i, j = spec.cells[s]
        di, dj = _MOVES[m]
        return index.get((i + di, j + dj), s)

    for s in range(S):
        if terminal[s]:
            T[s, :, s] = 1.0
            continue
        for a in range(A):
            outcomes = [(a, 1.0 - spec.slip_prob), ((a + 1) % 4, spec.slip_prob / 2), ((a + 3) % 4, spec.slip_prob / 2)]
            for m, p in outcomes:
                if p > 0:
                    T[s, a, dest(s, m)] += p
            R[s, a, :] = spec.step_reward + bonus
    starts = np.array([spec.kind(s) == "S" for s in range(S)], dtype=float)
    reward = np.einsum("san,san->sa", T, R)
    return TabularMdp(reward, T, starts / starts.sum(), spec.discount, terminal, R)


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int, discount: float) -> TabularMdp:
    """Dirichlet(1) transition rows, rewards uniform in [-1, 1], uniform start."""
    T = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    T /= T.sum(axis=2, keepdims=True)
    r = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    return TabularMdp(r, T, np.full(num_states, 1.0 / num_states), discount)


def random_policy(rng: np.random.Generator, num_states: int, num_actions: int, concentration: float = 1.0):
    pi = rng.dirichlet(np.full(num_actions, concentration), size=num_states)
    return interior(pi)


def check_policy(policy, mdp: TabularMdp | None = None) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.ndim != 2:
        raise ValueError(f"policy must be a 2-d table, got shape {policy.shape}")
    if mdp is not None and policy.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"policy shape {policy.shape} does not match MDP {(mdp.num_states, mdp.num_actions)}")
    if np.any(policy < 0) or np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("policy rows must be probability distributions")
    return policy


def interior(policy, eps: float = PRIOR_EPS) -> np.ndarray:
    """Mix with the uniform policy at weight ``|A| * eps`` so every entry is >= eps."""
    policy = np.asarray(policy, dtype=np.float64)
    A = policy.shape[1]
    return (1.0 - A * eps) * policy + eps


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def greedy_actions(policy, tie_tol: float = 1e-9) -> np.ndarray:
    """Per-state mode; probabilities within ``tie_tol`` of the max count as tied (lowest index wins)."""
    policy = np.asarray(policy, dtype=np.float64)
    top = policy.max(axis=1, keepdims=True)
    return np.argmax(policy >= top - tie_tol, axis=1)


def greedy_policy(policy, tie_tol: float = 1e-9) -> np.ndarray:
    """One-hot table of :func:`greedy_actions`."""
    policy = np.asarray(policy)
    out = np.zeros_like(policy, dtype=np.float64)
    out[np.arange(policy.shape[0]), greedy_actions(policy, tie_tol)] = 1.0
    return out


def transition_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    """``W[(s, a), (s', a')] = T(s' | s, a) * pi(a' | s')``."""
    policy = check_policy(policy, mdp)
    S, A = mdp.num_states, mdp.num_actions
    return (mdp.transition[:, :, :, None] * policy[None, None, :, :]).reshape(S * A, S * A)


def initial_state_action(mdp: TabularMdp, policy) -> np.ndarray:
    return mdp.initial[:, None] * np.asarray(policy)


def exact_visitation(mdp: TabularMdp, policy) -> VisitationDistribution:
    """Solve ``mu^T (I - gamma W) = (1 - gamma) mu0^T`` by dense LU."""
    W = transition_matrix(mdp, policy)
    n = W.shape[0]
    mu0 = initial_state_action(mdp, policy).ravel()
    try:
        mu = np.linalg.solve((np.eye(n) - mdp.discount * W).T, (1.0 - mdp.discount) * mu0)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for gamma < 1
        raise RuntimeError("occupancy solve failed") from exc
    mu = np.clip(mu, 0.0, None).reshape(mdp.num_states, mdp.num_actions)
    return VisitationDistribution(mu, mu.sum(axis=1))


def state_visitation(mdp: TabularMdp, policy) -> np.ndarray:
    """``rho^pi`` from the ``|S| x |S|`` system (cheaper than the full occupancy)."""
    policy = check_policy(policy, mdp)
    P = np.einsum("sa,san->sn", policy, mdp.transition)
    S = mdp.num_states
    rho = np.linalg.solve((np.eye(S) - mdp.discount * P).T, (1.0 - mdp.discount) * mdp.initial)
    return np.clip(rho, 0.0, None)


def per_timestep_visitation(mdp: TabularMdp, policy, t: int):
    """Return ``(rho_t, mu_t)`` by pushing ``d`` forward ``t`` steps."""
    if t < 0:
        raise ValueError("t must be non-negative")
    policy = check_policy(policy, mdp)
    P = np.einsum("sa,san->sn", policy, mdp.transition)
    rho = mdp.initial.copy()
    for _ in range(t):
        rho = rho @ P
    return rho, rho[:, None] * policy


def monte_carlo_visitation(mdp: TabularMdp, policy, episodes: int, horizon: int, seed: int,
                           chunk: int = 20000) -> VisitationDistribution:
    """Empirical discounted occupancy from seeded rollouts, with per-entry standard errors."""
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if mdp.discount ** horizon >= 1e-6:
        warnings.warn(f"discount**horizon = {mdp.discount ** horizon:.2e} >= 1e-6; occupancy is truncated",
                      stacklevel=2)
    policy = check_policy(policy, mdp)
    cum_pi = np.cumsum(policy, axis=1)
    cum_T = np.cumsum(mdp.transition, axis=2)
    cum_d = np.cumsum(mdp.initial)
    rng = generator(seed)
    SA = mdp.num_states * mdp.num_actions
    tot = np.zeros(SA)
    sq = np.zeros(SA)
    done = 0
    while done < episodes:
        n = min(chunk, episodes - done)
        u = rng.random((n, 1 + 2 * horizon))
        t, q = kernels.mc_occupancy(cum_pi, cum_T, cum_d, mdp.discount, u)
        tot += t
        sq += q
        done += n
    mean = tot / episodes
    var = np.maximum(sq / episodes - mean ** 2, 0.0)
    se = np.sqrt(var / max(episodes - 1, 1))
    mu = mean.reshape(mdp.num_states, mdp.num_actions)
    return VisitationDistribution(mu, mu.sum(axis=1), se.reshape(mu.shape))
