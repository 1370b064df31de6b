"""Intervention strategies and e-stop rollouts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import kernels
from .maxent import SoftQTable
from .mdp import TabularMdp, check_policy, greedy_policy
from .rng import child_seed, generator

END_CAUSES = ("estop", "terminal", "horizon")


class InterventionStrategy:
    """Base class: ``phi(s, a)`` in [0, 1], tabulated by :meth:`table`."""

    def table(self, num_states: int, num_actions: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s: int, a: int) -> float:
        return phi_value(self, s, a)


@dataclass
class QGap(InterventionStrategy):
    """Stop when the expert's soft-Q gap to its own action exceeds ``threshold`` (strictly)."""

    expert_q: SoftQTable
    threshold: float

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("Q-gap threshold must be positive")

    def gaps(self) -> np.ndarray:
        q = self.expert_q.q
        best = q[np.arange(q.shape[0]), np.argmax(q, axis=1)]
        return best[:, None] - q

    def table(self, num_states, num_actions):
        return (self.gaps() > self.threshold).astype(np.float64)


@dataclass
class StateBased(InterventionStrategy):
    phi_state: np.ndarray

    def __post_init__(self):
        self.phi_state = np.asarray(self.phi_state, dtype=np.float64)
        if np.any(self.phi_state < 0) or np.any(self.phi_state > 1):
            raise ValueError("state intervention probabilities must lie in [0, 1]")

    def table(self, num_states, num_actions):
        return np.repeat(self.phi_state[:, None], num_actions, axis=1)


@dataclass
class RandomUniform(InterventionStrategy):
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def table(self, num_states, num_actions):
        return np.full((num_states, num_actions), float(self.p))


@dataclass
class ExplicitTable(InterventionStrategy):
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if np.any(self.phi < 0) or np.any(self.phi > 1):
            raise ValueError("intervention probabilities must lie in [0, 1]")

    def table(self, num_states, num_actions):
        if self.phi.shape != (num_states, num_actions):
            raise ValueError(f"phi table shape {self.phi.shape} != {(num_states, num_actions)}")
        return self.phi


def phi_value(strategy: InterventionStrategy, s: int, a: int) -> float:
    if isinstance(strategy, QGap):
        q = strategy.expert_q.q
        if not (0 <= s < q.shape[0] and 0 <= a < q.shape[1]):
            raise IndexError(f"state-action ({s}, {a}) out of range for {q.shape}")
        return float(strategy.gaps()[s, a] > strategy.threshold)
    if isinstance(strategy, StateBased):
        return float(strategy.phi_state[s])
    if isinstance(strategy, RandomUniform):
        if s < 0 or a < 0:
            raise IndexError(f"state-action ({s}, {a}) out of range")
        return float(strategy.p)
    if isinstance(strategy, ExplicitTable):
        if not (0 <= s < strategy.phi.shape[0] and 0 <= a < strategy.phi.shape[1]):
            raise IndexError(f"state-action ({s}, {a}) out of range for {strategy.phi.shape}")
        return float(strategy.phi[s, a])
    raise TypeError(f"unknown strategy {type(strategy).__name__}")


@dataclass(frozen=True)
class TransitionRecord:
    state: int
    action: int
    next_state: int
    estop: int

    @property
    def reward(self) -> int:
        return -self.estop


@dataclass
class RolloutDataset:
    """Column-stored transition records with episode boundaries ``(start, end, cause)``."""

    states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    actions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    next_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    estops: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    episode_bounds: list[tuple[int, int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def rewards(self) -> np.ndarray:
        return -self.estops

    @property
    def num_episodes(self) -> int:
        return len(self.episode_bounds)

    def records(self) -> Iterator[TransitionRecord]:
        for s, a, sp, e in zip(self.states, self.actions, self.next_states, self.estops):
            yield TransitionRecord(int(s), int(a), int(sp), int(e))

    def episode(self, i: int) -> tuple[list[TransitionRecord], str]:
        start, end, cause = self.episode_bounds[i]
        recs = [TransitionRecord(int(self.states[k]), int(self.actions[k]), int(self.next_states[k]),
                                 int(self.estops[k])) for k in range(start, end)]
        return recs, cause

    def extend(self, other: "RolloutDataset") -> "RolloutDataset":
        off = len(self)
        return RolloutDataset(
            np.concatenate([self.states, other.states]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.next_states, other.next_states]),
            np.concatenate([self.estops, other.estops]),
            self.episode_bounds + [(s + off, e + off, c) for s, e, c in other.episode_bounds],
        )

    def validate(self) -> None:
        for start, end, cause in self.episode_bounds:
            e = self.estops[start:end]
            if end > start and np.any(e[:-1] != 0):
                raise ValueError(f"episode [{start}, {end}) has an e-stop before its final record")
            if (cause == "estop") != (end > start and e[-1] == 1):
                raise ValueError(f"episode [{start}, {end}) end cause {cause!r} disagrees with flags")

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "step", "state", "action", "next_state", "estop", "end_cause"])
            for ep, (start, end, cause) in enumerate(self.episode_bounds):
                for k in range(start, end):
                    w.writerow([ep, k - start, self.states[k], self.actions[k], self.next_states[k],
                                self.estops[k], cause])


@dataclass
class RolloutBatch:
    dataset: RolloutDataset
    returns: np.ndarray
    causes: np.ndarray


def _simulate(mdp: TabularMdp, policy, phi, uniforms, reward=None) -> RolloutBatch:
    policy = check_policy(policy, mdp)
    S, A = mdp.num_states, mdp.num_actions
    if reward is None:
        R = mdp.transition_reward
    else:
        reward = np.asarray(reward, dtype=np.float64)
        R = reward if reward.ndim == 3 else np.broadcast_to(reward[:, :, None], (S, A, S))
    st, ac, nx, es, _, lengths, cause, returns = kernels.rollout_batch(
        np.cumsum(policy, axis=1), np.cumsum(mdp.transition, axis=2), np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(phi, dtype=np.float64), mdp.terminal.astype(np.uint8), np.cumsum(mdp.initial),
        uniforms)
    ends = np.cumsum(lengths)
    starts = ends - lengths
    bounds = [(int(b), int(e), END_CAUSES[c]) for b, e, c in zip(starts, ends, cause)]
    return RolloutBatch(RolloutDataset(st, ac, nx, es, bounds), returns, cause)


def _episode_uniforms(seed: int, horizon: int) -> np.ndarray:
    return generator(seed).random(1 + 3 * horizon)


def rollout_with_estop(mdp: TabularMdp, policy, strategy: InterventionStrategy, max_horizon: int, seed: int):
    """One supervised episode: returns ``(records, end_cause)``.

    Each step draws, in order, the action, the next state and the e-stop; the
    next state is recorded even when the e-stop fires.
    """
    phi = strategy.table(mdp.num_states, mdp.num_actions)
    batch = _simulate(mdp, policy, phi, _episode_uniforms(seed, max_horizon)[None, :])
    return batch.dataset.episode(0)


def collect_dataset(mdp: TabularMdp, policy, strategy: InterventionStrategy, num_episodes: int,
                    max_horizon: int, seed: int) -> RolloutDataset:
    """Concatenate ``num_episodes`` rollouts; episode ``i`` uses seed ``child_seed(seed, i)``."""
    if num_episodes <= 0:
        raise ValueError("num_episodes must be positive")
    phi = strategy.table(mdp.num_states, mdp.num_actions)
    u = np.stack([_episode_uniforms(child_seed(seed, i), max_horizon) for i in range(num_episodes)])
    return _simulate(mdp, policy, phi, u).dataset


def batch_rollouts(mdp: TabularMdp, policy, phi, episodes: int, max_horizon: int, seed: int,
                   reward=None) -> RolloutBatch:
    """Evaluation rollouts from a single stream (common random numbers across policies)."""
    u = generator(seed).random((episodes, 1 + 3 * max_horizon))
    return _simulate(mdp, policy, phi, u, reward)


def intervention_rate(mdp: TabularMdp, policy, strategy: InterventionStrategy, episodes: int,
                      max_horizon: int, seed: int, deterministic: bool = True) -> float:
    """Fraction of episodes in which the expert stops the rollout at least once."""
    pol = greedy_policy(policy) if deterministic else policy
    phi = strategy.table(mdp.num_states, mdp.num_actions)
    batch = batch_rollouts(mdp, pol, phi, episodes, max_horizon, seed)
    return float(np.mean(batch.causes == kernels.CAUSE_ESTOP))
