"""Residual intervention fine-tuning, the RLIF baseline, priors and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .intervention import InterventionStrategy, RandomUniform, RolloutDataset, batch_rollouts, collect_dataset
from .intervention import intervention_rate as _intervention_rate
from .maxent import ConvergenceError, policy_from_q, soft_value_iteration
from .mdp import PRIOR_EPS, TabularMdp, check_policy, greedy_policy, interior, state_visitation
from .rng import child_seed, generator
from .rql import check_interior, kl_rows, residual_soft_q_iteration

BOOTSTRAP_MODES = ("truncation", "termination")
FIT_MODES = ("model", "sample")


@dataclass
class RiftConfig:
    """Training-loop settings.

    ``omega = 0`` selects the RLIF baseline, which runs max-ent RL on the
    intervention reward at ``rlif_temperature``.  ``fit_mode`` picks the
    model-based fit (true dynamics, estimated ``phi``) or the sample-based fitted
    iteration; termination bootstrapping needs the latter.
    """

    omega: float = 0.001
    rounds: int = 10
    episodes_per_round: int = 20
    max_horizon: int = 50
    bootstrap_mode: str = "truncation"
    fit_mode: str = "model"
    rlif_temperature: float = 0.01
    phi_default: float = 0.0
    stop_intervention_rate: float | None = None
    fresh_data_per_round: bool = False
    zero_residual: bool = False
    eval_episodes: int = 500
    success_threshold: float = 0.5
    tol: float = 1e-10
    max_iters: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.rounds < 1 or self.episodes_per_round < 1 or self.max_horizon < 1:
            raise ValueError("rounds, episodes_per_round and max_horizon must be positive")
        if self.rlif_temperature <= 0:
            raise ValueError("rlif_temperature must be positive")
        if self.bootstrap_mode not in BOOTSTRAP_MODES:
            raise ValueError(f"bootstrap_mode must be one of {BOOTSTRAP_MODES}")
        if self.fit_mode not in FIT_MODES:
            raise ValueError(f"fit_mode must be one of {FIT_MODES}")
        if self.bootstrap_mode == "termination" and self.fit_mode != "sample":
            raise ValueError("termination bootstrapping requires fit_mode='sample'")


@dataclass
class RoundMetrics:
    round: int
    success_rate: float
    mean_return: float
    intervention_rate: float
    kl_to_prior: float
    dataset_size: int


@dataclass
class RunMetrics:
    rounds: list[RoundMetrics] = field(default_factory=list)

    @property
    def final(self) -> RoundMetrics:
        return self.rounds[-1]

    @property
    def initial(self) -> RoundMetrics:
        return self.rounds[0]


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    exact_return: float | None = None


def estimate_phi(dataset: RolloutDataset, num_states: int, num_actions: int, default: float = 0.0) -> np.ndarray:
    """Empirical e-stop frequency per state-action; ``default`` where unvisited."""
    idx = dataset.states * num_actions + dataset.actions
    n = np.bincount(idx, minlength=num_states * num_actions).astype(np.float64)
    k = np.bincount(idx, weights=dataset.estops, minlength=num_states * num_actions)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(n > 0, k / np.where(n > 0, n, 1.0), default)
    return phi.reshape(num_states, num_actions)


def survival_bonus(omega: float, num_actions: int) -> float:
    """Per-step prior log-likelihood measured against the uniform policy's ``-log |A|``.

    Adds a constant to every reward, so it cannot move a truncation-mode fit;
    under termination it is the continuation value an e-stop forfeits.
    """
    return omega * math.log(num_actions)


def fit_residual_from_dataset(mdp: TabularMdp, prior, dataset: RolloutDataset, config: RiftConfig) -> np.ndarray:
    """Fit the fine-tuned policy ``pi(a|s) ~ pi0(a|s) exp(Q_R(s, a) / omega)`` to ``dataset``."""
    if config.omega <= 0:
        raise ValueError("residual fitting needs omega > 0; use rlif_train for omega = 0")
    prior = check_interior(prior)
    S, A = mdp.num_states, mdp.num_actions
    if config.fit_mode == "model":
        phi_hat = estimate_phi(dataset, S, A, config.phi_default)
        r_res = np.zeros((S, A)) if config.zero_residual else -phi_hat
        _, policy = residual_soft_q_iteration(mdp, prior, r_res, config.omega, config.tol, config.max_iters)
        return policy
    return _fit_sample_based(mdp, prior, dataset, config)


def _fit_sample_based(mdp, prior, dataset, config):
    # Fitted iteration over the records, aggregated into an empirical model.
    # Unvisited cells stay at the value of following the prior under the default reward.
    S, A = mdp.num_states, mdp.num_actions
    omega, gamma = config.omega, mdp.discount
    bonus = survival_bonus(omega, A)
    e = dataset.estops.astype(np.float64)
    if config.zero_residual:
        e_reward = np.zeros_like(e)
        default_reward = 0.0
    else:
        e_reward = e
        default_reward = config.phi_default
    idx = dataset.states * A + dataset.actions
    n = np.bincount(idx, minlength=S * A).astype(np.float64)
    mean_r = np.bincount(idx, weights=-e_reward, minlength=S * A)
    boot = np.ones_like(e) if config.bootstrap_mode == "truncation" else 1.0 - e
    P = np.zeros((S * A, S))
    np.add.at(P, (idx, dataset.next_states), boot)
    visited = n > 0
    held = (bonus - default_reward) / (1.0 - gamma)
    r_hat = np.full(S * A, held)
    r_hat[visited] = mean_r[visited] / n[visited] + bonus
    P[visited] /= n[visited][:, None]
    q, it, res = kernels.soft_bellman(P.reshape(S, A, S), r_hat.reshape(S, A), omega * np.log(prior), gamma,
                                      omega, np.full((S, A), held), config.tol, config.max_iters)
    if res > config.tol:
        raise ConvergenceError(res, it)
    z = (q + omega * np.log(prior)) / omega
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _fit_rlif(mdp: TabularMdp, dataset: RolloutDataset, config: RiftConfig) -> np.ndarray:
    phi_hat = estimate_phi(dataset, mdp.num_states, mdp.num_actions, config.phi_default)
    q = soft_value_iteration(mdp, config.rlif_temperature, tol=config.tol, max_iters=config.max_iters,
                             reward=-phi_hat)
    return policy_from_q(q)


def kl_to_prior(mdp: TabularMdp, policy, prior) -> float:
    """Visitation-weighted ``sum_s rho^pi(s) KL(pi(s) || pi0(s))``."""
    rho = state_visitation(mdp, policy)
    return float(max(rho @ kl_rows(policy, prior), 0.0))


def evaluate_policy(mdp: TabularMdp, policy, eval_reward=None, episodes: int = 500, max_horizon: int = 50,
                    success_threshold: float = 0.5, seed: int = 0, deterministic: bool = True) -> EvalResult:
    """Roll out without interventions; success means undiscounted return >= threshold."""
    policy = check_policy(policy, mdp)
    pol = greedy_policy(policy) if deterministic else policy
    batch = batch_rollouts(mdp, pol, np.zeros_like(pol), episodes, max_horizon, seed, eval_reward)
    exact = None
    if not deterministic:
        r = mdp.reward if eval_reward is None else np.asarray(eval_reward)
        if r.ndim == 3:
            r = np.einsum("san,san->sa", mdp.transition, r)
        rho = state_visitation(mdp, pol)
        exact = float(rho @ (pol * r).sum(axis=1) / (1.0 - mdp.discount))
    return EvalResult(float(np.mean(batch.returns >= success_threshold)), float(np.mean(batch.returns)), exact)


def _metrics(mdp, policy, prior, strategy, config, eval_reward, rnd, size, eval_seed):
    ev = evaluate_policy(mdp, policy, eval_reward, config.eval_episodes, config.max_horizon,
                         config.success_threshold, eval_seed, deterministic=True)
    rate = _intervention_rate(mdp, policy, strategy, config.eval_episodes, config.max_horizon, eval_seed)
    return RoundMetrics(rnd, ev.success_rate, ev.mean_return, rate, kl_to_prior(mdp, policy, prior), size)


def _train(mdp, prior, strategy, config, eval_reward, fit):
    eval_seed = child_seed(config.seed, 1_000_003)
    policy = prior
    data = RolloutDataset()
    metrics = RunMetrics([_metrics(mdp, policy, prior, strategy, config, eval_reward, 0, 0, eval_seed)])
    for k in range(1, config.rounds + 1):
        new = collect_dataset(mdp, policy, strategy, config.episodes_per_round, config.max_horizon,
                              child_seed(config.seed, k))
        data = new if config.fresh_data_per_round else data.extend(new)
        policy = fit(data)
        metrics.rounds.append(_metrics(mdp, policy, prior, strategy, config, eval_reward, k, len(data), eval_seed))
        stop = config.stop_intervention_rate
        if stop is not None and metrics.final.intervention_rate < stop:
            break
    return policy, metrics


def rift_loop(mdp: TabularMdp, prior, strategy: InterventionStrategy, config: RiftConfig, eval_reward=None):
    """Alternate e-stop data collection and residual fits; returns ``(policy, RunMetrics)``.

    Data accumulates across rounds unless ``fresh_data_per_round`` is set.
    """
    prior = check_policy(prior, mdp)
    if np.min(prior) < PRIOR_EPS:
        prior = interior(prior)
    if config.omega == 0:
        return _train(mdp, prior, strategy, config, eval_reward, lambda d: _fit_rlif(mdp, d, config))
    return _train(mdp, prior, strategy, config, eval_reward,
                  lambda d: fit_residual_from_dataset(mdp, prior, d, config))


def rlif_train(mdp: TabularMdp, strategy, config: RiftConfig, prior=None, eval_reward=None):
    """Intervention-reward RL without prior regularisation.

    ``strategy`` may also be a ready :class:`RolloutDataset`, in which case a
    single fit is returned.  Data collection starts from ``prior`` (uniform when
    omitted); the fit itself never sees the prior.
    """
    cfg = replace(config, omega=0.0, bootstrap_mode="truncation", fit_mode="model")
    if isinstance(strategy, RolloutDataset):
        return _fit_rlif(mdp, strategy, cfg)
    start = prior if prior is not None else np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)
    policy, _ = rift_loop(mdp, start, strategy, cfg, eval_reward)
    return policy


def prior_from_demos(mdp: TabularMdp, expert_policy, num_demos: int, smoothing: float, max_horizon: int,
                     seed: int, base_concentration: float | None = None) -> np.ndarray:
    """Smoothed maximum-likelihood behaviour cloning from expert rollouts.

    ``pi0(a|s) = (count(s, a) + |A| smoothing b(a|s)) / (count(s) + |A| smoothing)``
    with ``b`` uniform by default.  With ``base_concentration`` set, each row of
    ``b`` is drawn from a symmetric Dirichlet instead, so states the demos never
    reach get a definite (arbitrary) preference rather than an exact tie.
    """
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    S, A = mdp.num_states, mdp.num_actions
    counts = np.zeros((S, A))
    if num_demos > 0:
        data = collect_dataset(mdp, expert_policy, RandomUniform(0.0), num_demos, max_horizon, seed)
        np.add.at(counts, (data.states, data.actions), 1.0)
    if base_concentration is None:
        base = np.full((S, A), 1.0 / A)
    else:
        base = generator(seed, 1).dirichlet(np.full(A, float(base_concentration)), size=S)
    prior = (counts + A * smoothing * base) / (counts.sum(axis=1, keepdims=True) + A * smoothing)
    return prior if prior.min() >= PRIOR_EPS else interior(prior)


def prior_from_intervention_rl(mdp: TabularMdp, strategy: InterventionStrategy, config: RiftConfig,
                               eval_reward=None) -> np.ndarray:
    """The RLIF policy, mixed into the simplex interior so it can serve as a prior."""
    return interior(rlif_train(mdp, strategy, config, eval_reward=eval_reward))


def random_prior(num_states: int, num_actions: int, concentration: float = 1.0, seed: int = 0) -> np.ndarray:
    """Rows from a symmetric Dirichlet; ``concentration = inf`` gives the uniform policy."""
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    if math.isinf(concentration):
        return np.full((num_states, num_actions), 1.0 / num_actions)
    pi = generator(seed).dirichlet(np.full(num_actions, concentration), size=num_states)
    return interior(pi)
