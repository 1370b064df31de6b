"""Numerical checks of the imitation-gap identities behind intervention fine-tuning.

``Psi(pi) = sum_s rho*(s) KL(pi*(s) || pi(s))`` measures how far a policy is from
the expert, weighted by where the expert goes.  Its reward-space gradient is an
occupancy difference, which is what makes an intervention penalty act like a
descent step on ``Psi``.  Every closed form here has a finite-difference or
series counterpart so the two can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maxent import (SoftQTable, evaluate_maxent_objective, logsumexp, policy_from_q, soft_value_iteration,
                     value_from_q)
from .mdp import (TabularMdp, check_policy, exact_visitation, random_mdp, random_policy, state_visitation,
                  transition_matrix)
from .rng import generator
from .rql import finetune_equivalent_direct, kl_rows, residual_soft_q_iteration

FD_STEP = 1e-5
FD_TOL = 1e-12
SERIES_TERMS = 200
ROUNDING_FLOOR = 1e-12


@dataclass
class GradientReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_err: float
    max_rel_err: float
    series_err: float | None = None
    series_bound: float | None = None


def _report(analytic, numeric, **extra) -> GradientReport:
    # Relative error is taken against the largest analytic entry so that
    # near-zero entries do not blow up the ratio.
    err = float(np.max(np.abs(analytic - numeric)))
    scale = float(np.max(np.abs(analytic)))
    rel = err / scale if scale > 0 else err
    return GradientReport(analytic, numeric, err, rel, **extra)


def compute_psi(mdp: TabularMdp, expert, candidate) -> float:
    """Expert-weighted ``KL(expert || candidate)``."""
    expert = check_policy(expert, mdp)
    candidate = check_policy(candidate, mdp)
    if np.any((expert > 0) & (candidate <= 0)):
        raise ValueError("candidate is zero where the expert acts (infinite KL)")
    rho = state_visitation(mdp, expert)
    return float(max(rho @ kl_rows(expert, candidate), 0.0))


def _psi_from_logits(mdp, expert, logits) -> float:
    # Same as compute_psi but safe when the candidate underflows to zero.
    log_cand = logits - logsumexp(logits, axis=1)[:, None]
    with np.errstate(divide="ignore"):
        log_exp = np.where(expert > 0, np.log(np.where(expert > 0, expert, 1.0)), 0.0)
    kl = np.sum(np.where(expert > 0, expert * (log_exp - log_cand), 0.0), axis=1)
    return float(max(state_visitation(mdp, expert) @ kl, 0.0))


def _solved_policy(mdp, reward, alpha, tol=FD_TOL):
    return policy_from_q(soft_value_iteration(mdp, alpha, tol=tol, reward=reward))


def psi_gradient_analytic(mdp: TabularMdp, expert, candidate, alpha: float) -> np.ndarray:
    """``dPsi / dr_hat = (mu_candidate - mu_expert) / alpha`` at the reward whose soft-optimal policy is ``candidate``."""
    mu_hat = exact_visitation(mdp, candidate).mu
    mu_star = exact_visitation(mdp, expert).mu
    return (mu_hat - mu_star) / alpha


def psi_gradient_fd(mdp: TabularMdp, expert, reward_hat, alpha: float, epsilon: float = FD_STEP,
                    tol: float = FD_TOL) -> np.ndarray:
    """Central differences of ``Psi`` composed with the soft-optimal policy map."""
    r = np.array(reward_hat, dtype=np.float64)
    grad = np.zeros_like(r)
    for idx in np.ndindex(*r.shape):
        saved = r[idx]
        r[idx] = saved + epsilon
        up = compute_psi(mdp, expert, _solved_policy(mdp, r, alpha, tol))
        r[idx] = saved - epsilon
        down = compute_psi(mdp, expert, _solved_policy(mdp, r, alpha, tol))
        r[idx] = saved
        grad[idx] = (up - down) / (2.0 * epsilon)
    return grad


def psi_gradient_check(mdp: TabularMdp, expert, reward_hat, alpha: float) -> GradientReport:
    candidate = _solved_policy(mdp, reward_hat, alpha)
    return _report(psi_gradient_analytic(mdp, expert, candidate, alpha),
                   psi_gradient_fd(mdp, expert, reward_hat, alpha))


def psi_q_derivative_check(mdp: TabularMdp, expert, q_hat: SoftQTable, epsilon: float = FD_STEP) -> GradientReport:
    """``dPsi / dQ_hat = rho*(s) (pi_hat - pi*) / alpha`` against central differences."""
    expert = check_policy(expert, mdp)
    rho = state_visitation(mdp, expert)
    pi_hat = policy_from_q(q_hat)
    analytic = rho[:, None] * (pi_hat - expert) / q_hat.alpha
    q = np.array(q_hat.q, dtype=np.float64)
    numeric = np.zeros_like(q)
    for idx in np.ndindex(*q.shape):
        saved = q[idx]
        q[idx] = saved + epsilon
        up = compute_psi(mdp, expert, policy_from_q(SoftQTable(q.copy(), q_hat.alpha)))
        q[idx] = saved - epsilon
        down = compute_psi(mdp, expert, policy_from_q(SoftQTable(q.copy(), q_hat.alpha)))
        q[idx] = saved
        numeric[idx] = (up - down) / (2.0 * epsilon)
    return _report(analytic, numeric)


def soft_q_jacobian(mdp: TabularMdp, policy) -> np.ndarray:
    """``dQ / dr = (I - gamma W)^-1`` for the soft-optimal ``policy``, flattened row-major."""
    W = transition_matrix(mdp, policy)
    return np.linalg.inv(np.eye(W.shape[0]) - mdp.discount * W)


def jacobian_check(mdp: TabularMdp, candidate_reward, alpha: float, epsilon: float = FD_STEP,
                   terms: int = SERIES_TERMS) -> GradientReport:
    """Closed-form Jacobian against finite differences of the solver and a truncated series.

    ``max_rel_err`` refers to the finite-difference comparison; ``series_err`` is the
    absolute gap to ``sum_{t <= terms} gamma^t W^t`` and ``series_bound`` its tail
    bound, floored at a float64 rounding allowance.
    """
    r = np.array(candidate_reward, dtype=np.float64)
    q = soft_value_iteration(mdp, alpha, tol=FD_TOL, reward=r)
    policy = policy_from_q(q)
    J = soft_q_jacobian(mdp, policy)
    n = J.shape[0]
    numeric = np.zeros_like(J)
    flat = r.reshape(-1)
    for j in range(n):
        saved = flat[j]
        flat[j] = saved + epsilon
        up = soft_value_iteration(mdp, alpha, tol=FD_TOL, reward=r, q0=q.q).q.reshape(-1)
        flat[j] = saved - epsilon
        down = soft_value_iteration(mdp, alpha, tol=FD_TOL, reward=r, q0=q.q).q.reshape(-1)
        flat[j] = saved
        numeric[:, j] = (up - down) / (2.0 * epsilon)
    gW = mdp.discount * transition_matrix(mdp, policy)
    series = np.eye(n)
    term = np.eye(n)
    for _ in range(terms):
        term = term @ gW
        series += term
    gamma = mdp.discount
    bound = gamma ** (terms + 1) / (1.0 - gamma) + ROUNDING_FLOOR * max(1.0, float(np.max(np.abs(J))))
    return _report(J, numeric, series_err=float(np.max(np.abs(J - series))), series_bound=bound)


def characterization_check(mdp: TabularMdp, expert, reward_hat, alpha: float) -> float:
    """``|J_ME(expert | r_hat) - (E_d[V_hat] - alpha Psi(pi_hat) / (1 - gamma))|``."""
    q = soft_value_iteration(mdp, alpha, tol=FD_TOL, reward=reward_hat)
    v = value_from_q(q).v
    lhs = evaluate_maxent_objective(mdp, expert, reward_hat, alpha)
    rhs = float(mdp.initial @ v) - alpha / (1.0 - mdp.discount) * compute_psi(mdp, expert, policy_from_q(q))
    return abs(lhs - rhs)


def state_based_alignment(mdp: TabularMdp, expert, candidate, phi_state, alpha: float) -> tuple[float, float]:
    """Inner product of a state-only penalty with the gradient, two ways.

    ``lhs`` contracts the state-action gradient; ``rhs`` uses state occupancies only.
    """
    phi_state = np.asarray(phi_state, dtype=np.float64)
    if np.any(phi_state < 0) or np.any(phi_state > 1):
        raise ValueError("state intervention probabilities must lie in [0, 1]")
    grad = psi_gradient_analytic(mdp, expert, candidate, alpha)
    lhs = float(np.sum(phi_state[:, None] * grad))
    rhs = float(phi_state @ (state_visitation(mdp, candidate) - state_visitation(mdp, expert)) / alpha)
    return lhs, rhs


def alignment_predicts_improvement(mdp: TabularMdp, expert, prior, strategy, omega: float) -> tuple[float, float]:
    """Return ``(<phi, grad Psi at prior>, Psi(fine-tuned) - Psi(prior))``.

    The fine-tune is the exact residual solve with reward ``-phi`` at ``alpha = omega``.
    """
    phi = strategy.table(mdp.num_states, mdp.num_actions)
    alignment = float(np.sum(phi * psi_gradient_analytic(mdp, expert, prior, omega)))
    table, _ = residual_soft_q_iteration(mdp, prior, -phi, omega, tol=FD_TOL)
    expert = check_policy(expert, mdp)
    return alignment, _psi_from_logits(mdp, expert, table.q_tilde) - compute_psi(mdp, expert, prior)


# ----------------------------------------------------------------------------
# Instance suites


@dataclass
class CheckResult:
    name: str
    instances: int
    worst_error: float
    threshold: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28} n={self.instances:<4d} worst={self.worst_error:.3e} limit={self.threshold:.1e} {status}"


def random_instance(seed: int, index: int, max_states: int = 6, max_actions: int = 3):
    """Reproducible random MDP: Dirichlet(1) dynamics, U[-1, 1] rewards, uniform start."""
    rng = generator(seed, index)
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    gamma = float(rng.uniform(0.5, 0.9))
    return rng, random_mdp(rng, S, A, gamma)


def _check(name, errors, threshold) -> CheckResult:
    errors = np.asarray(errors, dtype=np.float64)
    worst = float(np.max(errors)) if errors.size else 0.0
    return CheckResult(name, int(errors.size), worst, threshold, bool(np.all(errors <= threshold)))


def check_residual_equivalence(n: int = 100, seed: int = 0) -> CheckResult:
    errs = []
    for i in range(n):
        rng, mdp = random_instance(seed, i)
        omega = (0.01, 0.1, 1.0)[i % 3]
        S, A = mdp.num_states, mdp.num_actions
        prior = random_policy(rng, S, A)
        r_res = rng.uniform(-1.0, 1.0, size=(S, A))
        _, pi_res = residual_soft_q_iteration(mdp, prior, r_res, omega, tol=FD_TOL)
        pi_dir = finetune_equivalent_direct(mdp, prior, r_res, omega, tol=FD_TOL)
        errs.append(0.5 * np.max(np.abs(pi_res - pi_dir).sum(axis=1)))
    return _check("residual-equivalence", errs, 1e-6)


def check_psi_gradient(n: int = 50, seed: int = 1) -> list[CheckResult]:
    rel, sums = [], []
    for i in range(n):
        rng, mdp = random_instance(seed, i)
        alpha = (0.5, 1.0, 2.0)[i % 3]
        S, A = mdp.num_states, mdp.num_actions
        expert = random_policy(rng, S, A)
        r_hat = rng.uniform(-1.0, 1.0, size=(S, A))
        rep = psi_gradient_check(mdp, expert, r_hat, alpha)
        rel.append(rep.max_rel_err)
        sums.append(abs(rep.analytic.sum()))
    return [_check("psi-gradient-fd", rel, 1e-4), _check("psi-gradient-sum", sums, 1e-10)]


def check_gap_identities(n: int = 30, seed: int = 2) -> list[CheckResult]:
    char, dq, jac_fd, jac_series, state = [], [], [], [], []
    for i in range(n):
        rng, mdp = random_instance(seed, i)
        alpha = (0.1, 1.0, 5.0)[i % 3]
        S, A = mdp.num_states, mdp.num_actions
        expert = random_policy(rng, S, A)
        r_hat = rng.uniform(-1.0, 1.0, size=(S, A))
        char.append(characterization_check(mdp, expert, r_hat, alpha))
        q_hat = SoftQTable(rng.normal(size=(S, A)), alpha)
        dq.append(psi_q_derivative_check(mdp, expert, q_hat).max_rel_err)
        rep = jacobian_check(mdp, r_hat, alpha)
        jac_fd.append(rep.max_rel_err)
        jac_series.append(rep.series_err / rep.series_bound)
        lhs, rhs = state_based_alignment(mdp, expert, policy_from_q(q_hat), rng.uniform(size=S), alpha)
        state.append(abs(lhs - rhs))
    return [_check("characterization", char, 1e-7),
            _check("psi-q-derivative", dq, 1e-5),
            _check("jacobian-fd", jac_fd, 1e-4),
            _check("jacobian-series/bound", jac_series, 1.0),
            _check("state-based-lemma", state, 1e-10)]


def check_bijections(n: int = 100, seed: int = 3, tol: float = 1e-10) -> CheckResult:
    from .maxent import q_from_policy_value, reward_from_q
    errs = []
    for i in range(n):
        rng, mdp = random_instance(seed, i, max_states=6, max_actions=3)
        alpha = (0.1, 1.0, 5.0)[i % 3]
        q = soft_value_iteration(mdp, alpha, tol=tol)
        back = q_from_policy_value(policy_from_q(q), value_from_q(q))
        errs.append(np.max(np.abs(reward_from_q(mdp, back) - mdp.reward)) / tol)
    return _check("bijection-roundtrip/tol", errs, 10.0)


def check_stationarity(n: int = 100, seed: int = 4) -> CheckResult:
    errs = []
    for i in range(n):
        rng, mdp = random_instance(seed, i, max_states=8, max_actions=4)
        policy = random_policy(rng, mdp.num_states, mdp.num_actions)
        mu = exact_visitation(mdp, policy).mu.ravel()
        W = transition_matrix(mdp, policy)
        mu0 = (mdp.initial[:, None] * policy).ravel()
        errs.append(np.max(np.abs(mu @ (np.eye(W.shape[0]) - mdp.discount * W) - (1 - mdp.discount) * mu0)))
    return _check("occupancy-stationarity", errs, 1e-9)


def check_monte_carlo(episodes: int = 200_000, seed: int = 5) -> CheckResult:
    from .mdp import monte_carlo_visitation
    rng = generator(seed)
    mdp = random_mdp(rng, 3, 2, 0.8)
    policy = random_policy(rng, 3, 2)
    horizon = int(np.ceil(np.log(1e-7) / np.log(mdp.discount)))
    mc = monte_carlo_visitation(mdp, policy, episodes, horizon, seed)
    exact = exact_visitation(mdp, policy).mu
    z = np.abs(mc.mu - exact) / np.maximum(mc.stderr, 1e-300)
    return _check("monte-carlo-occupancy/se", z.ravel(), 3.0)


def run_verification(quick: bool = False) -> list[CheckResult]:
    """Every identity check, at full instance counts unless ``quick``."""
    k = 5 if quick else 1
    results = [check_residual_equivalence(100 // k)]
    results += check_psi_gradient(50 // k)
    results += check_gap_identities(30 // k)
    results.append(check_bijections(100 // k))
    results.append(check_stationarity(100 // k))
    results.append(check_monte_carlo(200_000 // k))
    return results
