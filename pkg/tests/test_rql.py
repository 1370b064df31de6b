import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import rand_mdp
from riftlab.intervention import ExplicitTable, QGap, RandomUniform
from riftlab.maxent import policy_from_q, soft_value_iteration
from riftlab.mdp import GridworldSpec, build_gridworld, random_mdp, random_policy, uniform_policy, state_visitation
from riftlab.rng import generator
from riftlab.rql import (evaluate_j_ft, evaluate_j_int, finetune_equivalent_direct, kl_rows,
                         residual_soft_q_iteration)


def tv(a, b):
    return 0.5 * np.max(np.abs(a - b).sum(axis=1))


def setup(seed, S=4, A=3):
    rng = generator(seed)
    mdp = random_mdp(rng, S, A, 0.9)
    return rng, mdp, random_policy(rng, S, A)


def test_zero_and_constant_residual_recover_prior():
    _, mdp, prior = setup(0)
    for c in (0.0, -1.0, 3.7):
        _, pi = residual_soft_q_iteration(mdp, prior, np.full((4, 3), c), 0.3)
        assert tv(pi, prior) <= 1e-8
        assert tv(finetune_equivalent_direct(mdp, prior, np.full((4, 3), c), 0.3), prior) <= 1e-8


def test_matches_direct_solve():
    rng, mdp, prior = setup(1)
    r = rng.uniform(-1, 1, size=(4, 3))
    _, a = residual_soft_q_iteration(mdp, prior, r, 0.3, tol=1e-12)
    assert tv(a, finetune_equivalent_direct(mdp, prior, r, 0.3, tol=1e-12)) <= 1e-6


def test_uniform_prior_is_plain_maxent():
    rng, mdp, _ = setup(2)
    r = rng.uniform(-1, 1, size=(4, 3))
    direct = finetune_equivalent_direct(mdp, uniform_policy(4, 3), r, 0.2, tol=1e-12)
    plain = policy_from_q(soft_value_iteration(mdp, 0.2, tol=1e-12, reward=r))
    assert tv(direct, plain) <= 1e-9


def test_table_fields():
    rng, mdp, prior = setup(3)
    table, pi = residual_soft_q_iteration(mdp, prior, rng.uniform(-1, 0, size=(4, 3)), 0.5)
    assert table.alpha == table.omega == 0.5
    assert np.allclose(np.exp(table.prior_log_probs).sum(axis=1), 1.0, atol=1e-9)
    assert np.all(np.isfinite(table.q_tilde))
    assert np.allclose(pi.sum(axis=1), 1.0)


def test_errors():
    _, mdp, prior = setup(4)
    with pytest.raises(ValueError):
        residual_soft_q_iteration(mdp, prior, np.zeros((4, 3)), 0.0)
    bad = prior.copy()
    bad[0] = [1.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        residual_soft_q_iteration(mdp, bad, np.zeros((4, 3)), 0.3)
    with pytest.raises(ValueError):
        evaluate_j_ft(mdp, prior, np.zeros((4, 3)), bad, 1.0)


def test_j_ft_examples():
    _, mdp, prior = setup(5)
    r = generator(5).normal(size=(4, 3))
    rho = state_visitation(mdp, prior)
    plain = rho @ (prior * r).sum(axis=1) / (1 - mdp.discount)
    assert evaluate_j_ft(mdp, prior, r, prior, 1.0) == pytest.approx(plain, abs=1e-12)
    pi = random_policy(generator(55), 4, 3)
    expected = -(state_visitation(mdp, pi) @ kl_rows(pi, prior)) / (1 - mdp.discount)
    j = evaluate_j_ft(mdp, pi, np.zeros((4, 3)), prior, 1.0)
    assert j == pytest.approx(expected, abs=1e-12) and j < 0
    assert evaluate_j_ft(mdp, prior, np.zeros((4, 3)), prior, 1.0) == pytest.approx(0.0, abs=1e-14)


def test_j_int_examples():
    _, mdp, prior = setup(6)
    pi = random_policy(generator(66), 4, 3)
    kl = state_visitation(mdp, pi) @ kl_rows(pi, prior) / (1 - mdp.discount)
    assert evaluate_j_int(mdp, pi, RandomUniform(0.0), prior, 0.2) == pytest.approx(-0.2 * kl, abs=1e-12)
    assert evaluate_j_int(mdp, pi, RandomUniform(1.0), prior, 0.2) == pytest.approx(
        -1 / (1 - mdp.discount) - 0.2 * kl, abs=1e-10)


def test_j_int_qgap_on_grid():
    mdp = build_gridworld(GridworldSpec(["S..X", "...G"]))
    q = soft_value_iteration(mdp, 0.01)
    strat = QGap(q, 0.05)
    prior = random_policy(generator(7), mdp.num_states, 4)
    phi = strat.table(mdp.num_states, 4)
    assert evaluate_j_int(mdp, prior, strat, prior, 0.1) == evaluate_j_ft(mdp, prior, -phi, prior, 0.1)
    assert evaluate_j_int(mdp, prior, strat, prior, 0.1) == evaluate_j_int(mdp, prior, ExplicitTable(phi), prior, 0.1)


def test_fine_tuned_policy_maximises_j_ft():
    rng, mdp, prior = setup(8)
    r = rng.uniform(-1, 0, size=(4, 3))
    omega = 0.3
    _, pi = residual_soft_q_iteration(mdp, prior, r, omega, tol=1e-12)
    best = evaluate_j_ft(mdp, pi, r, prior, omega)
    for k in range(30):
        noise = generator(8, k).normal(scale=0.3, size=pi.shape)
        other = pi * np.exp(noise)
        other /= other.sum(axis=1, keepdims=True)
        assert best >= evaluate_j_ft(mdp, other, r, prior, omega) - 1e-6


def test_large_omega_stays_near_prior():
    rng, mdp, prior = setup(9)
    _, pi = residual_soft_q_iteration(mdp, prior, rng.uniform(-1, 0, size=(4, 3)), 1e3)
    assert tv(pi, prior) <= 1e-2


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.01, 0.1, 1.0]), st.floats(-5, 5))
def test_property_equivalence_and_constant_shift(seed, omega, c):
    rng = generator(seed)
    S, A = int(rng.integers(1, 7)), int(rng.integers(1, 4))
    mdp = random_mdp(rng, S, A, float(rng.uniform(0, 0.9)))
    prior = random_policy(rng, S, A)
    r = rng.uniform(-1, 1, size=(S, A))
    _, a = residual_soft_q_iteration(mdp, prior, r, omega, tol=1e-12)
    assert tv(a, finetune_equivalent_direct(mdp, prior, r, omega, tol=1e-12)) <= 1e-6
    _, b = residual_soft_q_iteration(mdp, prior, r + c, omega, tol=1e-12)
    assert tv(a, b) <= 1e-8
