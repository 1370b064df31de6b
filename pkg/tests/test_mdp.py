import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import chain_mdp, rand_mdp, self_loop_mdp
from riftlab.mdp import (GridError, GridworldSpec, TabularMdp, build_gridworld, exact_visitation,
                         greedy_actions, initial_state_action, interior, monte_carlo_visitation,
                         per_timestep_visitation, random_policy, state_visitation, transition_matrix,
                         uniform_policy)
from riftlab.rng import generator


def test_tabular_mdp_rejects_bad_rows():
    T = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
    with pytest.raises(ValueError):
        TabularMdp(np.zeros((2, 1)), T, np.array([1.0, 0.0]), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(np.zeros((2, 1)), np.ones((2, 1, 2)) / 2, np.array([0.7, 0.7]), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(np.zeros((2, 1)), np.ones((2, 1, 2)) / 2, np.array([0.5, 0.5]), 1.0)


def test_three_cell_corridor():
    mdp = build_gridworld(GridworldSpec(["S.G"], step_reward=-0.01, goal_reward=1.0))
    assert mdp.num_states == 3 and mdp.num_actions == 4
    right = 1
    assert mdp.transition[0, right, 1] == 1.0 and mdp.transition[1, right, 2] == 1.0
    assert np.all(mdp.transition[2, :, 2] == 1.0) and np.all(mdp.reward[2] == 0.0)
    assert mdp.reward[1, right] == pytest.approx(0.99)
    assert mdp.terminal.tolist() == [False, False, True]
    assert mdp.initial.tolist() == [1.0, 0.0, 0.0]


def test_wall_is_not_a_state_and_blocks():
    spec = GridworldSpec(["S#G", "..."])
    mdp = build_gridworld(spec)
    assert mdp.num_states == 5
    assert mdp.transition[0, 1, 0] == 1.0  # moving right into the wall stays put


def test_slip_rows_sum_to_one():
    mdp = build_gridworld(GridworldSpec(["S..X", "...G", ".#.."], slip_prob=0.2))
    assert np.allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)
    # intended move 0.8, each perpendicular 0.1
    assert mdp.transition[1, 2, 5] == pytest.approx(0.8)


def test_initial_uniform_over_starts():
    mdp = build_gridworld(GridworldSpec(["S.S", "..G"]))
    assert mdp.initial[0] == mdp.initial[2] == 0.5


@pytest.mark.parametrize("rows, word", [(["..G"], "start"), (["S.."], "goal"), (["S.G", ".."], "row 1"),
                                        (["S?G"], "column 1")])
def test_grid_errors_name_the_problem(rows, word):
    with pytest.raises(GridError, match=word):
        GridworldSpec(rows)


def test_transition_matrix_trivial_cases():
    one = self_loop_mdp([0.0], 0.9)
    assert transition_matrix(one, np.ones((1, 1))).tolist() == [[1.0]]
    W = transition_matrix(chain_mdp(), np.ones((2, 1)))
    assert W.tolist() == [[0.0, 1.0], [0.0, 1.0]]


def test_transition_matrix_brute_force():
    mdp = rand_mdp(0, S=3, A=2)
    pi = uniform_policy(3, 2)
    W = transition_matrix(mdp, pi)
    for s in range(3):
        for a in range(2):
            for s2 in range(3):
                for a2 in range(2):
                    assert W[s * 2 + a, s2 * 2 + a2] == pytest.approx(mdp.transition[s, a, s2] * pi[s2, a2], abs=1e-15)


def test_transition_matrix_shape_error():
    with pytest.raises(ValueError):
        transition_matrix(rand_mdp(0, S=3, A=2), np.full((3, 3), 1 / 3))


def test_chain_visitation_half_half():
    v = exact_visitation(chain_mdp(0.5), np.ones((2, 1)))
    assert np.allclose(v.rho, [0.5, 0.5], atol=1e-12)


def test_gamma_zero_visitation_is_initial():
    mdp = rand_mdp(1, S=4, A=3, gamma=0.0)
    pi = random_policy(generator(1), 4, 3)
    assert np.allclose(exact_visitation(mdp, pi).mu, initial_state_action(mdp, pi), atol=1e-15)


def test_visitation_matches_truncated_series():
    mdp = rand_mdp(2, S=4, A=2, gamma=0.9)
    pi = random_policy(generator(2), 4, 2)
    series = sum((1 - mdp.discount) * mdp.discount ** t * per_timestep_visitation(mdp, pi, t)[1] for t in range(401))
    assert np.allclose(exact_visitation(mdp, pi).mu, series, atol=1e-8)


def test_per_timestep_base_and_chain():
    mdp = rand_mdp(3)
    pi = uniform_policy(4, 2)
    rho0, _ = per_timestep_visitation(mdp, pi, 0)
    assert np.array_equal(rho0, mdp.initial)
    T = np.zeros((5, 1, 5))
    for s in range(5):
        T[s, 0, min(s + 1, 4)] = 1.0
    line = TabularMdp(np.zeros((5, 1)), T, np.eye(5)[0], 0.9)
    rho3, _ = per_timestep_visitation(line, np.ones((5, 1)), 3)
    assert rho3.tolist() == [0, 0, 0, 1, 0]


def test_per_timestep_matches_matrix_power():
    mdp = rand_mdp(4, S=4, A=3)
    pi = random_policy(generator(4), 4, 3)
    W = transition_matrix(mdp, pi)
    mu = initial_state_action(mdp, pi).ravel()
    for _ in range(5):
        mu = mu @ W
    _, mu5 = per_timestep_visitation(mdp, pi, 5)
    assert np.allclose(mu5.ravel(), mu, atol=1e-14)
    assert mu5.sum() == pytest.approx(1.0)


def test_monte_carlo_self_loop_and_determinism():
    one = self_loop_mdp([0.0], 0.5)
    v = monte_carlo_visitation(one, np.ones((1, 1)), 10, 40, seed=0)
    assert v.mu[0, 0] == pytest.approx(1.0, abs=1e-11)
    mdp = rand_mdp(5, S=3, A=2, gamma=0.8)
    pi = uniform_policy(3, 2)
    a = monte_carlo_visitation(mdp, pi, 500, 80, seed=7)
    b = monte_carlo_visitation(mdp, pi, 500, 80, seed=7)
    assert a.mu.tobytes() == b.mu.tobytes()
    assert a.mu.sum() <= 1.0 + 1e-12 and a.mu.sum() >= 1.0 - 0.8 ** 80 - 1e-12


def test_monte_carlo_errors_and_warning():
    mdp = rand_mdp(6, S=3, A=2, gamma=0.9)
    with pytest.raises(ValueError):
        monte_carlo_visitation(mdp, uniform_policy(3, 2), 0, 10, seed=0)
    with pytest.warns(UserWarning):
        monte_carlo_visitation(mdp, uniform_policy(3, 2), 5, 10, seed=0)


def test_monte_carlo_within_three_se():
    mdp = rand_mdp(7, S=3, A=2, gamma=0.8)
    pi = random_policy(generator(7), 3, 2)
    mc = monte_carlo_visitation(mdp, pi, 200_000, 75, seed=11)
    exact = exact_visitation(mdp, pi).mu
    assert np.all(np.abs(mc.mu - exact) <= 3 * mc.stderr)


def test_monte_carlo_error_shrinks():
    mdp = rand_mdp(8, S=3, A=2, gamma=0.8)
    pi = random_policy(generator(8), 3, 2)
    exact = exact_visitation(mdp, pi).mu
    small = np.abs(monte_carlo_visitation(mdp, pi, 2_000, 75, seed=1).mu - exact).max()
    large = np.abs(monte_carlo_visitation(mdp, pi, 200_000, 75, seed=1).mu - exact).max()
    assert large < small


def test_greedy_lowest_index_tie_break():
    assert greedy_actions(np.array([[0.25, 0.25, 0.25, 0.25], [0.1, 0.45, 0.45, 0.0]])).tolist() == [0, 1]


def test_interior_floor():
    p = interior(np.array([[1.0, 0.0, 0.0]]))
    assert p.min() >= 1e-6 - 1e-18 and p.sum() == pytest.approx(1.0)


@st.composite
def mdp_and_policy(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    S = draw(st.integers(1, 8))
    A = draw(st.integers(1, 4))
    gamma = draw(st.floats(0.0, 0.99))
    rng = generator(seed)
    from riftlab.mdp import random_mdp
    return random_mdp(rng, S, A, gamma), random_policy(rng, S, A)


@given(mdp_and_policy())
def test_property_transition_rows_stochastic(mp):
    mdp, pi = mp
    assert np.allclose(transition_matrix(mdp, pi).sum(axis=1), 1.0, atol=1e-9)


@given(mdp_and_policy())
def test_property_stationarity(mp):
    mdp, pi = mp
    v = exact_visitation(mdp, pi)
    W = transition_matrix(mdp, pi)
    lhs = v.mu.ravel() @ (np.eye(W.shape[0]) - mdp.discount * W)
    assert np.allclose(lhs, (1 - mdp.discount) * initial_state_action(mdp, pi).ravel(), atol=1e-9)
    assert v.mu.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(v.rho, v.mu.sum(axis=1), atol=1e-12)
    assert np.allclose(v.rho, state_visitation(mdp, pi), atol=1e-9)


@given(mdp_and_policy(), st.integers(0, 60))
def test_property_partial_sums_converge(mp, T):
    mdp, pi = mp
    g = mdp.discount
    partial = sum((1 - g) * g ** t * per_timestep_visitation(mdp, pi, t)[1] for t in range(T + 1))
    assert np.abs(partial - exact_visitation(mdp, pi).mu).sum() <= g ** (T + 1) + 1e-9
