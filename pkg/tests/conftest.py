from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riftlab.mdp import TabularMdp, random_mdp
from riftlab.rng import generator

settings.register_profile("riftlab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("riftlab")

ROOT = Path(__file__).resolve().parents[1]
MAZE_CONFIG = ROOT / "configs" / "maze.toml"


def chain_mdp(gamma=0.5):
    """Two states, one action: s0 -> s1 -> s1."""
    T = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
    return TabularMdp(np.zeros((2, 1)), T, np.array([1.0, 0.0]), gamma)


def self_loop_mdp(rewards, gamma):
    """One state, one self-loop per action."""
    r = np.asarray(rewards, dtype=float).reshape(1, -1)
    return TabularMdp(r, np.ones((1, r.shape[1], 1)), np.array([1.0]), gamma)


def rand_mdp(seed, S=4, A=2, gamma=0.9):
    return random_mdp(generator(seed), S, A, gamma)


@pytest.fixture
def maze_config():
    return MAZE_CONFIG


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
