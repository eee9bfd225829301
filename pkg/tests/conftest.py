import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from etairl.envs import chain_env, random_mdp, random_policy
from etairl.mdp import FiniteMdp, Policy

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def two_state_chain():
    """Deterministic two-state chain, gamma 0.5, start in state 0, cost 1 in state 0 and 0 in state 1."""
    mdp = chain_env(2, slip=0.0, gamma=0.5)
    return mdp.with_cost(np.array([[1.0, 1.0], [0.0, 0.0]]))


@pytest.fixture
def always_switch():
    # chain actions: 0 = left, 1 = right; state 0 goes right, state 1 goes left
    return Policy.deterministic([1, 0], 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def draw_instance(seed, n_states=3, n_actions=2, gamma=None):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states, n_actions, gamma=gamma)
    return mdp, random_policy(rng, n_states, n_actions)


def single_state_mdp(costs, gamma):
    costs = np.asarray(costs, dtype=float)
    return FiniteMdp(np.ones((1, costs.size, 1)), costs[None, :], gamma, np.ones(1))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
