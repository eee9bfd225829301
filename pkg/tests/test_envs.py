import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etairl.envs import (
    KING_MOVES,
    LEFT,
    RIGHT,
    chain_env,
    four_lakes_env,
    make_expert,
    multitask_mdp,
    random_mdp,
    random_policy,
)
from etairl.evaluation import exact_normalized_return
from etairl.mdp import Policy, load_trajectories, save_trajectories, validate_mdp
from etairl.soft_rl import SoftRlConfig, policy_evaluation, soft_value_iteration


def goal_occupancy(mdp, pi):
    """Discounted fraction of time spent in the last state, from a direct linear solve."""
    P_pi = np.einsum("sa,sat->st", pi.probs, mdp.transition)
    occ = (1 - mdp.gamma) * np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * P_pi).T, mdp.p0)
    return occ[-1]


# ---------------------------------------------------------------- chain


@given(st.integers(2, 25), st.floats(0.0, 1.0), st.floats(0.01, 0.99))
def test_chain_is_valid(n, slip, gamma):
    mdp = chain_env(n, slip, gamma)
    assert validate_mdp(mdp).ok
    assert np.allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)


def test_two_state_chain_layout():
    mdp = chain_env(2, 0.0, 0.5)
    assert np.array_equal(mdp.transition[0, RIGHT], [0, 1])
    assert np.array_equal(mdp.transition[1, LEFT], [1, 0])
    assert np.array_equal(mdp.transition[0, LEFT], [1, 0])
    assert np.array_equal(mdp.cost, [[1, 1], [0, 0]])
    assert np.array_equal(mdp.p0, [1, 0])


def test_chain_rejects_bad_arguments():
    with pytest.raises(ValueError):
        chain_env(1)
    with pytest.raises(ValueError):
        chain_env(5, slip=1.5)


def test_farsighted_policy_reaches_goal_and_greedy_one_does_not():
    mdp = chain_env(20, 0.1, 0.99)
    _, farsighted = soft_value_iteration(mdp)
    _, greedy = soft_value_iteration(mdp.with_gamma(1e-9))
    # every non-goal pair costs the same, so a one-step planner has no preference and wanders
    assert np.allclose(greedy.probs[:-1], 0.5, atol=1e-6)
    assert np.all(farsighted.probs[:-1, RIGHT] > 0.99)
    assert goal_occupancy(mdp, farsighted) > 0.5
    assert goal_occupancy(mdp, greedy) < 0.05


# ---------------------------------------------------------------- four lakes


def test_lakes_are_removed_and_grid_is_valid():
    space = four_lakes_env(7)
    assert len(space.cells) == 49 - 4
    assert (1, 1) not in space.cells
    assert validate_mdp(space.mdp).ok
    assert space.mdp.n_actions == len(KING_MOVES)


def test_move_into_lake_is_blocked():
    space = four_lakes_env(7)
    index = {c: i for i, c in enumerate(space.cells)}
    down = KING_MOVES.index((1, 0))
    s = index[(0, 1)]
    assert space.mdp.transition[s, down, s] == 1.0
    assert space.mdp.transition[index[(0, 0)], KING_MOVES.index((-1, 0)), index[(0, 0)]] == 1.0


def test_empty_grid_policy_reaches_centre():
    space = four_lakes_env(3, lakes=[], gamma=0.9, neighborhood="cross")
    _, pi = soft_value_iteration(space.mdp)
    index = {c: i for i, c in enumerate(space.cells)}
    moves = KING_MOVES[:5]
    for cell in space.cells:
        nxt = tuple(np.add(cell, moves[int(pi.probs[index[cell]].argmax())]))
        if cell == (1, 1):
            continue
        assert abs(nxt[0] - 1) + abs(nxt[1] - 1) < abs(cell[0] - 1) + abs(cell[1] - 1)


def test_target_must_be_dry():
    with pytest.raises(ValueError):
        four_lakes_env(7, targets=[(1, 1)])


@pytest.mark.parametrize("mirror", ["rows", "cols", "transpose"])
def test_solution_respects_grid_symmetry(mirror):
    n = 7
    space = four_lakes_env(n)
    value, pi = soft_value_iteration(space.mdp)
    index = {c: i for i, c in enumerate(space.cells)}
    flip_cell = {
        "rows": lambda r, c: (n - 1 - r, c),
        "cols": lambda r, c: (r, n - 1 - c),
        "transpose": lambda r, c: (c, r),
    }[mirror]
    flip_move = {
        "rows": lambda dr, dc: (-dr, dc),
        "cols": lambda dr, dc: (dr, -dc),
        "transpose": lambda dr, dc: (dc, dr),
    }[mirror]
    action_map = [KING_MOVES.index(flip_move(*m)) for m in KING_MOVES]
    for cell, i in index.items():
        j = index[flip_cell(*cell)]
        assert value[i] == pytest.approx(value[j], abs=1e-6)
        assert np.allclose(pi.probs[i], pi.probs[j][action_map], atol=1e-6)


# ---------------------------------------------------------------- multitask product


def test_multitask_structure():
    space = four_lakes_env(5, targets=[(2, 2), (0, 0)])
    mdp = multitask_mdp(space.mdp, space.task_costs, [0.25, 0.75])
    S = space.mdp.n_states
    assert mdp.n_states == 2 * S
    assert np.all(mdp.transition[:S, :, S:] == 0) and np.all(mdp.transition[S:, :, :S] == 0)
    assert mdp.p0[:S].sum() == pytest.approx(0.25) and mdp.p0[S:].sum() == pytest.approx(0.75)
    assert validate_mdp(mdp).ok


def test_single_task_product_is_the_base():
    space = four_lakes_env(5)
    mdp = multitask_mdp(space.mdp, space.task_costs)
    for attr in ("transition", "cost", "p0"):
        assert np.array_equal(getattr(mdp, attr), getattr(space.mdp, attr))


@given(st.integers(0, 10_000))
def test_product_commutes_with_policy_evaluation(seed):
    rng = np.random.default_rng(seed)
    base = random_mdp(rng, 4, 2)
    costs = [rng.random((4, 2)) for _ in range(3)]
    pi = random_policy(rng, 4, 2)
    product = multitask_mdp(base, costs)
    # a task-blind policy acts identically in every copy
    blind = Policy(np.tile(pi.probs, (3, 1)))
    joint = policy_evaluation(product, blind)
    for k, cost in enumerate(costs):
        assert np.allclose(joint[4 * k : 4 * (k + 1)], policy_evaluation(base, pi, cost=cost), atol=1e-10)


# ---------------------------------------------------------------- experts


def test_expert_is_its_own_benchmark(tmp_path):
    mdp = chain_env(6, 0.1, 0.9)
    expert = make_expert(mdp, n_rollouts=10, horizon=20, seed=4)
    assert exact_normalized_return(mdp, expert.policy, expert.policy).value == pytest.approx(0.0, abs=1e-12)
    assert expert.buffer.n_trajectories == 10
    for traj in expert.buffer.trajectories:
        # on-policy: every recorded action has positive probability under the expert
        assert np.all(expert.policy.probs[traj.states, traj.actions] > 0)
        assert np.array_equal(traj.costs, mdp.cost[traj.states, traj.actions])
    path = tmp_path / "expert.jsonl"
    save_trajectories(expert.buffer.trajectories, path)
    loaded = load_trajectories(path)
    assert all(np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions) for a, b in zip(loaded, expert.buffer.trajectories))


def test_expert_depends_on_seed_only():
    mdp = chain_env(6, 0.1, 0.9)
    a, b = make_expert(mdp, n_rollouts=5, horizon=10, seed=1), make_expert(mdp, n_rollouts=5, horizon=10, seed=1)
    assert all(np.array_equal(x.states, y.states) for x, y in zip(a.buffer.trajectories, b.buffer.trajectories))


@pytest.mark.parametrize("seed", range(5))
def test_random_instances_are_valid(seed):
    rng = np.random.default_rng(seed)
    assert validate_mdp(random_mdp(rng, 4, 3)).ok
    pi = random_policy(rng, 4, 3)
    assert np.allclose(pi.probs.sum(axis=1), 1.0)
