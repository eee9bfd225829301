"""Tabular benchmark environments and expert generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mdp import FiniteMdp, Policy
from .sampling import ReplayBuffer, rollouts
from .soft_rl import SoftRlConfig, soft_value_iteration

LEFT, RIGHT = 0, 1

KING_MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))
CROSS_MOVES = KING_MOVES[:5]


def chain_env(n: int = 20, slip: float = 0.1, gamma: float = 0.99, start: int = 0) -> FiniteMdp:
    """Chain of ``n`` states with actions left/right.

    The intended move happens with probability ``1 - slip``, the opposite
    move otherwise; moves off either end leave the agent in place. Every
    pair costs 1 except those at the rightmost state, which cost 0.
    """
    if n < 2:
        raise ValueError("a chain needs at least two states")
    if not 0.0 <= slip <= 1.0:
        raise ValueError("slip must be a probability")
    P = np.zeros((n, 2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        P[s, LEFT, left] += 1.0 - slip
        P[s, LEFT, right] += slip
        P[s, RIGHT, right] += 1.0 - slip
        P[s, RIGHT, left] += slip
    cost = np.ones((n, 2))
    cost[n - 1] = 0.0
    p0 = np.zeros(n)
    p0[start] = 1.0
    return FiniteMdp(P, cost, gamma, p0)


@dataclass(frozen=True)
class TaskSpace:
    """A shared transition structure with one cost table per task (target)."""

    mdp: FiniteMdp
    task_costs: tuple[np.ndarray, ...]
    task_probs: np.ndarray
    cells: tuple[tuple[int, int], ...] = field(default=())
    targets: tuple[tuple[int, int], ...] = field(default=())

    @property
    def n_tasks(self) -> int:
        return len(self.task_costs)

    def task_mdp(self, task: int) -> FiniteMdp:
        return self.mdp.with_cost(self.task_costs[task])


def default_lakes(grid_size: int) -> list[tuple[int, int]]:
    """Four lakes placed symmetrically around the centre of the grid."""
    lo, hi = grid_size // 4, grid_size - 1 - grid_size // 4
    return [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]


def four_lakes_env(
    grid_size: int = 7,
    lakes=None,
    targets=None,
    gamma: float = 0.95,
    neighborhood: str = "king",
) -> TaskSpace:
    """Grid world with impassable lake cells and one task per target cell.

    Actions are "stay" plus the unit moves of the chosen neighbourhood
    (``"king"``: 8 neighbours, ``"cross"``: 4). Moves into a lake or off the
    grid leave the agent in place. Task costs are 0 at the task's target and
    1 elsewhere. The start law is uniform over dry cells.
    """
    lakes = default_lakes(grid_size) if lakes is None else [tuple(c) for c in lakes]
    moves = {"king": KING_MOVES, "cross": CROSS_MOVES}[neighborhood]
    cells = [(r, c) for r in range(grid_size) for c in range(grid_size) if (r, c) not in set(lakes)]
    index = {cell: i for i, cell in enumerate(cells)}
    if targets is None:
        mid = grid_size // 2
        targets = [(mid, mid)]
    targets = [tuple(t) for t in targets]
    for t in targets:
        if t not in index:
            raise ValueError(f"target {t} is not a dry cell")

    S, A = len(cells), len(moves)
    P = np.zeros((S, A, S))
    for i, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(moves):
            nxt = (r + dr, c + dc)
            P[i, a, index.get(nxt, i)] = 1.0
    costs = []
    for t in targets:
        cost = np.ones((S, A))
        cost[index[t]] = 0.0
        costs.append(cost)
    p0 = np.full(S, 1.0 / S)
    mdp = FiniteMdp(P, costs[0], gamma, p0)
    return TaskSpace(mdp, tuple(costs), np.full(len(costs), 1.0 / len(costs)), tuple(cells), tuple(targets))


def multitask_mdp(base: FiniteMdp, task_costs, task_probs=None) -> FiniteMdp:
    """Product MDP on ``(task, state)`` pairs, flattened as ``task * S + s``.

    The task never changes, so the transition table is block diagonal.
    """
    task_costs = [np.asarray(c, dtype=float) for c in task_costs]
    T, S, A = len(task_costs), base.n_states, base.n_actions
    task_probs = np.full(T, 1.0 / T) if task_probs is None else np.asarray(task_probs, dtype=float)
    P = np.zeros((T * S, A, T * S))
    for k in range(T):
        P[k * S : (k + 1) * S, :, k * S : (k + 1) * S] = base.transition
    cost = np.concatenate(task_costs, axis=0)
    p0 = np.concatenate([w * base.p0 for w in task_probs])
    return FiniteMdp(P, cost, base.gamma, p0)


class Expert(NamedTuple):
    policy: Policy
    value: np.ndarray
    buffer: ReplayBuffer


def make_expert(
    mdp: FiniteMdp,
    cfg: SoftRlConfig = SoftRlConfig(),
    n_rollouts: int = 90,
    horizon: int = 50,
    seed=0,
) -> Expert:
    """Soft-optimal policy for the true cost and a buffer of its demonstrations."""
    value, policy = soft_value_iteration(mdp, cfg)
    buffer = ReplayBuffer(trajectories=rollouts(mdp, policy, n_rollouts, horizon, seed))
    return Expert(policy, value, buffer)


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float | None = None,
    concentration: float = 1.0,
) -> FiniteMdp:
    """Dense random MDP: Dirichlet transition rows (all entries positive almost surely), uniform costs."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    cost = rng.random((n_states, n_actions))
    p0 = rng.dirichlet(np.ones(n_states))
    gamma = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    return FiniteMdp(P, cost, gamma, p0)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int, concentration: float = 1.0) -> Policy:
    return Policy(rng.dirichlet(np.full(n_actions, concentration), size=n_states))
