"""Rollouts, a FIFO trajectory buffer and unbiased draws of occupancy and future pairs.

Every sampler takes a ``seed`` that may be an int or a ``numpy`` Generator;
draws are made by inverse-CDF lookups so identical distributions consume
randomness identically.
"""

from __future__ import annotations

from collections import deque
from typing import NamedTuple

import numpy as np

from .mdp import FiniteMdp, HorizonDistribution, Trajectory, as_probs, load_trajectories, save_trajectories

DEFAULT_BUFFER_CAPACITY = 1_000_000


def _categorical(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def rollouts(mdp: FiniteMdp, pi, n: int, horizon: int, seed=None) -> list[Trajectory]:
    """Simulate ``n`` independent trajectories of length ``horizon`` from ``p0``."""
    rng = np.random.default_rng(seed)
    probs = as_probs(pi)
    policy_cdf = np.cumsum(probs, axis=1)
    transition_cdf = np.cumsum(mdp.transition, axis=2)
    start_cdf = np.cumsum(mdp.p0)[None, :]

    states = np.empty((n, horizon), dtype=int)
    actions = np.empty((n, horizon), dtype=int)
    s = _categorical(np.broadcast_to(start_cdf, (n, mdp.n_states)), rng.random(n))
    for t in range(horizon):
        a = _categorical(policy_cdf[s], rng.random(n))
        states[:, t] = s
        actions[:, t] = a
        s = _categorical(transition_cdf[s, a], rng.random(n))
    costs = mdp.cost[states, actions]
    return [Trajectory(states[i], actions[i], costs[i]) for i in range(n)]


def rollout(mdp: FiniteMdp, pi, horizon: int, seed=None) -> Trajectory:
    return rollouts(mdp, pi, 1, horizon, seed)[0]


class ReplayBuffer:
    """Trajectory store with FIFO eviction once more than ``capacity`` transitions are held."""

    def __init__(self, capacity: int = DEFAULT_BUFFER_CAPACITY, trajectories=()):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._trajectories: deque[Trajectory] = deque()
        self._size = 0
        self._packed = None
        self.extend(trajectories)

    def add(self, trajectory: Trajectory) -> None:
        if len(trajectory) == 0:
            return
        self._trajectories.append(trajectory)
        self._size += len(trajectory)
        while self._size > self.capacity and len(self._trajectories) > 1:
            self._size -= len(self._trajectories.popleft())
        self._packed = None

    def extend(self, trajectories) -> None:
        for traj in trajectories:
            self.add(traj)

    def __len__(self) -> int:
        return self._size

    @property
    def n_trajectories(self) -> int:
        return len(self._trajectories)

    @property
    def trajectories(self) -> list[Trajectory]:
        return list(self._trajectories)

    def save(self, path) -> None:
        """Write the held trajectories as JSON Lines."""
        save_trajectories(self._trajectories, path)

    @classmethod
    def load(cls, path, capacity: int = DEFAULT_BUFFER_CAPACITY) -> "ReplayBuffer":
        return cls(capacity, load_trajectories(path))

    def packed(self):
        """Concatenated ``(states, actions, lengths, offsets)`` arrays."""
        if self._packed is None:
            trajs = self._trajectories
            lengths = np.array([len(t) for t in trajs], dtype=int)
            offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int)
            states = np.concatenate([t.states for t in trajs]) if trajs else np.empty(0, int)
            actions = np.concatenate([t.actions for t in trajs]) if trajs else np.empty(0, int)
            self._packed = (states, actions, lengths, offsets)
        return self._packed


def occupancy_index_pmf(horizon: int, gamma: float) -> np.ndarray:
    """Law of ``t`` on ``{0, ..., horizon-1}`` proportional to ``gamma**t``; flat for ``gamma = 1``."""
    w = np.power(float(gamma), np.arange(horizon), dtype=float)
    return w / w.sum()


def _discount_cdf(length: int, gamma: float) -> np.ndarray:
    return np.cumsum(np.power(float(gamma), np.arange(length), dtype=float))


def _horizon_cdf(eta: HorizonDistribution, length: int) -> np.ndarray:
    cdf = np.cumsum(eta.pmf())
    if cdf.size < length:
        cdf = np.concatenate([cdf, np.full(length - cdf.size, cdf[-1])])
    return cdf[:length]


def _truncated_draw(cdf: np.ndarray, upper: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw restricted to ``{0, ..., upper-1}`` and renormalized."""
    idx = np.searchsorted(cdf, u * cdf[upper - 1], side="right")
    return np.minimum(idx, upper - 1)


def sample_occupancy_index(horizon: int, gamma: float, seed=None) -> int:
    if horizon < 1:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    cdf = _discount_cdf(horizon, gamma)
    return int(_truncated_draw(cdf, np.array([horizon]), rng.random(1))[0])


def _first_offset(eta: HorizonDistribution) -> int:
    return int(np.flatnonzero(eta.pmf() > 0)[0])


def sample_future_index(eta: HorizonDistribution, remaining: int, seed=None) -> int:
    """Offset ``k`` in ``{0, ..., remaining-1}`` drawn from ``eta`` truncated to that window."""
    if remaining < 1 or remaining <= _first_offset(eta):
        raise ValueError(f"eta has no mass on offsets below {remaining}")
    rng = np.random.default_rng(seed)
    cdf = _horizon_cdf(eta, remaining)
    return int(_truncated_draw(cdf, np.array([remaining]), rng.random(1))[0])


class PairBatch(NamedTuple):
    """Columns of sampled ``((s_t, a_t), (s_{t+k}, a_{t+k}))`` pairs."""

    states: np.ndarray
    actions: np.ndarray
    future_states: np.ndarray
    future_actions: np.ndarray

    def __len__(self) -> int:
        return self.states.size


def sample_mu_pairs(
    buffer: ReplayBuffer, eta: HorizonDistribution, gamma: float, batch_size: int, seed=None
) -> PairBatch:
    """Draw pairs whose marginal over the future pair estimates the normalized ``mu``.

    A trajectory is picked uniformly, then ``t`` with weight ``gamma**t`` and
    ``k`` from ``eta`` truncated to the rest of the trajectory. Start times
    that leave no room for the smallest offset in the support of ``eta`` are
    excluded.
    """
    rng = np.random.default_rng(seed)
    states, actions, lengths, offsets = buffer.packed()
    k_min = _first_offset(eta)
    eligible = np.flatnonzero(lengths > k_min)
    if eligible.size == 0:
        raise ValueError("no trajectory in the buffer is long enough for this horizon law")
    pick = eligible[rng.integers(eligible.size, size=batch_size)]
    length = lengths[pick]
    longest = int(lengths.max())

    t = _truncated_draw(_discount_cdf(longest, gamma), length - k_min, rng.random(batch_size))
    k = _truncated_draw(_horizon_cdf(eta, longest), length - t, rng.random(batch_size))
    now = offsets[pick] + t
    later = now + k
    return PairBatch(states[now], actions[now], states[later], actions[later])


def sample_occupancy_pairs(buffer: ReplayBuffer, gamma: float, batch_size: int, seed=None) -> PairBatch:
    return sample_mu_pairs(buffer, HorizonDistribution.dirac(0), gamma, batch_size, seed)


def pair_counts(states: np.ndarray, actions: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    """Histogram of ``(s, a)`` pairs as an ``(S, A)`` array."""
    flat = np.bincount(states * n_actions + actions, minlength=n_states * n_actions)
    return flat.reshape(n_states, n_actions).astype(float)
