"""Kernel two-sample distances between pair distributions and normalized returns."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mdp import FiniteMdp, HorizonDistribution, Policy, as_probs
from .occupancy import mu, rho
from .sampling import ReplayBuffer, rollouts, sample_mu_pairs
from .soft_rl import SoftRlConfig, policy_evaluation

GRAM_BLOCK = 2048


@dataclass(frozen=True)
class MmdConfig:
    """``bandwidth=None`` uses the embedding dimension.

    ``literal_cross_term`` swaps the ``2/(m n)`` cross-term weight of the
    unbiased estimator for a single ``1/(m n)``; the result is then biased and
    only kept to reproduce that formula.
    """

    bandwidth: float | None = None
    literal_cross_term: bool = False


def rbf_kernel(x, y, bandwidth: float | None = None) -> np.ndarray:
    """``exp(-||x - y||^2 / bandwidth)`` for all row pairs of ``x`` and ``y``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    width = float(x.shape[1]) if bandwidth is None else float(bandwidth)
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.exp(-np.maximum(sq, 0.0) / width)


def _weighted_gram_sum(points: np.ndarray, wx: np.ndarray, wy: np.ndarray, bandwidth) -> float:
    total = 0.0
    for start in range(0, points.shape[0], GRAM_BLOCK):
        block = rbf_kernel(points[start : start + GRAM_BLOCK], points, bandwidth)
        total += wx[start : start + GRAM_BLOCK] @ block @ wy
    return float(total)


def mmd2_unbiased(x, y, cfg: MmdConfig = MmdConfig()) -> float:
    """Unbiased squared MMD between samples ``x`` (m rows) and ``y`` (n rows).

    Repeated rows are collapsed into counts first, which makes the estimator
    cheap on one-hot embeddings of finite pair spaces.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError("each sample needs at least two points")
    bandwidth = x.shape[1] if cfg.bandwidth is None else cfg.bandwidth
    points, inverse = np.unique(np.vstack([x, y]), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cx = np.bincount(inverse[:m], minlength=points.shape[0]).astype(float)
    cy = np.bincount(inverse[m:], minlength=points.shape[0]).astype(float)
    # k(z, z) = 1, so removing the diagonal removes m (resp. n) ones.
    xx = (_weighted_gram_sum(points, cx, cx, bandwidth) - m) / (m * (m - 1))
    yy = (_weighted_gram_sum(points, cy, cy, bandwidth) - n) / (n * (n - 1))
    cross_weight = 1.0 if cfg.literal_cross_term else 2.0
    xy = cross_weight * _weighted_gram_sum(points, cx, cy, bandwidth) / (m * n)
    return float(xx + yy - xy)


def embed_pairs(states, actions, n_states: int, n_actions: int) -> np.ndarray:
    """One-hot state concatenated with one-hot action."""
    states = np.asarray(states, dtype=int)
    actions = np.asarray(actions, dtype=int)
    out = np.zeros((states.size, n_states + n_actions))
    out[np.arange(states.size), states] = 1.0
    out[np.arange(states.size), n_states + actions] = 1.0
    return out


def pair_space_gram(n_states: int, n_actions: int, cfg: MmdConfig = MmdConfig()) -> np.ndarray:
    s, a = np.divmod(np.arange(n_states * n_actions), n_actions)
    points = embed_pairs(s, a, n_states, n_actions)
    return rbf_kernel(points, points, cfg.bandwidth)


def population_mmd2(p, q, cfg: MmdConfig = MmdConfig()) -> float:
    """Squared MMD between two distributions over the pair space, given as ``(S, A)`` tables."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    diff = (p / p.sum() - q / q.sum()).reshape(-1)
    gram = pair_space_gram(p.shape[0], p.shape[1], cfg)
    return float(max(diff @ gram @ diff, 0.0))


class MmdMetrics(NamedTuple):
    mmd_rho: float
    mmd_mu: float


def exact_mmd_metrics(
    mdp: FiniteMdp, pi, expert, eta: HorizonDistribution, cfg: MmdConfig = MmdConfig()
) -> MmdMetrics:
    """Population MMD (not squared) between normalized ``p0``-weighted measures of two policies."""

    def pooled(measure_fn, policy):
        return mdp.p0 @ measure_fn(policy).flat

    d_rho = population_mmd2(
        pooled(lambda p: rho(mdp, p), pi).reshape(mdp.n_states, -1),
        pooled(lambda p: rho(mdp, p), expert).reshape(mdp.n_states, -1),
        cfg,
    )
    d_mu = population_mmd2(
        pooled(lambda p: mu(mdp, p, eta), pi).reshape(mdp.n_states, -1),
        pooled(lambda p: mu(mdp, p, eta), expert).reshape(mdp.n_states, -1),
        cfg,
    )
    return MmdMetrics(float(np.sqrt(d_rho)), float(np.sqrt(d_mu)))


def sample_mmd_metrics(
    policy_buffer: ReplayBuffer,
    expert_buffer: ReplayBuffer,
    eta: HorizonDistribution,
    gamma: float,
    n_states: int,
    n_actions: int,
    n_samples: int = 2000,
    seed=None,
    cfg: MmdConfig = MmdConfig(),
) -> MmdMetrics:
    """Unbiased squared-MMD estimates from buffer samples of occupancy pairs and future pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for horizon in (HorizonDistribution.dirac(0), eta):
        a = sample_mu_pairs(policy_buffer, horizon, gamma, n_samples, rng)
        b = sample_mu_pairs(expert_buffer, horizon, gamma, n_samples, rng)
        out.append(
            mmd2_unbiased(
                embed_pairs(a.future_states, a.future_actions, n_states, n_actions),
                embed_pairs(b.future_states, b.future_actions, n_states, n_actions),
                cfg,
            )
        )
    return MmdMetrics(*out)


def discounted_return(costs, gamma: float) -> float:
    costs = np.asarray(costs, dtype=float)
    return float(costs @ gamma ** np.arange(costs.size))


class NormalizedReturn(NamedTuple):
    value: float
    policy_return: float
    expert_return: float
    random_return: float
    degenerate: bool


def _normalize(j_pi: float, j_expert: float, j_random: float) -> NormalizedReturn:
    span = j_random - j_expert
    degenerate = abs(span) <= 1e-12 * max(1.0, abs(j_random), abs(j_expert))
    if degenerate:
        warnings.warn("random and expert returns coincide; normalized return is undefined", RuntimeWarning)
        value = float("nan")
    else:
        value = (j_pi - j_expert) / span
    return NormalizedReturn(value, j_pi, j_expert, j_random, degenerate)


def normalized_return(
    mdp: FiniteMdp, pi, expert, n_rollouts: int = 100, horizon: int = 50, seed=None
) -> NormalizedReturn:
    """``(J(pi) - J(expert)) / (J(random) - J(expert))`` with J the mean discounted rollout cost.

    Zero means expert-level, one means uniformly random.
    """
    rng = np.random.default_rng(seed)
    uniform = Policy.uniform(mdp.n_states, mdp.n_actions)

    def mean_return(policy):
        trajs = rollouts(mdp, policy, n_rollouts, horizon, rng)
        return float(np.mean([discounted_return(t.costs, mdp.gamma) for t in trajs]))

    return _normalize(mean_return(pi), mean_return(expert), mean_return(uniform))


def exact_return(mdp: FiniteMdp, pi) -> float:
    v = policy_evaluation(mdp, as_probs(pi), SoftRlConfig(temperature=0.0))
    return float(mdp.p0 @ v)


def exact_normalized_return(mdp: FiniteMdp, pi, expert) -> NormalizedReturn:
    uniform = Policy.uniform(mdp.n_states, mdp.n_actions)
    return _normalize(exact_return(mdp, pi), exact_return(mdp, expert), exact_return(mdp, uniform))
