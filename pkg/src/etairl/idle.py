"""Conditional generator for eta-future pairs and its adversarial game.

The generator maps a state ``s`` to a distribution over future pairs
``(s+, a+)`` and tries to reproduce ``p_eta(. | s)``; a per-state
discriminator tells real future pairs from generated ones. The game value is

    V(D, G) = sum_s w(s) [ sum p_eta(j|s) log D(j|s) + sum G(j|s) log(1 - D(j|s)) ]

with ``w`` the normalized discounted state occupancy from ``p0``. The
discriminator ascends ``V`` (equivalently descends its logistic loss) and the
generator ascends ``E_G[log D]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .mdp import FiniteMdp, HorizonDistribution, softmax_rows
from .occupancy import p_eta, rho
from .sampling import ReplayBuffer, sample_mu_pairs

LOG4 = np.log(4.0)
HIGH_VARIANCE_THRESHOLD = 25.0


class HighVarianceHorizonWarning(UserWarning):
    """Training targets with a widely spread horizon law are prone to mode collapse."""


def target_law(mdp: FiniteMdp, pi, eta: HorizonDistribution) -> np.ndarray:
    """``p_eta(s+, a+ | s)`` as an ``(S, S*A)`` table."""
    return p_eta(mdp, pi, eta).flat


def state_weights(mdp: FiniteMdp, pi) -> np.ndarray:
    occupancy = mdp.p0 @ rho(mdp, pi).state_marginal()
    return occupancy / occupancy.sum()


def idle_value(mdp: FiniteMdp, pi, eta: HorizonDistribution, discriminator, generator) -> float:
    """Exact game value for discriminator and generator tables of shape ``(S, S*A)``."""
    d = np.asarray(discriminator, dtype=float)
    g = np.asarray(generator, dtype=float)
    target = target_law(mdp, pi, eta)
    w = state_weights(mdp, pi)
    per_state = xlogy(target, d).sum(axis=1) + xlogy(g, 1.0 - d).sum(axis=1)
    return float(w @ per_state)


def bayes_idle_discriminator(target, generator) -> np.ndarray:
    """``D = P / (P + G)``, 1/2 where both vanish."""
    target = np.asarray(target, dtype=float)
    generator = np.asarray(generator, dtype=float)
    total = target + generator
    out = np.full_like(total, 0.5)
    np.divide(target, total, out=out, where=total > 0)
    return out


def jensen_shannon(p, q) -> np.ndarray:
    """Row-wise Jensen-Shannon divergence in nats."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    m = 0.5 * (p + q)
    kl_p = xlogy(p, p).sum(1) - xlogy(p, m).sum(1)
    kl_q = xlogy(q, q).sum(1) - xlogy(q, m).sum(1)
    return 0.5 * (kl_p + kl_q)


@dataclass
class NashReport:
    equilibrium_value: float
    max_generator_gain: float
    max_discriminator_gain: float
    min_best_response_gap: float  # min over generator deviations of V(D*_G', G') - V(equilibrium)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def nash_check(
    mdp: FiniteMdp, pi, eta: HorizonDistribution, n_deviations: int = 200, seed=0, slack: float = 1e-9
) -> NashReport:
    """Test ``(D = 1/2, G = p_eta)`` against random unilateral deviations.

    Neither player may gain more than ``slack``: the generator deviation
    ``G'`` must not raise ``V(1/2, G')`` and a discriminator deviation ``D'``
    must not raise ``V(D', p_eta)``. The report also records how much worse
    each generator deviation is once the discriminator best-responds.
    """
    rng = np.random.default_rng(seed)
    target = target_law(mdp, pi, eta)
    w = state_weights(mdp, pi)
    half = np.full_like(target, 0.5)
    v_star = idle_value(mdp, pi, eta, half, target)
    report = NashReport(v_star, -np.inf, -np.inf, np.inf)
    for i in range(n_deviations):
        g_dev = rng.dirichlet(np.full(target.shape[1], 0.5), size=target.shape[0])
        if i % 2:
            g_dev = 0.5 * (g_dev + target)
        gain = idle_value(mdp, pi, eta, half, g_dev) - v_star
        report.max_generator_gain = max(report.max_generator_gain, gain)
        if gain > slack:
            report.violations.append(f"generator deviation {i} gains {gain:.3e}")
        best_response = w @ (2.0 * jensen_shannon(target, g_dev) - LOG4)
        report.min_best_response_gap = min(report.min_best_response_gap, best_response - v_star)

        d_dev = rng.uniform(0.01, 0.99, size=target.shape)
        if i % 2:
            d_dev = 0.5 + rng.uniform(-0.05, 0.05) * (d_dev - 0.5)
        gain = idle_value(mdp, pi, eta, d_dev, target) - v_star
        report.max_discriminator_gain = max(report.max_discriminator_gain, gain)
        if gain > slack:
            report.violations.append(f"discriminator deviation {i} gains {gain:.3e}")
    return report


@dataclass(frozen=True)
class IdleConfig:
    epochs: int = 5000
    batch_size: int = 64
    disc_learning_rate: float = 1.0
    gen_learning_rate: float = 1.0
    gamma: float = 1.0  # weight of the conditioning time index; 1 samples it uniformly
    eta: HorizonDistribution = field(default_factory=lambda: HorizonDistribution.geometric(0.7))
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be nonnegative and batch_size positive")
        if self.disc_learning_rate <= 0 or self.gen_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass
class IdleResult:
    generator_logits: np.ndarray
    discriminator_logits: np.ndarray

    @property
    def generator(self) -> np.ndarray:
        return softmax_rows(self.generator_logits)

    @property
    def discriminator(self) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.discriminator_logits))


def _sample_rows(probs: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs[rows], axis=1)
    idx = (rng.random(rows.size)[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def idle_train(buffer: ReplayBuffer, n_states: int, n_actions: int, cfg: IdleConfig = IdleConfig()) -> IdleResult:
    """Alternating stochastic updates of a tabular discriminator and softmax generator.

    Each epoch samples real ``(s, s+, a+)`` triples from the buffer and one
    generated future pair per triple. The discriminator takes a logistic-loss
    step; the generator takes an exact ascent step on ``E_G[log D]`` for every
    state present in the batch.
    """
    if cfg.eta.variance() > HIGH_VARIANCE_THRESHOLD:
        warnings.warn(
            f"horizon law {cfg.eta.label()} has variance {cfg.eta.variance():.1f}; "
            "conditional generators trained on widely spread targets tend to collapse onto few modes",
            HighVarianceHorizonWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(cfg.seed)
    n_pairs = n_states * n_actions
    gen_logits = np.zeros((n_states, n_pairs))
    disc_logits = np.zeros((n_states, n_pairs))
    B = cfg.batch_size
    for _ in range(cfg.epochs):
        batch = sample_mu_pairs(buffer, cfg.eta, cfg.gamma, B, rng)
        s = batch.states
        real = batch.future_states * n_actions + batch.future_actions
        gen_probs = softmax_rows(gen_logits)
        fake = _sample_rows(gen_probs, s, rng)

        d = 0.5 * (1.0 + np.tanh(0.5 * disc_logits))
        grad = np.zeros_like(disc_logits)
        np.add.at(grad, (s, real), 1.0 - d[s, real])
        np.add.at(grad, (s, fake), -d[s, fake])
        disc_logits += cfg.disc_learning_rate * grad / B

        d = np.clip(0.5 * (1.0 + np.tanh(0.5 * disc_logits)), 1e-6, 1.0 - 1e-6)
        log_d = np.log(d)
        weight = np.bincount(s, minlength=n_states) / B
        baseline = (gen_probs * log_d).sum(axis=1, keepdims=True)
        gen_logits += cfg.gen_learning_rate * weight[:, None] * gen_probs * (log_d - baseline)
    return IdleResult(gen_logits, disc_logits)


def augment_buffer(buffer: ReplayBuffer, generator, per_state: int, seed=None) -> np.ndarray:
    """Synthetic ``(s, s+, a+)`` rows: ``per_state`` generator draws for every visited state.

    ``generator`` is an ``(S, S*A)`` table; the number of actions is read
    from it together with the largest state index. Returns an ``(n, 3)``
    integer array with ``n = per_state * (transitions in the buffer)``.
    """
    generator = np.asarray(generator, dtype=float)
    n_states = generator.shape[0]
    n_actions = generator.shape[1] // n_states
    rng = np.random.default_rng(seed)
    states = buffer.packed()[0]
    if per_state == 0 or states.size == 0:
        return np.empty((0, 3), dtype=int)
    conditioning = np.repeat(states, per_state)
    draws = _sample_rows(generator, conditioning, rng)
    future_states, future_actions = np.divmod(draws, n_actions)
    return np.column_stack([conditioning, future_states, future_actions])
