"""Generalized inverse RL: cost classes, their penalties, and the adversarial training loops.

A cost maximizer plays against a soft-optimal learner. The divergence it
maximizes is ``d_c = sum p0 (mu_pi - mu_expert) c``; the penalty ``psi``
decides which family of costs it may use:

* ``gan``: any negative cost, penalized by a logistic conjugate. The inner
  maximization is solved by a discriminator and the cost is ``log D``
  (``megan``; ``gail`` is the point-mass-at-zero special case).
* ``linear``: costs ``w . f`` with ``||w||_2 <= 1`` (``emma``).
* ``convex``: costs ``w . f`` with ``w`` in the simplex (``wiem``).
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .evaluation import MmdConfig, exact_mmd_metrics, exact_return
from .mdp import FiniteMdp, HorizonDistribution, Policy, as_probs
from .occupancy import mu
from .sampling import DEFAULT_BUFFER_CAPACITY, ReplayBuffer, pair_counts, rollouts, sample_mu_pairs
from .soft_rl import SoftRlConfig, eta_weighted_entropy, soft_value_iteration

D_CLAMP = 1e-6
PENALTY_KINDS = ("gan", "linear", "convex")


# ---------------------------------------------------------------- projections


def project_l2_ball(w, radius: float = 1.0) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    return w.copy() if norm <= radius else w * (radius / norm)


def project_simplex(w) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    w = np.asarray(w, dtype=float)
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, w.size + 1)
    rho_idx = np.flatnonzero(u - (css - 1.0) / ks > 0)[-1]
    theta = (css[rho_idx] - 1.0) / (rho_idx + 1)
    return np.maximum(w - theta, 0.0)


# ---------------------------------------------------------------- cost models


def one_hot_basis(n_states: int, n_actions: int) -> np.ndarray:
    """Indicator features, ``basis[s, a] = e_{(s,a)}``."""
    return np.eye(n_states * n_actions).reshape(n_states, n_actions, -1)


def state_basis(n_states: int, n_actions: int) -> np.ndarray:
    """State-indicator features shared by every action."""
    return np.repeat(np.eye(n_states)[:, None, :], n_actions, axis=1)


@dataclass(frozen=True)
class CostModel:
    """A cost table, possibly parametrized as ``weights . basis`` and tied to a constraint.

    ``constraint`` is one of ``"none"``, ``"l2_ball"``, ``"simplex"`` or
    ``"gan"`` (costs must be strictly negative and carry the logistic
    conjugate penalty).
    """

    weights: np.ndarray
    basis: np.ndarray | None = None
    constraint: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.constraint not in ("none", "l2_ball", "simplex", "gan"):
            raise ValueError(f"unknown constraint {self.constraint!r}")

    @classmethod
    def tabular(cls, table, constraint: str = "none") -> "CostModel":
        return cls(np.asarray(table, dtype=float), None, constraint)

    def table(self) -> np.ndarray:
        if self.basis is None:
            return self.weights
        return self.basis @ self.weights

    def feasible(self, tol: float = 1e-12) -> bool:
        if self.constraint == "l2_ball":
            return bool(np.linalg.norm(self.weights) <= 1.0 + tol)
        if self.constraint == "simplex":
            return bool(np.all(self.weights >= -tol) and abs(self.weights.sum() - 1.0) <= tol)
        if self.constraint == "gan":
            return bool(np.all(self.table() < 0))
        return True


def gan_conjugate(x) -> np.ndarray:
    """Pointwise logistic penalty ``-x - log(1 - e^x)`` for ``x < 0``, ``+inf`` otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, np.inf)
    neg = x < 0
    out[neg] = -x[neg] - np.log(-np.expm1(x[neg]))
    return out


def _pooled_mu(mdp: FiniteMdp, pi, eta: HorizonDistribution) -> np.ndarray:
    return mdp.p0 @ mu(mdp, pi, eta).values.reshape(mdp.n_states, -1)


def psi_gan(cost, mdp: FiniteMdp, expert, eta: HorizonDistribution) -> float:
    """``sum p0 mu_expert g(c)`` with ``g`` the logistic conjugate; infinite if any cost is ``>= 0``."""
    weights = _pooled_mu(mdp, expert, eta).reshape(mdp.n_states, mdp.n_actions)
    penalty = gan_conjugate(cost)
    if np.any(np.isinf(penalty)):
        return float("inf")
    return float((weights * penalty).sum())


def penalty_value(model: CostModel, mdp: FiniteMdp, expert, eta: HorizonDistribution) -> float:
    if model.constraint == "gan":
        return psi_gan(model.table(), mdp, expert, eta)
    return 0.0 if model.feasible() else float("inf")


def divergence(cost, mdp: FiniteMdp, pi, expert, eta: HorizonDistribution) -> float:
    """``sum p0 (mu_pi - mu_expert) c``."""
    diff = _pooled_mu(mdp, pi, eta) - _pooled_mu(mdp, expert, eta)
    return float((diff.reshape(mdp.n_states, mdp.n_actions) * np.asarray(cost)).sum())


def feature_gap(mdp: FiniteMdp, pi, expert, eta: HorizonDistribution, basis: np.ndarray) -> np.ndarray:
    """``g_i = sum p0 (mu_pi - mu_expert) f_i`` for every basis function."""
    diff = (_pooled_mu(mdp, pi, eta) - _pooled_mu(mdp, expert, eta)).reshape(mdp.n_states, mdp.n_actions)
    return np.einsum("sa,sai->i", diff, basis)


def dual_objective(
    mdp: FiniteMdp, pi, expert, cost, eta: HorizonDistribution, tau: float = 0.01
) -> float:
    """``-tau H^eta(pi) - psi(c) + d_c(pi, expert)``; ``-inf`` when the cost is infeasible."""
    model = cost if isinstance(cost, CostModel) else CostModel.tabular(cost)
    penalty = penalty_value(model, mdp, expert, eta)
    if np.isinf(penalty):
        return float("-inf")
    entropy = eta_weighted_entropy(mdp, pi, eta) if tau else 0.0
    return -tau * entropy - penalty + divergence(model.table(), mdp, pi, expert, eta)


def max_linear_cost(gap) -> tuple[np.ndarray, float]:
    """Maximizer of ``w . gap`` over the unit ball and the attained value ``||gap||``."""
    gap = np.asarray(gap, dtype=float)
    norm = float(np.linalg.norm(gap))
    if norm == 0.0:
        return np.zeros_like(gap), 0.0
    return gap / norm, norm


def max_convex_cost(gap) -> tuple[np.ndarray, float]:
    """Maximizer of ``w . gap`` over the simplex: the vertex of the largest entry (lowest index on ties)."""
    gap = np.asarray(gap, dtype=float)
    best = int(np.argmax(gap))
    w = np.zeros_like(gap)
    w[best] = 1.0
    return w, float(gap[best])


def bayes_discriminator(mdp: FiniteMdp, pi, expert, eta: HorizonDistribution) -> np.ndarray:
    """``D*(s,a) = m_pi / (m_pi + m_expert)`` on normalized pooled measures, 1/2 where both vanish."""
    m_pi = _pooled_mu(mdp, pi, eta)
    m_e = _pooled_mu(mdp, expert, eta)
    m_pi, m_e = m_pi / m_pi.sum(), m_e / m_e.sum()
    total = m_pi + m_e
    d = np.full_like(total, 0.5)
    np.divide(m_pi, total, out=d, where=total > 0)
    return d.reshape(mdp.n_states, mdp.n_actions)


def bayes_dual_value(mdp: FiniteMdp, pi, expert, eta: HorizonDistribution, tau: float = 0.01) -> float:
    """Dual objective under the GAN penalty evaluated at ``c = log D*``."""
    d = bayes_discriminator(mdp, pi, expert, eta).reshape(-1)
    m_pi = _pooled_mu(mdp, pi, eta)
    m_e = _pooled_mu(mdp, expert, eta)
    value = float(xlogy(m_pi, d).sum() + xlogy(m_e, 1.0 - d).sum())
    entropy = eta_weighted_entropy(mdp, pi, eta) if tau else 0.0
    return -tau * entropy + value


# ---------------------------------------------------------------- discriminators


def _clamp(d):
    return np.clip(d, D_CLAMP, 1.0 - D_CLAMP)


def discriminator_objective(d_policy, d_expert) -> float:
    """``sum log D(policy samples) + sum log(1 - D(expert samples))`` with D clamped away from 0 and 1.

    D is the probability that a pair came from the learner, so the cost
    ``log D`` is low where pairs look expert-like.
    """
    return float(np.log(_clamp(np.asarray(d_policy))).sum() + np.log(1.0 - _clamp(np.asarray(d_expert))).sum())


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class TabularDiscriminator:
    """One logit per state-action pair."""

    default_learning_rate = 0.5

    def __init__(self, n_states: int, n_actions: int):
        self.logits = np.zeros((n_states, n_actions))

    def probabilities(self) -> np.ndarray:
        return _sigmoid(self.logits)

    def fit(self, policy_weights, expert_weights, epochs: int, learning_rate: float | None = None) -> None:
        """Full-batch ascent on the mean objective for two (unnormalized) pair histograms."""
        lr = self.default_learning_rate if learning_rate is None else learning_rate
        p = np.asarray(policy_weights, dtype=float)
        q = np.asarray(expert_weights, dtype=float)
        p, q = p / p.sum(), q / q.sum()
        for _ in range(epochs):
            d = self.probabilities()
            self.logits += lr * (p * (1.0 - d) - q * d)

    def cost(self) -> np.ndarray:
        return np.log(_clamp(self.probabilities()))

    def to_dict(self) -> dict:
        return {"kind": "tabular", "logits": self.logits.tolist()}


class LinearDiscriminator:
    """Logistic regression on pair features, ``D = sigmoid(w . f(s,a) + b)``."""

    default_learning_rate = 0.1

    def __init__(self, basis: np.ndarray):
        self.basis = np.asarray(basis, dtype=float)
        self.weights = np.zeros(self.basis.shape[-1])
        self.bias = 0.0

    def probabilities(self) -> np.ndarray:
        return _sigmoid(self.basis @ self.weights + self.bias)

    def fit(self, policy_weights, expert_weights, epochs: int, learning_rate: float | None = None) -> None:
        lr = self.default_learning_rate if learning_rate is None else learning_rate
        p = np.asarray(policy_weights, dtype=float)
        q = np.asarray(expert_weights, dtype=float)
        p, q = p / p.sum(), q / q.sum()
        for _ in range(epochs):
            d = self.probabilities()
            resid = p * (1.0 - d) - q * d
            self.weights += lr * np.einsum("sa,sai->i", resid, self.basis)
            self.bias += lr * resid.sum()

    def cost(self) -> np.ndarray:
        return np.log(_clamp(self.probabilities()))

    def to_dict(self) -> dict:
        return {"kind": "linear", "weights": self.weights.tolist(), "bias": self.bias}


# ---------------------------------------------------------------- training loops


@dataclass(frozen=True)
class IrlConfig:
    n_outer_iters: int = 50
    rollouts_per_iter: int = 90
    horizon: int = 50
    batch_size: int = 1000
    disc_epochs: int = 20
    disc_learning_rate: float | None = None
    discriminator: str = "tabular"
    temperature: float = 0.01
    gamma_irl: float = 1.0
    gamma_rl: float | None = None
    eta: HorizonDistribution = field(default_factory=lambda: HorizonDistribution.geometric(0.99))
    metric_eta: HorizonDistribution = field(default_factory=lambda: HorizonDistribution.geometric(0.99))
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY
    seed: int = 0

    def __post_init__(self):
        for name in ("n_outer_iters", "rollouts_per_iter", "horizon", "batch_size", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.disc_epochs < 0 or self.temperature < 0:
            raise ValueError("disc_epochs and temperature must be nonnegative")
        if self.disc_learning_rate is not None and self.disc_learning_rate <= 0:
            raise ValueError("disc_learning_rate must be positive")
        if not 0.0 < self.gamma_irl <= 1.0:
            raise ValueError("gamma_irl must lie in (0, 1]")
        if self.gamma_rl is not None and not 0.0 < self.gamma_rl < 1.0:
            raise ValueError("gamma_rl must lie in (0, 1)")
        if self.discriminator not in ("tabular", "linear"):
            raise ValueError(f"unknown discriminator {self.discriminator!r}")


@dataclass
class MetricsRow:
    iter: int
    mmd_rho: float
    mmd_mu: float
    true_return: float
    disc_objective: float
    wall_ms: float = 0.0
    run_id: str = ""
    seed: int = 0

    DETERMINISTIC_FIELDS = ("run_id", "seed", "iter", "mmd_rho", "mmd_mu", "true_return", "disc_objective")


@dataclass
class GirlResult:
    policy: Policy
    cost: np.ndarray
    history: list[MetricsRow]
    adversary: dict
    value: np.ndarray


def _evaluate(mdp, probs, expert, cfg: IrlConfig, mmd_cfg: MmdConfig):
    if expert is None:
        return float("nan"), float("nan")
    metrics = exact_mmd_metrics(mdp, probs, expert, cfg.metric_eta, mmd_cfg)
    return metrics.mmd_rho, metrics.mmd_mu


def _adversarial_loop(mdp, expert_buffer, cfg: IrlConfig, expert, adversary_step, mmd_cfg):
    """Shared rollout / sample / adversary / soft-RL cycle.

    ``adversary_step(policy_hist, expert_hist)`` updates the adversary and
    returns ``(cost_table, objective, adversary_state)``.
    """
    rng = np.random.default_rng(cfg.seed)
    rl_mdp = mdp if cfg.gamma_rl is None else mdp.with_gamma(cfg.gamma_rl)
    rl_cfg = SoftRlConfig(temperature=cfg.temperature)
    S, A = mdp.n_states, mdp.n_actions
    probs = np.full((S, A), 1.0 / A)
    value = None
    cost = np.zeros((S, A))
    state = {}
    buffer = ReplayBuffer(cfg.buffer_capacity)
    history = []
    for it in range(cfg.n_outer_iters):
        start = time.perf_counter()
        buffer.extend(rollouts(mdp, probs, cfg.rollouts_per_iter, cfg.horizon, rng))
        pol = sample_mu_pairs(buffer, cfg.eta, cfg.gamma_irl, cfg.batch_size, rng)
        exp = sample_mu_pairs(expert_buffer, cfg.eta, cfg.gamma_irl, cfg.batch_size, rng)
        pol_hist = pair_counts(pol.future_states, pol.future_actions, S, A)
        exp_hist = pair_counts(exp.future_states, exp.future_actions, S, A)
        cost, objective, state = adversary_step(pol_hist, exp_hist)
        value, policy = soft_value_iteration(rl_mdp, rl_cfg, cost=cost, v0=value)
        probs = policy.probs
        mmd_rho, mmd_mu = _evaluate(mdp, probs, expert, cfg, mmd_cfg)
        history.append(
            MetricsRow(
                iter=it,
                mmd_rho=mmd_rho,
                mmd_mu=mmd_mu,
                true_return=exact_return(mdp, probs),
                disc_objective=objective,
                wall_ms=(time.perf_counter() - start) * 1e3,
                seed=cfg.seed,
            )
        )
    return GirlResult(Policy(probs), cost, history, state, value)


def megan(
    mdp: FiniteMdp,
    expert_buffer: ReplayBuffer,
    cfg: IrlConfig = IrlConfig(),
    expert=None,
    basis: np.ndarray | None = None,
    mmd_cfg: MmdConfig = MmdConfig(),
) -> GirlResult:
    """Adversarial imitation on eta-future pairs with a logistic discriminator and cost ``log D``.

    ``expert`` (a policy) is only used for the exact MMD metrics in the history.
    """
    if cfg.discriminator == "tabular":
        disc = TabularDiscriminator(mdp.n_states, mdp.n_actions)
    elif cfg.discriminator == "linear":
        disc = LinearDiscriminator(basis if basis is not None else one_hot_basis(mdp.n_states, mdp.n_actions))
    else:
        raise ValueError(f"unknown discriminator {cfg.discriminator!r}")

    def step(pol_hist, exp_hist):
        disc.fit(pol_hist, exp_hist, cfg.disc_epochs, cfg.disc_learning_rate)
        d = _clamp(disc.probabilities())
        objective = float((pol_hist * np.log(d)).sum() + (exp_hist * np.log(1.0 - d)).sum())
        return disc.cost(), objective, disc.to_dict()

    return _adversarial_loop(mdp, expert_buffer, cfg, expert, step, mmd_cfg)


def gail_config(cfg: IrlConfig) -> IrlConfig:
    return dataclasses.replace(cfg, eta=HorizonDistribution.dirac(0), gamma_irl=1.0)


def gail(mdp: FiniteMdp, expert_buffer: ReplayBuffer, cfg: IrlConfig = IrlConfig(), expert=None, **kwargs) -> GirlResult:
    """The point-mass-at-zero, flat-time-sampling instance of :func:`megan`."""
    return megan(mdp, expert_buffer, gail_config(cfg), expert, **kwargs)


def _feature_matching(mdp, expert_buffer, cfg, expert, basis, projection, target, mmd_cfg, constraint):
    basis = one_hot_basis(mdp.n_states, mdp.n_actions) if basis is None else np.asarray(basis, dtype=float)
    w = np.zeros(basis.shape[-1])
    lr = 0.5 if cfg.disc_learning_rate is None else cfg.disc_learning_rate

    def step(pol_hist, exp_hist):
        nonlocal w
        gap = np.einsum("sa,sai->i", pol_hist / pol_hist.sum() - exp_hist / exp_hist.sum(), basis)
        goal = target(gap)
        for _ in range(cfg.disc_epochs):
            w = projection(w - lr * 2.0 * (w @ gap - goal) * gap)
        loss = float((w @ gap - goal) ** 2)
        return basis @ w, -loss, {"kind": constraint, "weights": w.tolist()}

    return _adversarial_loop(mdp, expert_buffer, cfg, expert, step, mmd_cfg)


def emma(mdp, expert_buffer, cfg: IrlConfig = IrlConfig(), expert=None, basis=None, mmd_cfg=MmdConfig()) -> GirlResult:
    """Linear costs in the unit ball, fitted by projected gradient on ``(w . g - ||g||)^2``."""
    return _feature_matching(
        mdp, expert_buffer, cfg, expert, basis, project_l2_ball, lambda g: np.linalg.norm(g), mmd_cfg, "l2_ball"
    )


def wiem(mdp, expert_buffer, cfg: IrlConfig = IrlConfig(), expert=None, basis=None, mmd_cfg=MmdConfig()) -> GirlResult:
    """Convex combinations of basis costs, fitted by projected gradient on ``(w . g - max_i g_i)^2``."""
    return _feature_matching(
        mdp, expert_buffer, cfg, expert, basis, project_simplex, lambda g: g.max(), mmd_cfg, "simplex"
    )


def girl_iterate(
    mdp: FiniteMdp,
    expert_buffer: ReplayBuffer,
    penalty: str,
    cfg: IrlConfig = IrlConfig(),
    expert=None,
    basis=None,
    mmd_cfg: MmdConfig = MmdConfig(),
) -> GirlResult:
    """Run the adversarial loop for the cost family named by ``penalty``."""
    if penalty == "gan":
        return megan(mdp, expert_buffer, cfg, expert, basis, mmd_cfg)
    if penalty == "linear":
        return emma(mdp, expert_buffer, cfg, expert, basis, mmd_cfg)
    if penalty == "convex":
        return wiem(mdp, expert_buffer, cfg, expert, basis, mmd_cfg)
    raise ValueError(f"unknown penalty {penalty!r}; expected one of {PENALTY_KINDS}")
