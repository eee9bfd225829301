"""Entropy-regularized control, eta-losses and the eta-generalized policy gradient.

Costs are minimized. With temperature ``tau`` the per-step regularized cost of
a policy is ``c(s,a) + tau * log pi(a|s)``, so the regularizer subtracted from
the loss is ``tau`` times the (eta-weighted) entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mdp import FiniteMdp, HorizonDistribution, Policy, as_probs, softmax_rows, state_transition_matrix
from .occupancy import mu, p_eta, rho


@dataclass(frozen=True)
class SoftRlConfig:
    temperature: float = 0.01
    tolerance: float = 1e-9
    max_iters: int = 200_000
    polish_steps: int = 100


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class SoftSolution(NamedTuple):
    value: np.ndarray
    policy: Policy


def _cost(mdp: FiniteMdp, cost) -> np.ndarray:
    return mdp.cost if cost is None else np.asarray(cost, dtype=float)


def xlogx_rows(probs: np.ndarray) -> np.ndarray:
    """``sum_a p log p`` per row with ``0 log 0 = 0``."""
    safe = np.where(probs > 0, probs, 1.0)
    return (probs * np.log(safe)).sum(axis=1)


def regularized_step_cost(mdp: FiniteMdp, pi, tau: float, cost=None) -> np.ndarray:
    """``sum_a pi(a|s) (c(s,a) + tau log pi(a|s))`` for every state."""
    probs = as_probs(pi)
    return (probs * _cost(mdp, cost)).sum(axis=1) + tau * xlogx_rows(probs)


def bellman_policy(v, mdp: FiniteMdp, pi, cfg: SoftRlConfig = SoftRlConfig(), cost=None) -> np.ndarray:
    q = _cost(mdp, cost) + mdp.gamma * mdp.transition @ np.asarray(v, dtype=float)
    probs = as_probs(pi)
    return (probs * q).sum(axis=1) + cfg.temperature * xlogx_rows(probs)


def softmin(q: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Soft minimum over actions and the matching Gibbs policy. ``tau = 0`` gives the hard minimum."""
    q_min = q.min(axis=1)
    if tau == 0.0:
        probs = np.zeros_like(q)
        probs[np.arange(q.shape[0]), q.argmin(axis=1)] = 1.0
        return q_min, probs
    z = np.exp(-(q - q_min[:, None]) / tau)
    total = z.sum(axis=1)
    return q_min - tau * np.log(total), z / total[:, None]


def bellman_optimality(v, mdp: FiniteMdp, cfg: SoftRlConfig = SoftRlConfig(), cost=None) -> SoftSolution:
    q = _cost(mdp, cost) + mdp.gamma * mdp.transition @ np.asarray(v, dtype=float)
    value, probs = softmin(q, cfg.temperature)
    return SoftSolution(value, Policy(probs))


def policy_evaluation(mdp: FiniteMdp, pi, cfg: SoftRlConfig = SoftRlConfig(), cost=None) -> np.ndarray:
    """Exact regularized value ``(I - gamma P_pi)^{-1} (c_pi + tau sum pi log pi)``."""
    P_pi = state_transition_matrix(mdp, pi)
    step = regularized_step_cost(mdp, pi, cfg.temperature, cost)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, step)


def q_values(mdp: FiniteMdp, pi, cfg: SoftRlConfig = SoftRlConfig(), cost=None) -> np.ndarray:
    """Regularized action values ``c(s,a) + gamma E[v_pi(s')]``."""
    v = policy_evaluation(mdp, pi, cfg, cost)
    return _cost(mdp, cost) + mdp.gamma * mdp.transition @ v


def soft_value_iteration(
    mdp: FiniteMdp, cfg: SoftRlConfig = SoftRlConfig(), cost=None, v0=None
) -> SoftSolution:
    """Iterate the soft optimality operator until the sup-norm step is below tolerance.

    The iterate is then polished by exact soft policy iteration so that the
    returned value is the exact value of the returned policy.
    """
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    c = _cost(mdp, cost)
    residual = np.inf
    for _ in range(cfg.max_iters):
        q = c + mdp.gamma * mdp.transition @ v
        v_next, _ = softmin(q, cfg.temperature)
        residual = np.abs(v_next - v).max()
        v = v_next
        if residual < cfg.tolerance:
            break
    else:
        raise NonConvergenceError(
            f"soft value iteration did not reach tolerance {cfg.tolerance:g} in {cfg.max_iters} sweeps "
            f"(last residual {residual:.3e})",
            float(residual),
        )
    _, probs = softmin(c + mdp.gamma * mdp.transition @ v, cfg.temperature)
    best = v
    for _ in range(cfg.polish_steps):
        v_pi = policy_evaluation(mdp, probs, cfg, c)
        _, next_probs = softmin(c + mdp.gamma * mdp.transition @ v_pi, cfg.temperature)
        step = np.abs(v_pi - best).max()
        best = v_pi
        if step < 1e-12 * max(1.0, np.abs(v_pi).max()) or np.array_equal(next_probs, probs):
            break
        probs = next_probs
    return SoftSolution(best, Policy(probs))


def eta_weighted_entropy(mdp: FiniteMdp, pi, eta: HorizonDistribution) -> float:
    """``E^eta[sum_t gamma^t (-log pi(a_t|s_t))]`` from ``p0``."""
    probs = as_probs(pi)
    weights = mdp.p0 @ mu(mdp, probs, eta).flat
    safe = np.where(probs > 0, probs, 1.0).reshape(-1)
    return float(-(weights * np.log(safe)).sum())


def eta_loss(mdp: FiniteMdp, pi, cost, eta: HorizonDistribution, tau: float = 0.0) -> float:
    """Regularized eta-loss ``E^eta[sum_t gamma^t c] - tau * eta-weighted entropy``."""
    probs = as_probs(pi)
    weights = mdp.p0 @ mu(mdp, probs, eta).flat
    expected_cost = float(weights @ _cost(mdp, cost).reshape(-1))
    if tau == 0.0:
        return expected_cost
    return expected_cost - tau * eta_weighted_entropy(mdp, probs, eta)


@dataclass
class EtaOptimalityReport:
    losses_at_optimum: dict[str, float]
    violations: list[tuple[str, int, float]] = field(default_factory=list)
    max_gap: float = -np.inf  # largest loss(optimum) - loss(competitor)

    @property
    def ok(self) -> bool:
        return not self.violations


def competitor_policies(optimum: np.ndarray, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Half uniformly random policies, half mixtures of the optimum with random noise."""
    S, A = optimum.shape
    out = []
    for i in range(n):
        noise = rng.dirichlet(np.ones(A), size=S)
        if i % 2 == 0:
            out.append(noise)
        else:
            eps = rng.uniform(1e-3, 0.5)
            out.append((1.0 - eps) * optimum + eps * noise)
    return out


def eta_optimality_check(
    mdp: FiniteMdp,
    eta_grid,
    cfg: SoftRlConfig = SoftRlConfig(),
    n_competitors: int = 100,
    seed=0,
    slack: float = 1e-6,
) -> EtaOptimalityReport:
    """Check that the soft-optimal policy has the smallest regularized eta-loss for every eta."""
    rng = np.random.default_rng(seed)
    optimum = soft_value_iteration(mdp, cfg).policy.probs
    competitors = competitor_policies(optimum, n_competitors, rng)
    report = EtaOptimalityReport(losses_at_optimum={})
    for eta in eta_grid:
        best = eta_loss(mdp, optimum, None, eta, cfg.temperature)
        report.losses_at_optimum[eta.label()] = best
        for i, comp in enumerate(competitors):
            gap = best - eta_loss(mdp, comp, None, eta, cfg.temperature)
            report.max_gap = max(report.max_gap, gap)
            if gap > slack:
                report.violations.append((eta.label(), i, gap))
    return report


class GradientTerms(NamedTuple):
    additional: np.ndarray
    modified: np.ndarray


def _horizon_flow_weights(P_pi: np.ndarray, p0: np.ndarray, v: np.ndarray, eta: HorizonDistribution) -> np.ndarray:
    """``W[s, s'] = sum_n eta(n) sum_{j+m=n-1} (p0 P^j)[s] (P^m v)[s']``."""
    if eta.is_closed_form_geometric:
        kappa = eta.param
        N = np.linalg.inv(np.eye(P_pi.shape[0]) - kappa * P_pi)
        return (1.0 - kappa) * kappa * np.outer(p0 @ N, N @ v)
    pmf = eta.pmf()
    X = np.zeros((P_pi.shape[0], P_pi.shape[0]))
    W = np.zeros_like(X)
    x = p0.copy()
    for n in range(1, pmf.size):
        X = X @ P_pi.T + np.outer(x, v)
        x = x @ P_pi
        W += pmf[n] * X
    return W


def policy_gradient_terms(mdp: FiniteMdp, logits, cost, eta: HorizonDistribution) -> GradientTerms:
    """Both parts of the gradient of the unregularized eta-loss w.r.t. softmax logits.

    ``additional`` carries the dependence of the eta-horizon law on the policy
    and vanishes for a point mass at zero; ``modified`` is the classical
    score-function term reweighted by the horizon law.
    """
    probs = softmax_rows(np.asarray(logits, dtype=float))
    c = _cost(mdp, cost)
    P_pi = state_transition_matrix(mdp, probs)
    S = mdp.n_states
    v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, (probs * c).sum(axis=1))
    q = c + mdp.gamma * mdp.transition @ v
    advantage = q - v[:, None]

    horizon_states = mdp.p0 @ p_eta(mdp, probs, eta).state_marginal()
    visit = horizon_states @ rho(mdp, probs).state_marginal()
    modified = visit[:, None] * probs * advantage

    W = _horizon_flow_weights(P_pi, mdp.p0, v, eta)
    # d P_pi[s, :] / d logit[s, b] = pi(b|s) (P[s, b, :] - P_pi[s, :])
    shift = mdp.transition - P_pi[:, None, :]
    additional = probs * np.einsum("st,sbt->sb", W, shift)
    return GradientTerms(additional, modified)


def generalized_policy_gradient(mdp: FiniteMdp, logits, cost, eta: HorizonDistribution) -> np.ndarray:
    terms = policy_gradient_terms(mdp, logits, cost, eta)
    return terms.additional + terms.modified


def advantage(mdp: FiniteMdp, pi, cost=None, tau: float = 0.0) -> np.ndarray:
    cfg = SoftRlConfig(temperature=tau)
    v = policy_evaluation(mdp, pi, cfg, cost)
    return _cost(mdp, cost) + mdp.gamma * mdp.transition @ v - v[:, None]


def trpo_identity_residual(mdp: FiniteMdp, pi_new, pi_old, cost, eta: HorizonDistribution) -> float:
    """``|L(new) - L(old) - E^eta_new[sum_t gamma^t A_old]|`` for the unregularized eta-loss.

    This difference form is exact for a point mass at zero. For other horizon
    laws the telescoping sum leaves ``E^eta_new[v_old(s_k)]`` rather than
    ``E^eta_old[v_old(s_k)]``, so the residual is generally nonzero; see
    :func:`eta_improvement_residual` for the exact decomposition.
    """
    adv = advantage(mdp, pi_old, cost)
    gain = mdp.p0 @ mu(mdp, pi_new, eta).flat @ adv.reshape(-1)
    lhs = eta_loss(mdp, pi_new, cost, eta)
    rhs = eta_loss(mdp, pi_old, cost, eta) + gain
    return float(abs(lhs - rhs))


def eta_improvement_residual(mdp: FiniteMdp, pi_new, pi_old, cost, eta: HorizonDistribution) -> float:
    """Residual of ``L(new) = E^eta_new[v_old(s_k)] + E^eta_new[sum_t gamma^t A_old]``."""
    v_old = policy_evaluation(mdp, pi_old, SoftRlConfig(temperature=0.0), cost)
    adv = _cost(mdp, cost) + mdp.gamma * mdp.transition @ v_old - v_old[:, None]
    gain = mdp.p0 @ mu(mdp, pi_new, eta).flat @ adv.reshape(-1)
    baseline = mdp.p0 @ p_eta(mdp, pi_new, eta).state_marginal() @ v_old
    return float(abs(eta_loss(mdp, pi_new, cost, eta) - baseline - gain))
