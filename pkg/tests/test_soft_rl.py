import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etairl.envs import random_mdp, random_policy
from etairl.mdp import FiniteMdp, HorizonDistribution, Policy, state_transition_matrix
from etairl.occupancy import rho
from etairl.sampling import rollouts
from etairl.soft_rl import (
    NonConvergenceError,
    SoftRlConfig,
    advantage,
    bellman_optimality,
    bellman_policy,
    eta_improvement_residual,
    eta_loss,
    eta_optimality_check,
    generalized_policy_gradient,
    policy_evaluation,
    policy_gradient_terms,
    q_values,
    soft_value_iteration,
    softmin,
    trpo_identity_residual,
)

from conftest import draw_instance, single_state_mdp

EXACT = SoftRlConfig(temperature=0.0)


def classical_return(mdp, pi, cost=None):
    """p0 (I - gamma P_pi)^-1 c_pi, written out independently of the library solvers."""
    c = mdp.cost if cost is None else cost
    P_pi = np.einsum("sa,sat->st", pi.probs, mdp.transition)
    return float(mdp.p0 @ np.linalg.inv(np.eye(mdp.n_states) - mdp.gamma * P_pi) @ (pi.probs * c).sum(1))


# ---------------------------------------------------------------- operators


def test_bellman_policy_zero_value_is_expected_step_cost(rng):
    mdp = random_mdp(rng, 3, 2)
    pi = random_policy(rng, 3, 2)
    out = bellman_policy(np.zeros(3), mdp, pi, EXACT)
    assert np.allclose(out, (pi.probs * mdp.cost).sum(1))


def test_bellman_policy_uniform_entropy():
    mdp = FiniteMdp(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), 0.9, np.array([1.0, 0.0]))
    out = bellman_policy(np.zeros(2), mdp, Policy.uniform(2, 2), SoftRlConfig(temperature=1.0))
    assert np.allclose(out, -np.log(2.0))


def test_single_state_soft_fixed_point():
    mdp = single_state_mdp([0.0, 1.0], 0.5)
    v, pi = soft_value_iteration(mdp, SoftRlConfig(temperature=1.0))
    assert v[0] == pytest.approx(-np.log(1 + np.exp(-1.0)) / 0.5, abs=1e-9)
    assert pi.probs[0, 0] == pytest.approx(1 / (1 + np.exp(-1.0)), abs=1e-9)
    assert pi.probs[0, 0] == pytest.approx(0.731, abs=5e-4)


def hard_value_iteration(mdp, sweeps=5000):
    v = np.zeros(mdp.n_states)
    for _ in range(sweeps):
        v = (mdp.cost + mdp.gamma * mdp.transition @ v).min(axis=1)
    return (mdp.cost + mdp.gamma * mdp.transition @ v).argmin(axis=1)


@pytest.mark.parametrize("seed", range(5))
def test_small_temperature_is_greedy(seed):
    mdp, _ = draw_instance(seed, 4, 3)
    _, pi = soft_value_iteration(mdp, SoftRlConfig(temperature=1e-4))
    assert np.array_equal(pi.probs.argmax(axis=1), hard_value_iteration(mdp))


def test_identical_action_costs_give_uniform_policy(rng):
    mdp = random_mdp(rng, 3, 4)
    mdp = FiniteMdp(np.repeat(mdp.transition[:, :1], 4, axis=1), np.ones((3, 4)), 0.9, mdp.p0)
    _, pi = bellman_optimality(np.zeros(3), mdp, SoftRlConfig(temperature=0.5))
    assert np.allclose(pi.probs, 0.25)


def test_softmin_is_stable_for_large_values():
    value, probs = softmin(np.array([[1e6, 1e6 + 1.0]]), 1e-3)
    assert np.isfinite(value).all() and np.isfinite(probs).all()
    assert probs[0, 0] == pytest.approx(1.0)


@given(st.integers(0, 10_000))
def test_operators_are_gamma_contractions(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 4, 3)
    pi = random_policy(rng, 4, 3)
    cfg = SoftRlConfig(temperature=float(rng.uniform(0.0, 1.0)))
    u, w = rng.normal(size=4) * 10, rng.normal(size=4) * 10
    bound = mdp.gamma * np.abs(u - w).max() + 1e-12
    assert np.abs(bellman_policy(u, mdp, pi, cfg) - bellman_policy(w, mdp, pi, cfg)).max() <= bound
    assert np.abs(bellman_optimality(u, mdp, cfg).value - bellman_optimality(w, mdp, cfg).value).max() <= bound


@pytest.mark.parametrize("seed", range(5))
def test_soft_value_iteration_fixed_point_and_self_consistency(seed):
    mdp, _ = draw_instance(seed, 4, 2)
    cfg = SoftRlConfig(temperature=0.1)
    v, pi = soft_value_iteration(mdp, cfg)
    assert np.abs(bellman_optimality(v, mdp, cfg).value - v).max() < 10 * cfg.tolerance
    assert np.abs(policy_evaluation(mdp, pi, cfg) - v).max() < 10 * cfg.tolerance


def test_value_iteration_residual_decays_geometrically(rng):
    mdp = random_mdp(rng, 4, 2, gamma=0.9)
    cfg = SoftRlConfig(temperature=0.2)
    v = np.zeros(4)
    steps = []
    for _ in range(30):
        nxt = bellman_optimality(v, mdp, cfg).value
        steps.append(np.abs(nxt - v).max())
        v = nxt
    for a, b in zip(steps, steps[1:]):
        assert b <= mdp.gamma * a + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_soft_optimum_dominates_random_policies(seed):
    mdp, _ = draw_instance(seed, 4, 3)
    cfg = SoftRlConfig(temperature=0.05)
    v_star, _ = soft_value_iteration(mdp, cfg)
    rng = np.random.default_rng(seed)
    for _ in range(50):
        v = policy_evaluation(mdp, random_policy(rng, 4, 3), cfg)
        assert np.all(v_star <= v + 1e-6)


@given(st.integers(0, 10_000))
def test_policy_improvement(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 3)
    pi = random_policy(rng, 3, 3)
    cfg = SoftRlConfig(temperature=0.3)
    v_pi = policy_evaluation(mdp, pi, cfg)
    improved = bellman_optimality(v_pi, mdp, cfg).policy
    assert np.all(policy_evaluation(mdp, improved, cfg) <= v_pi + 1e-9)


@given(st.integers(0, 10_000))
def test_regularized_q_identity(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2)
    pi = random_policy(rng, 3, 2)
    cfg = SoftRlConfig(temperature=0.2)
    v = policy_evaluation(mdp, pi, cfg)
    assert np.abs(q_values(mdp, pi, cfg) - (mdp.cost + mdp.gamma * mdp.transition @ v)).max() < 1e-9
    # v is the policy average of q plus the entropy term
    expected_v = (pi.probs * q_values(mdp, pi, cfg)).sum(1) + cfg.temperature * (pi.probs * np.log(pi.probs)).sum(1)
    assert np.abs(expected_v - v).max() < 1e-9


def test_non_convergence_raises_with_residual(rng):
    mdp = random_mdp(rng, 3, 2, gamma=0.99)
    with pytest.raises(NonConvergenceError) as info:
        soft_value_iteration(mdp, SoftRlConfig(max_iters=3))
    assert info.value.residual > 0


# ---------------------------------------------------------------- eta loss


@given(st.integers(0, 10_000))
def test_eta_loss_dirac_is_classical_return(seed):
    mdp, pi = draw_instance(seed, 3, 2)
    assert eta_loss(mdp, pi, None, HorizonDistribution.dirac(0)) == pytest.approx(classical_return(mdp, pi), abs=1e-10)


def test_eta_loss_zero_for_free_deterministic_policy(rng):
    mdp = random_mdp(rng, 3, 2)
    pi = Policy.deterministic([0, 1, 1], 2)
    assert eta_loss(mdp, pi, np.zeros((3, 2)), HorizonDistribution.geometric(0.7), tau=0.5) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("eta", [HorizonDistribution.geometric(0.6), HorizonDistribution.poisson(2.0)], ids=str)
def test_eta_loss_matches_monte_carlo(eta):
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 3, 2, gamma=0.5)
    pi = random_policy(rng, 3, 2)
    n, tail = 100_000, 50
    k_max = eta.max_offset
    trajs = rollouts(mdp, pi, n, k_max + tail, rng)
    costs = np.stack([t.costs for t in trajs])
    k = rng.choice(eta.pmf().size, size=n, p=eta.pmf())
    discounts = mdp.gamma ** np.arange(tail)
    idx = k[:, None] + np.arange(tail)[None, :]
    samples = (np.take_along_axis(costs, idx, axis=1) * discounts).sum(1)
    se = samples.std(ddof=1) / np.sqrt(n)
    assert abs(samples.mean() - eta_loss(mdp, pi, None, eta)) < 3 * se


# ---------------------------------------------------------------- eta optimality


SPEC_GRID = [
    HorizonDistribution.dirac(0),
    HorizonDistribution.geometric(0.5),
    HorizonDistribution.geometric(0.99),
    HorizonDistribution.poisson(3.0),
    HorizonDistribution.uniform(20),
]


@pytest.mark.parametrize("seed", range(2))
def test_soft_optimum_minimizes_every_eta_loss(seed):
    mdp, _ = draw_instance(seed, 4, 2, gamma=0.9)
    report = eta_optimality_check(mdp, SPEC_GRID, n_competitors=100, seed=seed)
    assert report.ok, report.violations[:3]


def test_optimum_against_itself_is_equal(rng):
    mdp = random_mdp(rng, 3, 2)
    cfg = SoftRlConfig()
    pi = soft_value_iteration(mdp, cfg).policy
    for eta in SPEC_GRID:
        assert eta_loss(mdp, pi, None, eta, cfg.temperature) - eta_loss(mdp, pi.probs.copy(), None, eta, cfg.temperature) == pytest.approx(0.0, abs=1e-10)


def test_single_action_mdp_passes(rng):
    mdp = random_mdp(rng, 3, 1)
    report = eta_optimality_check(mdp, SPEC_GRID, n_competitors=10)
    assert report.ok and report.max_gap <= 1e-10


# ---------------------------------------------------------------- gradient


def numerical_gradient(mdp, logits, eta, step=1e-5):
    out = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += step
        down[idx] -= step
        out[idx] = (
            eta_loss(mdp, Policy.from_logits(up), None, eta) - eta_loss(mdp, Policy.from_logits(down), None, eta)
        ) / (2 * step)
    return out


@pytest.mark.parametrize(
    "eta",
    [HorizonDistribution.geometric(0.5), HorizonDistribution.poisson(2.0), HorizonDistribution.uniform(5), HorizonDistribution.dirac(2)],
    ids=str,
)
def test_gradient_matches_finite_differences(eta):
    rng = np.random.default_rng(11)
    mdp = random_mdp(rng, 3, 2)
    logits = rng.normal(size=(3, 2))
    analytic = generalized_policy_gradient(mdp, logits, None, eta)
    numeric = numerical_gradient(mdp, logits, eta)
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-4


def test_dirac_zero_gradient_is_classical(rng):
    mdp = random_mdp(rng, 4, 3)
    logits = rng.normal(size=(4, 3))
    terms = policy_gradient_terms(mdp, logits, None, HorizonDistribution.dirac(0))
    assert np.abs(terms.additional).max() < 1e-12
    pi = Policy.from_logits(logits)
    visits = mdp.p0 @ rho(mdp, pi).state_marginal()
    classical = visits[:, None] * pi.probs * advantage(mdp, pi)
    assert np.allclose(terms.modified, classical, atol=1e-12)


def test_additional_term_is_nonzero_off_dirac(rng):
    mdp = random_mdp(rng, 3, 2)
    terms = policy_gradient_terms(mdp, rng.normal(size=(3, 2)), None, HorizonDistribution.geometric(0.5))
    assert np.abs(terms.additional).max() > 1e-6


def test_constant_cost_has_zero_gradient(rng):
    mdp = random_mdp(rng, 3, 2)
    grad = generalized_policy_gradient(mdp, rng.normal(size=(3, 2)), np.ones((3, 2)), HorizonDistribution.poisson(3.0))
    assert np.abs(grad).max() < 1e-8


# ---------------------------------------------------------------- improvement identities


@given(st.integers(0, 10_000))
def test_difference_identity_self_case(seed):
    mdp, pi = draw_instance(seed, 3, 2)
    assert trpo_identity_residual(mdp, pi, pi, None, HorizonDistribution.geometric(0.7)) < 1e-10


@given(st.integers(0, 10_000))
def test_difference_identity_classical_case(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2)
    new, old = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
    assert trpo_identity_residual(mdp, new, old, None, HorizonDistribution.dirac(0)) < 1e-8


@given(st.integers(0, 10_000), st.sampled_from(SPEC_GRID))
def test_exact_improvement_decomposition(seed, eta):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2)
    new, old = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
    assert eta_improvement_residual(mdp, new, old, None, eta) < 1e-8
