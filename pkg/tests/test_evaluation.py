import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etairl.envs import chain_env, make_expert, random_mdp, random_policy
from etairl.evaluation import (
    MmdConfig,
    discounted_return,
    embed_pairs,
    exact_mmd_metrics,
    exact_normalized_return,
    mmd2_unbiased,
    normalized_return,
    population_mmd2,
    rbf_kernel,
    sample_mmd_metrics,
)
from etairl.mdp import FiniteMdp, HorizonDistribution, Policy
from etairl.sampling import ReplayBuffer, rollouts


def naive_mmd2(x, y, width, cross=2.0):
    """Direct four-term U-statistic over explicit double loops."""
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / width)
    m, n = len(x), len(y)
    xx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    yy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    xy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    return xx + yy - cross * xy


# ---------------------------------------------------------------- kernel


def test_kernel_on_equal_points_is_one():
    x = np.array([[0.3, -1.0, 2.0]])
    assert rbf_kernel(x, x)[0, 0] == pytest.approx(1.0)


def test_kernel_at_bandwidth_distance():
    # squared distance 4 with bandwidth 4
    assert rbf_kernel([[0.0, 0.0]], [[2.0, 0.0]], bandwidth=4.0)[0, 0] == pytest.approx(np.exp(-1.0))
    assert np.exp(-1.0) == pytest.approx(0.3679, abs=1e-4)


@given(st.integers(0, 10_000))
def test_kernel_symmetry(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    assert np.allclose(rbf_kernel(x, y), rbf_kernel(y, x).T)


def test_default_bandwidth_is_dimension():
    x, y = np.zeros((1, 5)), np.ones((1, 5))
    assert rbf_kernel(x, y)[0, 0] == pytest.approx(np.exp(-1.0))


# ---------------------------------------------------------------- estimator


def test_identical_points_give_zero():
    x = np.tile([[1.0, 0.0, 1.0]], (6, 1))
    assert mmd2_unbiased(x, x.copy()) == pytest.approx(0.0, abs=1e-14)


def test_two_point_samples():
    p, q = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    kappa = float(rbf_kernel(p, q)[0, 0])
    x = np.stack([p, q])
    assert mmd2_unbiased(x, x.copy()) == pytest.approx(kappa - 1.0, abs=1e-14)


@given(st.integers(0, 10_000), st.booleans())
def test_estimator_matches_naive_u_statistic(seed, literal):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(7, 3)), rng.normal(0.5, 1.0, size=(5, 3))
    cfg = MmdConfig(bandwidth=2.0, literal_cross_term=literal)
    assert mmd2_unbiased(x, y, cfg) == pytest.approx(naive_mmd2(x, y, 2.0, 1.0 if literal else 2.0), abs=1e-12)


@given(st.integers(0, 10_000))
def test_estimator_symmetry_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    x = embed_pairs(rng.integers(3, size=20), rng.integers(2, size=20), 3, 2)
    y = embed_pairs(rng.integers(3, size=15), rng.integers(2, size=15), 3, 2)
    base = mmd2_unbiased(x, y)
    assert mmd2_unbiased(y, x) == pytest.approx(base, abs=1e-13)
    assert mmd2_unbiased(x[rng.permutation(20)], y[rng.permutation(15)]) == pytest.approx(base, abs=1e-13)


def test_too_few_samples_raise():
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((1, 2)), np.zeros((3, 2)))


def test_estimator_is_centred_for_equal_laws():
    rng = np.random.default_rng(0)
    law = rng.dirichlet(np.ones(8))
    estimates = []
    for _ in range(100):
        x, y = rng.choice(8, size=10_000, p=law), rng.choice(8, size=10_000, p=law)
        estimates.append(mmd2_unbiased(embed_pairs(*np.divmod(x, 2), 4, 2), embed_pairs(*np.divmod(y, 2), 4, 2)))
    estimates = np.array(estimates)
    assert abs(estimates.mean()) <= 3 * estimates.std(ddof=1) / np.sqrt(estimates.size)


@pytest.mark.parametrize("seed", range(3))
def test_estimator_approaches_population_value(seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    x, y = rng.choice(6, size=10_000, p=p), rng.choice(6, size=10_000, p=q)
    estimate = mmd2_unbiased(embed_pairs(*np.divmod(x, 2), 3, 2), embed_pairs(*np.divmod(y, 2), 3, 2))
    assert abs(estimate - population_mmd2(p.reshape(3, 2), q.reshape(3, 2))) < 0.02


# ---------------------------------------------------------------- population distance


@given(st.integers(0, 10_000))
def test_population_distance_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(6)).reshape(3, 2), rng.dirichlet(np.ones(6)).reshape(3, 2)
    assert population_mmd2(p, p.copy()) <= 1e-12
    assert population_mmd2(p, q) >= 0.0
    if np.abs(p - q).sum() > 1e-3:
        assert population_mmd2(p, q) > 1e-12


def test_population_distance_matches_expectation_form():
    p = np.array([[0.2, 0.3], [0.5, 0.0]])
    q = np.array([[0.1, 0.1], [0.4, 0.4]])
    s, a = np.divmod(np.arange(4), 2)
    pts = embed_pairs(s, a, 2, 2)
    K = rbf_kernel(pts, pts)
    pf, qf = p.reshape(-1), q.reshape(-1)
    direct = pf @ K @ pf + qf @ K @ qf - 2 * pf @ K @ qf
    assert population_mmd2(p, q) == pytest.approx(direct, abs=1e-14)


# ---------------------------------------------------------------- metrics


def test_exact_metrics_vanish_for_expert(rng):
    mdp = random_mdp(rng, 4, 2)
    pi = random_policy(rng, 4, 2)
    m = exact_mmd_metrics(mdp, pi, Policy(pi.probs.copy()), HorizonDistribution.geometric(0.99))
    assert m.mmd_rho <= 1e-6 and m.mmd_mu <= 1e-6  # square roots of values below 1e-12
    assert m.mmd_rho**2 <= 1e-12 and m.mmd_mu**2 <= 1e-12


def test_sampled_metrics_near_zero_for_expert(rng):
    mdp = random_mdp(rng, 4, 2)
    pi = random_policy(rng, 4, 2)
    a = ReplayBuffer(trajectories=rollouts(mdp, pi, 200, 50, seed=1))
    b = ReplayBuffer(trajectories=rollouts(mdp, pi, 200, 50, seed=2))
    m = sample_mmd_metrics(a, b, HorizonDistribution.geometric(0.99), mdp.gamma, 4, 2, 10_000, seed=3)
    assert abs(m.mmd_rho) < 0.01 and abs(m.mmd_mu) < 0.01


def test_future_pair_metric_penalizes_short_term_matching():
    mdp = chain_env(20, 0.1, 0.99)
    expert = make_expert(mdp).policy
    short_term = expert.probs.copy()
    short_term[-1] = 0.5  # matches the expert on the way, wanders off the goal
    stationary = expert.probs.copy()
    stationary[0] = 0.5  # dawdles at the start, same absorbing long-run behaviour
    eta = HorizonDistribution.geometric(0.99)
    a = exact_mmd_metrics(mdp, Policy(short_term), expert, eta)
    b = exact_mmd_metrics(mdp, Policy(stationary), expert, eta)
    assert a.mmd_mu > b.mmd_mu


# ---------------------------------------------------------------- returns


def test_discounted_return():
    assert discounted_return([1.0, 1.0, 1.0], 0.5) == pytest.approx(1.75)


def test_normalized_return_anchors():
    mdp = chain_env(6, 0.1, 0.9)
    expert = make_expert(mdp).policy
    uniform = Policy.uniform(6, 2)
    assert abs(normalized_return(mdp, expert, expert, 2000, 60, seed=0).value) < 0.05
    assert abs(normalized_return(mdp, uniform, expert, 2000, 60, seed=0).value - 1.0) < 0.05
    assert exact_normalized_return(mdp, expert, expert).value == pytest.approx(0.0, abs=1e-12)
    assert exact_normalized_return(mdp, uniform, expert).value == pytest.approx(1.0, abs=1e-12)


def test_degenerate_normalization_is_flagged():
    mdp = FiniteMdp(np.full((2, 2, 2), 0.5), np.ones((2, 2)), 0.9, np.array([1.0, 0.0]))
    pi = Policy.uniform(2, 2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = exact_normalized_return(mdp, pi, pi)
    assert out.degenerate and np.isnan(out.value)
    assert any("undefined" in str(w.message) for w in caught)
