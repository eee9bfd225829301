"""Executable numerical checks of the identities the library relies on.

Each suite draws random instances from a seeded generator, evaluates an
identity by two independent routes and reports the worst discrepancy against
a fixed tolerance. Suites are registered in ``SUITES`` for the CLI.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .envs import chain_env, random_mdp, random_policy
from .evaluation import embed_pairs, mmd2_unbiased, population_mmd2
from .girl import (
    CostModel,
    bayes_dual_value,
    dual_objective,
    feature_gap,
    max_convex_cost,
    max_linear_cost,
    one_hot_basis,
    project_l2_ball,
    project_simplex,
)
from .idle import nash_check
from .mdp import HorizonDistribution, Policy, softmax_rows
from .occupancy import (
    OccupancyMeasure,
    flow_residuals,
    mu,
    occupancy_entropy,
    p_eta,
    policy_from_occupancy,
    rho,
    tower_rule_routes,
)
from .sampling import ReplayBuffer, pair_counts, rollouts, sample_mu_pairs
from .soft_rl import (
    SoftRlConfig,
    eta_improvement_residual,
    eta_loss,
    eta_optimality_check,
    policy_gradient_terms,
    trpo_identity_residual,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metric: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_horizon(rng: np.random.Generator) -> HorizonDistribution:
    kind = rng.integers(5)
    if kind == 0:
        return HorizonDistribution.dirac(int(rng.integers(4)))
    if kind == 1:
        return HorizonDistribution.geometric(float(rng.uniform(0.0, 0.95)))
    if kind == 2:
        return HorizonDistribution.poisson(float(rng.uniform(0.5, 4.0)))
    if kind == 3:
        return HorizonDistribution.uniform(int(rng.integers(1, 11)))
    return HorizonDistribution.custom(rng.random(int(rng.integers(1, 9))))


def _instance(rng, max_states=5, max_actions=3):
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    mdp = random_mdp(rng, S, A)
    return mdp, random_policy(rng, S, A)


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - start
        return result

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_tower(n_draws: int = 100, seed: int = 0, tol: float = 1e-6) -> SuiteResult:
    """Kernel composition, composed measure and brute-force double sum agree."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        mdp, pi = _instance(rng)
        fn = rng.normal(size=(mdp.n_states, mdp.n_actions))
        values = tower_rule_routes(mdp, pi, random_horizon(rng), fn)
        worst = max(worst, max(values) - min(values))
    return SuiteResult("tower", worst < tol, worst, tol, f"max spread {worst:.2e} over {n_draws} draws (tol {tol:g})")


@_timed
def check_bijection(n_draws: int = 100, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    """A policy is recovered exactly from its occupancy and composed measures."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        mdp, pi = _instance(rng)
        eta = random_horizon(rng)
        for measure in (rho(mdp, pi), mu(mdp, pi, eta)):
            recovered, unidentified = policy_from_occupancy(measure)
            if unidentified.any():
                worst = np.inf
            worst = max(worst, float(np.abs(recovered.probs - pi.probs).max()))
    return SuiteResult("bijection", worst < tol, worst, tol, f"max round-trip error {worst:.2e} (tol {tol:g})")


@_timed
def check_flow(n_draws: int = 100, seed: int = 0, tol: float = 1e-8) -> SuiteResult:
    """Composed, horizon and occupancy measures satisfy the four flow equations; so do mixtures."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        mdp, pi = _instance(rng)
        kappa = float(rng.uniform(0.0, 0.95))
        eta = HorizonDistribution.geometric(kappa)
        pi2 = random_policy(rng, mdp.n_states, mdp.n_actions)
        triples = [(mu(mdp, p, eta), p_eta(mdp, p, eta), rho(mdp, p)) for p in (pi, pi2)]
        lam = float(rng.random())
        mixed = tuple(a.scaled(lam).values + b.scaled(1.0 - lam).values for a, b in zip(*triples))
        candidates = list(triples) + [tuple(OccupancyMeasure(v) for v in mixed)]
        for f, g, h in candidates:
            worst = max(worst, flow_residuals(f, g, h, mdp, kappa).max())
    return SuiteResult("flow", worst < tol, worst, tol, f"max residual {worst:.2e} incl. mixtures (tol {tol:g})")


ETA_KINDS = (
    HorizonDistribution.dirac(0),
    HorizonDistribution.geometric(0.5),
    HorizonDistribution.geometric(0.9),
    HorizonDistribution.poisson(3.0),
    HorizonDistribution.uniform(10),
)


@_timed
def check_eta_optimality(n_mdps: int = 5, n_competitors: int = 100, seed: int = 0, slack: float = 1e-6) -> SuiteResult:
    """The soft-optimal policy has the lowest regularized eta-loss among competitors, for every eta."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst_gap = -np.inf
    for i in range(n_mdps):
        mdp = random_mdp(rng, int(rng.integers(3, 6)), int(rng.integers(2, 4)), gamma=0.9)
        report = eta_optimality_check(mdp, ETA_KINDS, SoftRlConfig(), n_competitors, seed=seed + i, slack=slack)
        violations += len(report.violations)
        worst_gap = max(worst_gap, report.max_gap)
    total = n_mdps * len(ETA_KINDS) * n_competitors
    return SuiteResult(
        "eta-optimality",
        violations == 0,
        float(violations),
        0.0,
        f"{violations} violations of {total} comparisons, largest gap {worst_gap:.2e} (slack {slack:g})",
    )


def finite_difference_gradient(mdp, logits, eta, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        bump = np.zeros_like(logits)
        bump[idx] = step
        up = eta_loss(mdp, softmax_rows(logits + bump), None, eta)
        down = eta_loss(mdp, softmax_rows(logits - bump), None, eta)
        grad[idx] = (up - down) / (2.0 * step)
    return grad


@_timed
def check_gradient(n_instances: int = 20, seed: int = 0, tol: float = 1e-4) -> SuiteResult:
    """Analytic eta-policy gradient against central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    largest_additional = 0.0
    for i in range(n_instances):
        mdp, _ = _instance(rng, 4, 3)
        eta = random_horizon(rng) if i % 4 else HorizonDistribution.geometric(float(rng.uniform(0.3, 0.9)))
        logits = rng.normal(size=(mdp.n_states, mdp.n_actions))
        terms = policy_gradient_terms(mdp, logits, None, eta)
        analytic = terms.additional + terms.modified
        numeric = finite_difference_gradient(mdp, logits, eta)
        rel = np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)
        worst = max(worst, rel)
        if eta.pmf()[0] < 1.0:
            largest_additional = max(largest_additional, float(np.abs(terms.additional).max()))
    passed = worst < tol and largest_additional > 0.0
    return SuiteResult(
        "gradient",
        passed,
        worst,
        tol,
        f"max relative error {worst:.2e} (tol {tol:g}); largest horizon-law term {largest_additional:.2e}",
        extra={"largest_additional": largest_additional},
    )


@_timed
def check_trpo(n_draws: int = 100, seed: int = 0, tol: float = 1e-8) -> SuiteResult:
    """Difference form ``L(new) = L(old) + E^eta_new[sum gamma^t A_old]``.

    Also records the residual of the exact decomposition, whose baseline is
    ``E^eta_new[v_old(s_k)]``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_exact = 0.0
    failing_kinds = set()
    for _ in range(n_draws):
        mdp, old = _instance(rng)
        new = random_policy(rng, mdp.n_states, mdp.n_actions)
        eta = random_horizon(rng)
        r = trpo_identity_residual(mdp, new, old, None, eta)
        if r >= tol:
            failing_kinds.add(eta.kind if eta.pmf()[0] < 1.0 else "dirac(0)")
        worst = max(worst, r)
        worst_exact = max(worst_exact, eta_improvement_residual(mdp, new, old, None, eta))
    detail = f"max residual {worst:.2e} (tol {tol:g}); exact decomposition residual {worst_exact:.2e}"
    if failing_kinds:
        detail += f"; fails for horizon kinds {sorted(failing_kinds)}"
    return SuiteResult("trpo", worst < tol, worst, tol, detail, extra={"exact_residual": worst_exact})


@_timed
def check_entropy_concavity(n_triples: int = 1000, seed: int = 0, slack: float = 1e-10, eq_tol: float = 1e-8) -> SuiteResult:
    """Concavity of the conditional entropy of composed measures, with equality for a shared policy."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    worst_equality = 0.0
    for i in range(n_triples):
        mdp, pi1 = _instance(rng, 4, 3)
        eta = random_horizon(rng)
        pi2 = pi1 if i % 10 == 0 else random_policy(rng, mdp.n_states, mdp.n_actions)
        lam = float(rng.random())
        m1, m2 = mu(mdp, pi1, eta), mu(mdp, pi2, eta)
        mix = OccupancyMeasure(lam * m1.values + (1.0 - lam) * m2.values)
        h1, h2, hm = (occupancy_entropy(m, mdp.p0) for m in (m1, m2, mix))
        gap = hm - (lam * h1 + (1.0 - lam) * h2)
        worst = min(worst, gap)
        if pi2 is pi1:
            worst_equality = max(worst_equality, abs(gap))
    passed = worst >= -slack and worst_equality < eq_tol
    return SuiteResult(
        "entropy-concavity",
        passed,
        worst,
        slack,
        f"min concavity gap {worst:.2e} (slack {-slack:g}); shared-policy equality error {worst_equality:.2e}",
    )


@_timed
def check_idle_nash(n_deviations: int = 200, seed: int = 0, slack: float = 1e-9) -> SuiteResult:
    """No unilateral deviation from (1/2, p_eta) pays off, on the 2-state chain and random MDPs."""
    rng = np.random.default_rng(seed)
    cases = [(chain_env(2, 0.0, 0.9), Policy.deterministic([1, 0], 2), HorizonDistribution.geometric(0.7))]
    for _ in range(2):
        mdp, pi = _instance(rng, 3, 2)
        cases.append((mdp, pi, random_horizon(rng)))
    worst = -np.inf
    n_bad = 0
    for mdp, pi, eta in cases:
        report = nash_check(mdp, pi, eta, n_deviations, seed=int(rng.integers(2**31)), slack=slack)
        worst = max(worst, report.max_generator_gain, report.max_discriminator_gain)
        n_bad += len(report.violations)
    return SuiteResult(
        "idle-nash", n_bad == 0, worst, slack, f"{n_bad} profitable deviations, max gain {worst:.2e} (slack {slack:g})"
    )


@_timed
def check_mmd(n_repeats: int = 100, n_samples: int = 2000, seed: int = 0) -> SuiteResult:
    """Unbiased estimator centred at zero for equal laws; exact MMD vanishes iff laws are equal."""
    rng = np.random.default_rng(seed)
    S, A = 4, 2
    law = rng.dirichlet(np.ones(S * A))
    estimates = []
    for _ in range(n_repeats):
        x = rng.choice(S * A, size=n_samples, p=law)
        y = rng.choice(S * A, size=n_samples, p=law)
        estimates.append(mmd2_unbiased(embed_pairs(*np.divmod(x, A), S, A), embed_pairs(*np.divmod(y, A), S, A)))
    estimates = np.asarray(estimates)
    mean, sem = estimates.mean(), estimates.std(ddof=1) / np.sqrt(n_repeats)
    calibrated = abs(mean) <= 3.0 * sem
    same = population_mmd2(law.reshape(S, A), law.reshape(S, A))
    other = population_mmd2(law.reshape(S, A), rng.dirichlet(np.ones(S * A)).reshape(S, A))
    separates = same <= 1e-12 and other > 1e-12
    return SuiteResult(
        "mmd",
        bool(calibrated and separates),
        float(mean),
        float(3.0 * sem),
        f"mean estimate {mean:.2e} vs 3 s.e. {3 * sem:.2e}; exact equal {same:.1e}, distinct {other:.2e}",
    )


def maximize_by_projected_ascent(gap, projection, steps: int = 2000, lr: float = 0.5) -> np.ndarray:
    w = projection(np.zeros_like(gap) + 1.0 / gap.size)
    for _ in range(steps):
        w = projection(w + lr * gap)
    return w


@_timed
def check_duals(n_draws: int = 20, n_random_costs: int = 100, seed: int = 0) -> SuiteResult:
    """Closed-form linear and convex cost maximizers dominate feasible costs and match projected ascent."""
    rng = np.random.default_rng(seed)
    worst_dom = np.inf
    worst_match = 0.0
    for _ in range(n_draws):
        mdp, pi = _instance(rng, 4, 3)
        expert = random_policy(rng, mdp.n_states, mdp.n_actions)
        eta = random_horizon(rng)
        basis = one_hot_basis(mdp.n_states, mdp.n_actions)
        gap = feature_gap(mdp, pi, expert, eta, basis)
        for closed, project in ((max_linear_cost, project_l2_ball), (max_convex_cost, project_simplex)):
            w_star, value = closed(gap)
            for _ in range(n_random_costs):
                w = project(rng.normal(size=gap.size) * rng.uniform(0.1, 3.0))
                worst_dom = min(worst_dom, value - w @ gap)
            w_pg = maximize_by_projected_ascent(gap, project)
            worst_match = max(worst_match, abs(w_pg @ gap - value))
    passed = worst_dom >= -1e-9 and worst_match < 1e-4
    return SuiteResult(
        "duals", passed, worst_match, 1e-4, f"min dominance margin {worst_dom:.2e}; max ascent mismatch {worst_match:.2e}"
    )


@_timed
def check_gan_dual(n_draws: int = 10, seed: int = 0, tol: float = 1e-6) -> SuiteResult:
    """Bayes-optimal discriminator value equals the numerically maximized dual objective."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        mdp = random_mdp(rng, 3, 2)
        pi, expert = (random_policy(rng, 3, 2) for _ in range(2))
        eta = random_horizon(rng)
        closed = bayes_dual_value(mdp, pi, expert, eta, tau=0.01)

        def neg(x):
            cost = CostModel.tabular(-np.exp(x).reshape(3, 2), constraint="gan")
            return -dual_objective(mdp, pi, expert, cost, eta, tau=0.01)

        # Optimize over log(-c) so that every iterate is a strictly negative cost.
        res = optimize.minimize(
            neg, np.full(6, -0.5), method="L-BFGS-B", bounds=[(-30.0, 4.0)] * 6, options={"ftol": 1e-15, "gtol": 1e-10}
        )
        worst = max(worst, abs(-res.fun - closed))
    return SuiteResult("gan-dual", worst < tol, worst, tol, f"max |Bayes value - max_c L| {worst:.2e} (tol {tol:g})")


SAMPLING_ETAS = (
    HorizonDistribution.dirac(0),
    HorizonDistribution.geometric(0.5),
    HorizonDistribution.geometric(0.99),
    HorizonDistribution.poisson(3.0),
    HorizonDistribution.uniform(20),
)


@_timed
def check_sampling(n_samples: int = 100_000, seed: int = 0, tol: float = 0.05) -> SuiteResult:
    """Empirical future-pair law of the buffer sampler against the exact normalized composed measure."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    details = []
    for eta in SAMPLING_ETAS:
        mdp = random_mdp(rng, 3, 2, gamma=0.5)
        pi = random_policy(rng, 3, 2)
        horizon = 60 + int(np.log(1e-4) / np.log(eta.param)) if eta.kind == "geometric" and eta.param > 0.5 else 80
        buffer = ReplayBuffer(trajectories=rollouts(mdp, pi, 2000, horizon, rng))
        batch = sample_mu_pairs(buffer, eta, mdp.gamma, n_samples, rng)
        emp = pair_counts(batch.future_states, batch.future_actions, 3, 2).reshape(-1) / n_samples
        exact = mdp.p0 @ mu(mdp, pi, eta).flat * (1.0 - mdp.gamma)
        tv = 0.5 * float(np.abs(emp - exact).sum())
        details.append(f"{eta.label()}={tv:.3f}")
        worst = max(worst, tv)
    return SuiteResult("sampling", worst < tol, worst, tol, "TV " + ", ".join(details) + f" (tol {tol:g})")


SUITES = {
    "tower": check_tower,
    "bijection": check_bijection,
    "flow": check_flow,
    "eta-optimality": check_eta_optimality,
    "gradient": check_gradient,
    "trpo": check_trpo,
    "entropy-concavity": check_entropy_concavity,
    "idle-nash": check_idle_nash,
    "mmd": check_mmd,
    "duals": check_duals,
    "gan-dual": check_gan_dual,
    "sampling": check_sampling,
}


def run_suites(names, seed: int = 0) -> list[SuiteResult]:
    if "all" in names:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    return [SUITES[n](seed=seed) for n in names]
