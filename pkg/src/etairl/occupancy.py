"""Discounted occupancy, eta-horizon visitation and their composition.

All measures are stored as arrays ``values[k, s, a]`` where the conditioning
index ``k`` is a start state ``s0`` (state-conditioned, the first action drawn
from the policy) or a flattened start pair ``(s0, a0)`` (pair-conditioned).
Row masses: ``rho`` sums to ``1/(1-gamma)``, ``p_eta`` to one and ``mu`` to
``1/(1-gamma)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mdp import FiniteMdp, HorizonDistribution, Policy, as_probs, policy_transition_operator


class ConsistencyError(ArithmeticError):
    """Independent evaluation routes of the same quantity disagree."""


@dataclass(frozen=True)
class OccupancyMeasure:
    values: np.ndarray
    pair_conditioned: bool = False
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise ValueError("occupancy values must have shape (conditions, S, A)")
        object.__setattr__(self, "values", values)

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    @property
    def n_actions(self) -> int:
        return self.values.shape[2]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[0], -1)

    @property
    def row_mass(self) -> np.ndarray:
        return self.flat.sum(axis=1)

    @property
    def total_mass(self) -> float:
        """Mass of a single conditional row (all rows share it)."""
        return float(self.row_mass.mean())

    def state_marginal(self) -> np.ndarray:
        return self.values.sum(axis=2)

    def weighted(self, start) -> np.ndarray:
        """Mix the conditional rows with start weights, e.g. ``p0``. Returns ``(S, A)``."""
        return np.tensordot(np.asarray(start, dtype=float), self.values, axes=1)

    def scaled(self, factor: float) -> "OccupancyMeasure":
        return OccupancyMeasure(self.values * factor, self.pair_conditioned, self.label)

    def to_csv(self, path) -> None:
        S, A = self.n_states, self.n_actions
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.pair_conditioned:
                writer.writerow(["s0", "a0", "s", "a", "value"])
                for k in range(self.values.shape[0]):
                    for s in range(S):
                        for a in range(A):
                            writer.writerow([k // A, k % A, s, a, repr(float(self.values[k, s, a]))])
            else:
                writer.writerow(["s0", "s", "a", "value"])
                for k in range(self.values.shape[0]):
                    for s in range(S):
                        for a in range(A):
                            writer.writerow([k, s, a, repr(float(self.values[k, s, a]))])

    @classmethod
    def from_csv(cls, path, n_states: int, n_actions: int) -> "OccupancyMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        pair = "a0" in rows[0]
        n_cond = n_states * n_actions if pair else n_states
        values = np.zeros((n_cond, n_states, n_actions))
        for row in rows:
            k = int(row["s0"]) * n_actions + int(row["a0"]) if pair else int(row["s0"])
            values[k, int(row["s"]), int(row["a"])] = float(row["value"])
        return cls(values, pair)


def initial_routing(mdp: FiniteMdp, pi, pair_conditioned: bool = False) -> np.ndarray:
    """Distribution of the time-zero pair for every conditioning index, shape ``(K, S*A)``."""
    S, A = mdp.n_states, mdp.n_actions
    if pair_conditioned:
        return np.eye(S * A)
    probs = as_probs(pi)
    start = np.zeros((S, S, A))
    start[np.arange(S), np.arange(S), :] = probs
    return start.reshape(S, S * A)


def _wrap(flat: np.ndarray, mdp: FiniteMdp, pair_conditioned: bool, label: str) -> OccupancyMeasure:
    return OccupancyMeasure(flat.reshape(-1, mdp.n_states, mdp.n_actions), pair_conditioned, label)


def _resolvent_rows(start: np.ndarray, kernel: np.ndarray, discount: float) -> np.ndarray:
    """``start @ (I - discount * kernel)^{-1}`` via a transposed linear solve."""
    n = kernel.shape[0]
    return np.linalg.solve(np.eye(n) - discount * kernel.T, start.T).T


def rho(mdp: FiniteMdp, pi, pair_conditioned: bool = False) -> OccupancyMeasure:
    """Discounted occupancy ``sum_t gamma^t P(s_t = s, a_t = a | start)``."""
    M = policy_transition_operator(mdp, pi)
    start = initial_routing(mdp, pi, pair_conditioned)
    return _wrap(_resolvent_rows(start, M, mdp.gamma), mdp, pair_conditioned, "rho")


def weighted_occupancy(mdp: FiniteMdp, pi, weights, pair_conditioned: bool = False) -> OccupancyMeasure:
    """``sum_n weights[n] P(s_n = s, a_n = a | start)`` by explicit powers of the kernel."""
    M = policy_transition_operator(mdp, pi)
    row = initial_routing(mdp, pi, pair_conditioned)
    acc = np.zeros_like(row)
    weights = np.asarray(weights, dtype=float)
    last = np.flatnonzero(weights)
    steps = last[-1] + 1 if last.size else 0
    for n in range(steps):
        if weights[n] != 0.0:
            acc += weights[n] * row
        if n + 1 < steps:
            row = row @ M
    return _wrap(acc, mdp, pair_conditioned, "weighted")


def p_eta(
    mdp: FiniteMdp,
    pi,
    eta: HorizonDistribution,
    pair_conditioned: bool = False,
    method: str = "auto",
) -> OccupancyMeasure:
    """Law of the pair reached after an eta-distributed number of steps.

    ``method`` is ``"closed_form"`` (geometric laws only, via a resolvent),
    ``"power_sum"`` (truncated sum over offsets) or ``"auto"``.
    """
    if method == "auto":
        method = "closed_form" if eta.is_closed_form_geometric else "power_sum"
    if method == "closed_form":
        if eta.kind != "geometric" or eta.param >= 1.0:
            raise ValueError("the resolvent form needs a geometric horizon with kappa < 1")
        kappa = eta.param
        M = policy_transition_operator(mdp, pi)
        start = initial_routing(mdp, pi, pair_conditioned)
        flat = (1.0 - kappa) * _resolvent_rows(start, M, kappa)
        return _wrap(flat, mdp, pair_conditioned, "p_eta")
    if method != "power_sum":
        raise ValueError(f"unknown method {method!r}")
    out = weighted_occupancy(mdp, pi, eta.pmf(), pair_conditioned)
    return OccupancyMeasure(out.values, pair_conditioned, "p_eta")


def mu(mdp: FiniteMdp, pi, eta: HorizonDistribution, route: str = "occupancy_first") -> OccupancyMeasure:
    """Composition of the discounted occupancy with the eta-horizon kernel.

    ``route="occupancy_first"`` integrates ``rho(.|s0)`` against the
    pair-conditioned ``p_eta``; ``route="horizon_first"`` integrates
    ``p_eta(.|s0)`` against the pair-conditioned ``rho``. Both give the same
    measure because the two kernels are functions of the same operator.
    """
    if route == "occupancy_first":
        first = rho(mdp, pi).flat
        second = p_eta(mdp, pi, eta, pair_conditioned=True).flat
    elif route == "horizon_first":
        first = p_eta(mdp, pi, eta).flat
        second = rho(mdp, pi, pair_conditioned=True).flat
    else:
        raise ValueError(f"unknown route {route!r}")
    return _wrap(first @ second, mdp, False, "mu")


class PolicyRecovery(NamedTuple):
    policy: Policy
    unidentified: np.ndarray  # boolean mask of states that carry no mass


def policy_from_occupancy(phi: OccupancyMeasure, weights=None, rel_tol: float = 1e-13) -> PolicyRecovery:
    """Recover ``pi(a|s)`` as the action-conditional of an occupancy measure.

    Conditional rows are pooled with ``weights`` (all ones by default). States
    without mass cannot be identified: they get a uniform row and are flagged
    in ``unidentified``.
    """
    if weights is None:
        weights = np.ones(phi.values.shape[0])
    pooled = phi.weighted(weights)
    state_mass = pooled.sum(axis=1)
    unidentified = state_mass <= rel_tol * max(pooled.sum(), np.finfo(float).tiny)
    probs = np.full_like(pooled, 1.0 / phi.n_actions)
    known = ~unidentified
    probs[known] = np.clip(pooled[known], 0.0, None) / state_mass[known, None]
    probs[known] /= probs[known].sum(axis=1, keepdims=True)
    return PolicyRecovery(Policy(probs), unidentified)


def occupancy_entropy(phi: OccupancyMeasure, p0) -> float:
    """Conditional action entropy of a measure, ``-sum m(s,a) log(m(s,a) / m(s))`` with ``m = p0 . phi``.

    Concave in ``phi``; for ``phi = mu_pi`` it equals the eta-weighted policy
    entropy of ``pi``.
    """
    pooled = phi.weighted(p0)
    probs = policy_from_occupancy(phi, weights=p0).policy.probs
    mask = pooled > 0
    return float(-(pooled[mask] * np.log(probs[mask])).sum())


@dataclass(frozen=True)
class FlowResiduals:
    combined_vs_horizon: float
    combined_vs_occupancy: float
    horizon: float
    occupancy: float

    def max(self) -> float:
        return max(self.combined_vs_horizon, self.combined_vs_occupancy, self.horizon, self.occupancy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.combined_vs_horizon, self.combined_vs_occupancy, self.horizon, self.occupancy)


def flow_residuals(
    f: OccupancyMeasure, g: OccupancyMeasure, h: OccupancyMeasure, mdp: FiniteMdp, gamma_eta: float
) -> FlowResiduals:
    """Max absolute residual of the four affine state-flow equations.

    Inputs are in normalized form: ``f`` a composed measure (mass
    ``1/(1-gamma)``), ``g`` a geometric-``gamma_eta`` horizon law (mass one) and
    ``h`` a discounted occupancy (mass ``1/(1-gamma)``). ``f`` and ``g`` are
    rescaled by ``1/(1-gamma_eta)`` so that every equation reads in the
    unnormalized convention, with source term ``delta(s = s0)``.
    """
    if not 0.0 <= gamma_eta < 1.0:
        raise ValueError("gamma_eta must lie in [0, 1)")
    for m in (f, g, h):
        if m.pair_conditioned:
            raise ValueError("flow equations are stated for state-conditioned measures")
    scale = 1.0 / (1.0 - gamma_eta)
    fv, gv, hv = f.values * scale, g.values * scale, h.values
    P = mdp.transition
    source = np.eye(mdp.n_states)

    def inflow(x):
        return np.einsum("ksa,sat->kt", x, P)

    f_m, g_m, h_m = fv.sum(axis=2), gv.sum(axis=2), hv.sum(axis=2)
    r1 = f_m - g_m - mdp.gamma * inflow(fv)
    r2 = f_m - h_m - gamma_eta * inflow(fv)
    r3 = g_m - source - gamma_eta * inflow(gv)
    r4 = h_m - source - mdp.gamma * inflow(hv)
    return FlowResiduals(*(float(np.abs(r).max()) for r in (r1, r2, r3, r4)))


def _discount_horizon(gamma: float, rel_tol: float = 1e-15) -> int:
    if gamma <= 0.0:
        return 1
    return math.ceil(math.log(rel_tol) / math.log(gamma)) + 1


def tower_rule_routes(mdp: FiniteMdp, pi, eta: HorizonDistribution, fn) -> tuple[float, float, float]:
    """Three evaluations of ``E^eta[sum_t gamma^t fn(s_{t+k}, a_{t+k})]`` from ``p0``.

    1. occupancy then pair-conditioned horizon kernel,
    2. the composed measure ``mu`` directly,
    3. a truncated double sum over ``(t, k)`` by propagating the pair law in time.
    """
    fn = np.asarray(fn, dtype=float).reshape(-1)
    p0 = mdp.p0
    via_kernels = p0 @ rho(mdp, pi).flat @ p_eta(mdp, pi, eta, pair_conditioned=True).flat @ fn
    via_mu = p0 @ mu(mdp, pi, eta).flat @ fn

    pmf = eta.pmf()
    discounts = mdp.gamma ** np.arange(_discount_horizon(mdp.gamma))
    weights = np.convolve(pmf, discounts)  # weights[n] = sum_{t+k=n} gamma^t eta(k)
    M = policy_transition_operator(mdp, pi)
    law = p0 @ initial_routing(mdp, pi)
    brute = 0.0
    for w in weights:
        brute += w * (law @ fn)
        law = law @ M
    return float(via_kernels), float(via_mu), float(brute)


def eta_expectation(mdp: FiniteMdp, pi, eta: HorizonDistribution, fn, tol: float = 1e-6) -> float:
    """Eta-weighted discounted expectation of ``fn[s, a]``; raises if the routes disagree."""
    values = tower_rule_routes(mdp, pi, eta, fn)
    spread = max(values) - min(values)
    if spread > tol:
        raise ConsistencyError(f"tower-rule routes disagree by {spread:.3e}: {values}")
    return values[0]
