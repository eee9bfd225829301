"""Finite discounted MDPs, stationary policies, horizon distributions and trajectories."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import stats

ROW_TOL = 1e-12

# Tail mass below which a geometric horizon counts as untruncated.
GEOMETRIC_TAIL_TOL = 1e-14
# Truncation used for a geometric horizon with kappa = 1 when none is given.
FLAT_GEOMETRIC_TRUNCATION = 1000
MAX_AUTO_TRUNCATION = 40_000


@dataclass(frozen=True)
class FiniteMdp:
    """Tabular MDP with ``transition[s, a, s']``, ``cost[s, a]`` and start law ``p0``.

    Construction only checks shapes. Use :func:`validate_mdp` for the
    stochasticity and sign invariants, which lets costs produced by a
    discriminator (negative) flow through the same solvers.
    """

    transition: np.ndarray
    cost: np.ndarray
    gamma: float
    p0: np.ndarray

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        cost = np.asarray(self.cost, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {transition.shape}")
        n_states, n_actions, _ = transition.shape
        if cost.shape != (n_states, n_actions):
            raise ValueError(f"cost must have shape {(n_states, n_actions)}, got {cost.shape}")
        if p0.shape != (n_states,):
            raise ValueError(f"p0 must have shape ({n_states},), got {p0.shape}")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_cost(self, cost) -> "FiniteMdp":
        return dataclasses.replace(self, cost=np.asarray(cost, dtype=float))

    def with_gamma(self, gamma: float) -> "FiniteMdp":
        return dataclasses.replace(self, gamma=gamma)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "cost": self.cost.tolist(),
            "gamma": self.gamma,
            "p0": self.p0.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMdp":
        mdp = cls(
            transition=np.array(data["transition"], dtype=float),
            cost=np.array(data["cost"], dtype=float),
            gamma=data["gamma"],
            p0=np.array(data["p0"], dtype=float),
        )
        if "n_states" in data and data["n_states"] != mdp.n_states:
            raise ValueError("n_states does not match the transition table")
        if "n_actions" in data and data["n_actions"] != mdp.n_actions:
            raise ValueError("n_actions does not match the transition table")
        return mdp

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "FiniteMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ValidationReport:
    ok: bool
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_mdp(mdp: FiniteMdp, tol: float = ROW_TOL) -> ValidationReport:
    """Check stochastic rows, nonnegative cost, a proper start law and 0 < gamma < 1."""
    problems = []
    if np.any(mdp.transition < 0):
        problems.append("transition has negative entries")
    row_err = np.abs(mdp.transition.sum(axis=2) - 1.0)
    if row_err.max() > tol:
        s, a = np.unravel_index(row_err.argmax(), row_err.shape)
        problems.append(f"transition row ({s}, {a}) sums to {mdp.transition[s, a].sum():.15g}")
    if np.any(mdp.cost < 0):
        problems.append("cost has negative entries")
    if np.any(mdp.p0 < 0) or abs(mdp.p0.sum() - 1.0) > tol:
        problems.append("p0 is not a probability vector")
    if not 0.0 < mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma} is outside (0, 1)")
    return ValidationReport(ok=not problems, problems=problems)


@dataclass(frozen=True)
class Policy:
    """Stationary stochastic policy with ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("policy table must be 2-D (states x actions)")
        if np.any(probs < 0):
            raise ValueError("policy has negative probabilities")
        if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-10:
            raise ValueError("policy rows must sum to one")
        object.__setattr__(self, "probs", probs)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Iterable[int], n_actions: int) -> "Policy":
        actions = np.asarray(list(actions), dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def from_logits(cls, logits) -> "Policy":
        return cls(softmax_rows(np.asarray(logits, dtype=float)))

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        return cls(np.array(data["probs"], dtype=float))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def as_probs(pi) -> np.ndarray:
    return np.asarray(pi, dtype=float)


def policy_transition_operator(mdp: FiniteMdp, pi) -> np.ndarray:
    """Pair-to-pair kernel ``M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')`` on flattened pairs."""
    probs = as_probs(pi)
    S, A = mdp.n_states, mdp.n_actions
    kernel = mdp.transition[:, :, :, None] * probs[None, None, :, :]
    return kernel.reshape(S * A, S * A)


def state_transition_matrix(mdp: FiniteMdp, pi) -> np.ndarray:
    """State chain ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)``."""
    return np.einsum("sa,sat->st", as_probs(pi), mdp.transition)


def _auto_geometric_truncation(kappa: float) -> int:
    if kappa <= 0.0:
        return 0
    if kappa >= 1.0:
        return FLAT_GEOMETRIC_TRUNCATION
    n = math.ceil(math.log(GEOMETRIC_TAIL_TOL) / math.log(kappa))
    return min(max(n, 1), MAX_AUTO_TRUNCATION)


@dataclass(frozen=True)
class HorizonDistribution:
    """Distribution ``eta`` over the look-ahead offset ``n >= 0``.

    Every kind is truncated to ``{0, ..., truncation}`` and renormalized. A
    geometric law with parameter ``kappa`` has pmf proportional to ``kappa**n``,
    so ``kappa = 0`` is a point mass at zero and ``kappa = 1`` is flat over the
    truncation window. ``uniform`` with parameter ``H`` is flat over
    ``{0, ..., H-1}``.
    """

    kind: str
    param: float | None = None
    truncation: int | None = None
    weights: tuple[float, ...] | None = None

    KINDS = ("dirac", "geometric", "poisson", "uniform", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown horizon kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "dirac" and (self.param is None or int(self.param) != self.param or self.param < 0):
            raise ValueError("dirac needs a nonnegative integer offset")
        if self.kind == "geometric" and (self.param is None or not 0.0 <= self.param <= 1.0):
            raise ValueError("geometric parameter must lie in [0, 1]")
        if self.kind == "poisson" and (self.param is None or self.param < 0):
            raise ValueError("poisson rate must be nonnegative")
        if self.kind == "uniform" and (self.param is None or int(self.param) != self.param or self.param < 1):
            raise ValueError("uniform needs a positive integer width")
        if self.kind == "custom":
            if self.weights is None or len(self.weights) == 0:
                raise ValueError("custom horizon needs a weight vector")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError("custom weights must be nonnegative with positive total")
        if self.truncation is not None and self.truncation < 0:
            raise ValueError("truncation must be nonnegative")
        if self.pmf().sum() <= 0:
            raise ValueError("horizon distribution has no mass inside its truncation window")

    @classmethod
    def dirac(cls, offset: int = 0) -> "HorizonDistribution":
        return cls("dirac", offset)

    @classmethod
    def geometric(cls, kappa: float, truncation: int | None = None) -> "HorizonDistribution":
        return cls("geometric", float(kappa), truncation)

    @classmethod
    def poisson(cls, rate: float, truncation: int | None = None) -> "HorizonDistribution":
        return cls("poisson", float(rate), truncation)

    @classmethod
    def uniform(cls, width: int) -> "HorizonDistribution":
        return cls("uniform", int(width))

    @classmethod
    def custom(cls, weights) -> "HorizonDistribution":
        return cls("custom", None, None, tuple(float(x) for x in weights))

    @property
    def max_offset(self) -> int:
        if self.kind == "custom":
            default = len(self.weights) - 1
        elif self.kind == "dirac":
            default = int(self.param)
        elif self.kind == "uniform":
            default = int(self.param) - 1
        elif self.kind == "geometric":
            default = _auto_geometric_truncation(self.param)
        else:
            lam = self.param
            default = math.ceil(lam + 12.0 * math.sqrt(lam) + 30.0)
        return default if self.truncation is None else int(self.truncation)

    def pmf(self) -> np.ndarray:
        """Probabilities for offsets ``0..max_offset`` (read-only array)."""
        return self._pmf

    @cached_property
    def _pmf(self) -> np.ndarray:
        n = np.arange(self.max_offset + 1)
        if self.kind == "dirac":
            w = (n == int(self.param)).astype(float)
        elif self.kind == "geometric":
            w = np.power(self.param, n, dtype=float)
        elif self.kind == "poisson":
            w = stats.poisson.pmf(n, self.param)
        elif self.kind == "uniform":
            w = (n < int(self.param)).astype(float)
        else:
            w = np.zeros(n.size)
            given = np.asarray(self.weights, dtype=float)[: n.size]
            w[: given.size] = given
        total = w.sum()
        w = w / total if total > 0 else w
        w.flags.writeable = False
        return w

    @property
    def is_closed_form_geometric(self) -> bool:
        """True when the truncated geometric law is indistinguishable from the untruncated one."""
        if self.kind != "geometric" or self.param >= 1.0:
            return False
        return self.param ** (self.max_offset + 1) < GEOMETRIC_TAIL_TOL

    def mean(self) -> float:
        p = self.pmf()
        return float(np.arange(p.size) @ p)

    def variance(self) -> float:
        p = self.pmf()
        n = np.arange(p.size)
        m = n @ p
        return float(((n - m) ** 2) @ p)

    def label(self) -> str:
        if self.kind == "custom":
            return f"custom[{len(self.weights)}]"
        param = int(self.param) if self.kind in ("dirac", "uniform") else self.param
        return f"{self.kind}({param:g})"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "param": self.param, "truncation": self.truncation}
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "HorizonDistribution":
        weights = data.get("weights")
        return cls(
            data["kind"],
            data.get("param"),
            data.get("truncation"),
            tuple(weights) if weights is not None else None,
        )


def horizon_pmf(eta: HorizonDistribution, n: int) -> float:
    """``eta(n)``, zero outside the truncation window."""
    if n < 0:
        return 0.0
    p = eta.pmf()
    return float(p[n]) if n < p.size else 0.0


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=int)
        self.actions = np.asarray(self.actions, dtype=int)
        self.costs = np.asarray(self.costs, dtype=float)
        if not (self.states.shape == self.actions.shape == self.costs.shape):
            raise ValueError("states, actions and costs must have equal length")

    def __len__(self) -> int:
        return self.states.size

    def to_dict(self) -> dict:
        return {"states": self.states.tolist(), "actions": self.actions.tolist(), "costs": self.costs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(data["states"], data["actions"], data["costs"])


def save_trajectories(trajectories: Iterable[Trajectory], path) -> None:
    with open(path, "w") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_dict()) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    with open(path) as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]
