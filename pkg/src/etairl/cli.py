"""Command-line driver: numerical checks, imitation runs, sweeps and evaluation.

Exit codes: 0 success, 1 a check or run failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks
from .envs import chain_env, four_lakes_env, make_expert
from .evaluation import exact_mmd_metrics, exact_normalized_return, normalized_return, sample_mmd_metrics
from .girl import IrlConfig, MetricsRow, gail_config, girl_iterate, state_basis
from .idle import IdleConfig, idle_train, nash_check, target_law
from .mdp import FiniteMdp, HorizonDistribution, Policy
from .plots import bar_plot_svg, line_plot_svg
from .sampling import ReplayBuffer, pair_counts, rollouts
from .soft_rl import NonConvergenceError, SoftRlConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_OUT = "eta_irl_out"
EVAL_SAMPLES = 10_000
ALGORITHMS = ("megan", "gail", "emma", "wiem")
TOP_LEVEL_KEYS = {
    "env", "expert", "algorithm", "irl", "seeds", "window", "workers", "eta_grid",
    "gamma_grid", "idle", "policy", "basis", "out",
}
EXPERT_KEYS = {"n_rollouts", "horizon", "temperature", "seed"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def parse_eta(spec) -> HorizonDistribution:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"horizon spec must be an object with a 'kind': {spec!r}")
    try:
        return HorizonDistribution.from_dict(spec)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad horizon spec {spec!r}: {exc}") from exc


def build_env(spec: dict | None) -> FiniteMdp:
    spec = dict(spec or {"kind": "chain"})
    kind = spec.pop("kind", "chain")
    try:
        if kind == "chain":
            return chain_env(**spec)
        if kind == "four_lakes":
            return four_lakes_env(**spec).mdp
        if kind == "file":
            return FiniteMdp.load_json(spec["path"])
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"cannot build environment {kind!r}: {exc}") from exc
    raise ConfigError(f"unknown environment kind {kind!r}")


def build_irl_config(spec: dict | None, seed: int) -> IrlConfig:
    spec = dict(spec or {})
    fields = {f.name for f in dataclasses.fields(IrlConfig)}
    unknown = set(spec) - fields
    if unknown:
        raise ConfigError(f"unknown irl keys: {sorted(unknown)}")
    for key in ("eta", "metric_eta"):
        if key in spec:
            spec[key] = parse_eta(spec[key])
    spec["seed"] = seed
    try:
        return IrlConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad irl settings: {exc}") from exc


def build_idle_config(spec: dict | None, seed: int) -> tuple[IdleConfig, dict]:
    spec = dict(spec or {})
    extra = {k: spec.pop(k) for k in ("n_rollouts", "horizon", "policy", "buffer") if k in spec}
    fields = {f.name for f in dataclasses.fields(IdleConfig)}
    unknown = set(spec) - fields
    if unknown:
        raise ConfigError(f"unknown idle keys: {sorted(unknown)}")
    if "eta" in spec:
        spec["eta"] = parse_eta(spec["eta"])
    spec["seed"] = seed
    try:
        return IdleConfig(**spec), extra
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad idle settings: {exc}") from exc


def resolve_seeds(args, cfg: dict) -> list[int]:
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from exc
    env_seed = os.environ.get("ETA_IRL_SEED")
    if env_seed:
        try:
            return [int(env_seed)]
        except ValueError as exc:
            raise ConfigError(f"ETA_IRL_SEED must be an integer, got {env_seed!r}") from exc
    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a list of integers")
    return seeds


def resolve_out(args, cfg: dict) -> Path:
    out = args.out or os.environ.get("ETA_IRL_OUT") or cfg.get("out") or DEFAULT_OUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def expert_for(mdp: FiniteMdp, cfg: dict):
    spec = dict(cfg.get("expert", {}))
    unknown = set(spec) - EXPERT_KEYS
    if unknown:
        raise ConfigError(f"unknown expert keys: {sorted(unknown)}")
    return make_expert(
        mdp,
        SoftRlConfig(temperature=spec.get("temperature", 0.01)),
        n_rollouts=spec.get("n_rollouts", 90),
        horizon=spec.get("horizon", 50),
        seed=spec.get("seed", 0),
    )


def basis_for(mdp: FiniteMdp, cfg: dict):
    kind = cfg.get("basis", "pairs")
    if kind == "pairs":
        return None
    if kind == "states":
        return state_basis(mdp.n_states, mdp.n_actions)
    raise ConfigError(f"unknown basis {kind!r}; expected 'pairs' or 'states'")


# ---------------------------------------------------------------- run execution


def _run_job(job):
    mdp, buffer, algorithm, irl_cfg, expert, basis = job
    penalty = {"megan": "gan", "gail": "gan", "emma": "linear", "wiem": "convex"}[algorithm]
    if algorithm == "gail":
        irl_cfg = gail_config(irl_cfg)
    return girl_iterate(mdp, buffer, penalty, irl_cfg, expert=expert.probs, basis=basis)


def run_jobs(jobs, workers: int):
    if workers <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_metrics(path: Path, rows: list[MetricsRow]) -> None:
    """Deterministic metrics table; wall-clock times go to a separate file."""
    with open(path / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MetricsRow.DETERMINISTIC_FIELDS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, f)) for f in MetricsRow.DETERMINISTIC_FIELDS])
    with open(path / "timings.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "seed", "iter", "wall_ms"])
        for row in rows:
            writer.writerow([row.run_id, row.seed, row.iter, f"{row.wall_ms:.3f}"])


def window_means(history: list[MetricsRow], window: int) -> dict:
    tail = history[-window:]
    return {
        key: float(np.mean([getattr(r, key) for r in tail]))
        for key in ("mmd_rho", "mmd_mu", "true_return", "disc_objective")
    }


def _tag(rows, run_id):
    for r in rows:
        r.run_id = run_id
    return rows


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _curves(results_by_run, key):
    return {run_id: ([r.iter for r in res.history], [getattr(r, key) for r in res.history]) for run_id, res in results_by_run}


# ---------------------------------------------------------------- commands


def cmd_check(args, cfg) -> int:
    names = [s.strip() for s in args.suite.split(",")]
    seed = resolve_seeds(args, cfg)[0] if (args.seeds or os.environ.get("ETA_IRL_SEED")) else 0
    try:
        results = checks.run_suites(names, seed=seed)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    for r in results:
        print(r.line())
    report = [
        {"suite": r.name, "passed": bool(r.passed), "metric": float(r.metric), "tolerance": r.tolerance, "detail": r.detail}
        for r in results
    ]
    print(json.dumps(report))
    if args.out:
        write_json(resolve_out(args, cfg) / "check_report.json", report)
    failing = [r for r in results if not r.passed]
    if failing:
        print(f"first failure: {failing[0].name}: {failing[0].detail}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    algorithm = cfg.get("algorithm", "megan")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    mdp = build_env(cfg.get("env"))
    expert = expert_for(mdp, cfg)
    basis = basis_for(mdp, cfg)
    seeds = resolve_seeds(args, cfg)
    out = resolve_out(args, cfg)
    window = cfg.get("window", 20)
    jobs = [(mdp, expert.buffer, algorithm, build_irl_config(cfg.get("irl"), s), expert.policy, basis) for s in seeds]
    results = run_jobs(jobs, cfg.get("workers", 1))

    rows, runs, policies, adversaries, labelled = [], [], {}, {}, []
    for seed, res in zip(seeds, results):
        run_id = f"{algorithm}-seed{seed}"
        rows += _tag(res.history, run_id)
        runs.append({"run_id": run_id, "seed": seed, **window_means(res.history, window)})
        policies[str(seed)] = res.policy.to_dict()
        adversaries[str(seed)] = res.adversary
        labelled.append((run_id, res))
    write_metrics(out, rows)
    summary = {
        "algorithm": algorithm,
        "window": window,
        "runs": runs,
        "median": {k: statistics.median(r[k] for r in runs) for k in ("mmd_rho", "mmd_mu", "true_return")},
    }
    write_json(out / "summary.json", summary)
    write_json(out / "policy.json", policies)
    write_json(out / "discriminator.json", adversaries)
    (out / "learning_curves.svg").write_text(
        line_plot_svg(_curves(labelled, "mmd_mu"), f"{algorithm}: exact future-pair MMD", "iteration", "MMD")
    )
    print(json.dumps(summary["median"], sort_keys=True))
    return EXIT_OK


def cmd_sweep_eta(args, cfg) -> int:
    mdp = build_env(cfg.get("env"))
    expert = expert_for(mdp, cfg)
    seeds = resolve_seeds(args, cfg)
    out = resolve_out(args, cfg)
    window = cfg.get("window", 20)
    grid_spec = cfg.get(
        "eta_grid", [{"kind": "geometric", "param": k} for k in (0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0)]
    )
    if not isinstance(grid_spec, list) or not grid_spec:
        raise ConfigError("eta_grid must be a non-empty list of horizon specs")
    grid = [parse_eta(g) for g in grid_spec]
    jobs, labels = [], []
    for eta in grid:
        for seed in seeds:
            irl = dataclasses.replace(build_irl_config(cfg.get("irl"), seed), eta=eta)
            jobs.append((mdp, expert.buffer, "megan", irl, expert.policy, None))
            labels.append((eta.label(), seed))
    results = run_jobs(jobs, cfg.get("workers", 1))

    rows, per_eta = [], {}
    for (label, seed), res in zip(labels, results):
        rows += _tag(res.history, f"megan-{label}-seed{seed}")
        per_eta.setdefault(label, []).append(window_means(res.history, window))
    write_metrics(out, rows)
    summary = {
        "window": window,
        "seeds": seeds,
        "etas": {
            label: {k: statistics.median(m[k] for m in ms) for k in ("mmd_rho", "mmd_mu", "true_return")}
            for label, ms in per_eta.items()
        },
    }
    write_json(out / "summary.json", summary)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eta", "kind", "param", "mmd_rho", "mmd_mu", "true_return"])
        for eta in dict.fromkeys(grid):
            cell = summary["etas"][eta.label()]
            writer.writerow([eta.label(), eta.kind, eta.param] + [_fmt(cell[k]) for k in ("mmd_rho", "mmd_mu", "true_return")])
    medians = {eta.label(): summary["etas"][eta.label()]["mmd_mu"] for eta in grid}
    if len({eta.kind for eta in grid}) == 1 and all(eta.param is not None for eta in grid):
        xs = [float(eta.param) for eta in grid]
        svg = line_plot_svg(
            {"mmd_mu": (xs, list(medians.values()))}, "median final-window MMD", f"{grid[0].kind} parameter", "MMD"
        )
    else:
        svg = bar_plot_svg(medians, "median final-window MMD by horizon law", "MMD")
    (out / "sweep_eta.svg").write_text(svg)
    print(json.dumps({k: v["mmd_mu"] for k, v in summary["etas"].items()}, sort_keys=True))
    return EXIT_OK


def cmd_gamma_sweep(args, cfg) -> int:
    mdp = build_env(cfg.get("env"))
    expert = expert_for(mdp, cfg)
    seeds = resolve_seeds(args, cfg)
    out = resolve_out(args, cfg)
    window = cfg.get("window", 20)
    gammas = cfg.get("gamma_grid", [0.9, 0.99, 0.999])
    if not isinstance(gammas, list) or not gammas:
        raise ConfigError("gamma_grid must be a non-empty list")
    for g in gammas:
        if not isinstance(g, (int, float)) or not 0.0 < g < 1.0:
            raise ConfigError(f"discount {g!r} in gamma_grid is outside (0, 1)")
    jobs, labels = [], []
    for seed in seeds:
        base = build_irl_config(cfg.get("irl"), seed)
        jobs.append((mdp, expert.buffer, "megan", base, expert.policy, None))
        labels.append((f"megan-{base.eta.label()}", seed))
        for g in gammas:
            jobs.append((mdp, expert.buffer, "gail", dataclasses.replace(base, gamma_rl=g), expert.policy, None))
            labels.append((f"gail-gamma{g}", seed))
    results = run_jobs(jobs, cfg.get("workers", 1))

    rows, per_run = [], {}
    for (label, seed), res in zip(labels, results):
        rows += _tag(res.history, f"{label}-seed{seed}")
        per_run.setdefault(label, []).append(window_means(res.history, window)["mmd_mu"])
    write_metrics(out, rows)
    medians = {label: statistics.median(v) for label, v in per_run.items()}
    megan_label = next(label for label in medians if label.startswith("megan"))
    gail_medians = {k: v for k, v in medians.items() if k.startswith("gail")}
    summary = {
        "window": window,
        "seeds": seeds,
        "median_mmd_mu": medians,
        "megan_median": medians[megan_label],
        "best_gail_median": min(gail_medians.values()),
        "any_gail_beats_megan": any(v < medians[megan_label] for v in gail_medians.values()),
    }
    write_json(out / "summary.json", summary)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", "median_mmd_mu", "beats_reference"])
        for label, value in gail_medians.items():
            writer.writerow([label, _fmt(value), value < medians[megan_label]])
        writer.writerow([megan_label, _fmt(medians[megan_label]), "reference"])
    (out / "gamma_sweep.svg").write_text(bar_plot_svg(medians, "median final-window MMD", "MMD"))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_idle(args, cfg) -> int:
    mdp = build_env(cfg.get("env", {"kind": "chain", "n": 2, "slip": 0.0, "gamma": 0.9}))
    seed = resolve_seeds(args, cfg)[0]
    out = resolve_out(args, cfg)
    idle_cfg, extra = build_idle_config(cfg.get("idle"), seed)
    policy_spec = extra.get("policy", "expert")
    if "buffer" in extra:
        try:
            buffer = ReplayBuffer.load(extra["buffer"])
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot read buffer {extra['buffer']!r}: {exc}") from exc
        if buffer.n_trajectories == 0:
            raise ConfigError(f"buffer {extra['buffer']!r} holds no trajectories")
        # The exact target needs the behaviour policy; estimate it from the buffer when none is given.
        if policy_spec == "expert":
            states, actions = buffer.packed()[:2]
            counts = pair_counts(states, actions, mdp.n_states, mdp.n_actions) + 1e-12
            policy_spec = (counts / counts.sum(axis=1, keepdims=True)).tolist()
    if isinstance(policy_spec, str) and policy_spec == "expert":
        policy = expert_for(mdp, cfg).policy
    elif isinstance(policy_spec, list):
        policy = Policy(np.array(policy_spec, dtype=float))
    else:
        policy = Policy.from_dict(json.loads(Path(policy_spec).read_text()))
    if "buffer" not in extra:
        buffer = ReplayBuffer(
            trajectories=rollouts(mdp, policy, extra.get("n_rollouts", 50), extra.get("horizon", 200), seed)
        )
    result = idle_train(buffer, mdp.n_states, mdp.n_actions, idle_cfg)
    target = target_law(mdp, policy, idle_cfg.eta)
    tv = 0.5 * np.abs(result.generator - target).sum(axis=1)
    report = nash_check(mdp, policy, idle_cfg.eta, seed=seed)
    summary = {
        "eta": idle_cfg.eta.to_dict(),
        "per_state_tv": tv.tolist(),
        "max_tv": float(tv.max()),
        "nash_ok": report.ok,
        "max_generator_gain": report.max_generator_gain,
        "max_discriminator_gain": report.max_discriminator_gain,
    }
    write_json(out / "summary.json", summary)
    write_json(out / "generator.json", {"probs": result.generator.tolist()})
    write_json(out / "discriminator.json", {"probs": result.discriminator.tolist()})
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    mdp = build_env(cfg.get("env"))
    expert = expert_for(mdp, cfg)
    if "policy" not in cfg:
        raise ConfigError("eval needs a 'policy' entry (path to a policy JSON file)")
    try:
        data = json.loads(Path(cfg["policy"]).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy {cfg['policy']!r}: {exc}") from exc
    # Accept either a single policy or the per-seed mapping written by ``train``.
    policies = {"policy": data} if "probs" in data else data
    seed = resolve_seeds(args, cfg)[0]
    out = resolve_out(args, cfg)
    eta = parse_eta(cfg.get("irl", {}).get("metric_eta", {"kind": "geometric", "param": 0.99}))
    report = {}
    for name, spec in policies.items():
        pi = Policy.from_dict(spec)
        if pi.probs.shape != (mdp.n_states, mdp.n_actions):
            raise ConfigError(f"policy {name} has shape {pi.probs.shape}, environment needs {(mdp.n_states, mdp.n_actions)}")
        exact = exact_normalized_return(mdp, pi, expert.policy)
        sampled = normalized_return(mdp, pi, expert.policy, 100, 50, seed)
        mmd = exact_mmd_metrics(mdp, pi, expert.policy, eta)
        own = ReplayBuffer(trajectories=rollouts(mdp, pi, expert.buffer.n_trajectories, 50, seed))
        estimate = sample_mmd_metrics(own, expert.buffer, eta, mdp.gamma, mdp.n_states, mdp.n_actions, EVAL_SAMPLES, seed)
        report[name] = {
            "normalized_return_exact": exact.value,
            "normalized_return_sampled": sampled.value,
            "mmd_rho": mmd.mmd_rho,
            "mmd_mu": mmd.mmd_mu,
            "mmd2_rho_sampled": estimate.mmd_rho,
            "mmd2_mu_sampled": estimate.mmd_mu,
            "mmd_samples": EVAL_SAMPLES,
        }
    write_json(out / "summary.json", report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "train": cmd_train,
    "sweep-eta": cmd_sweep_eta,
    "gamma-sweep": cmd_gamma_sweep,
    "idle": cmd_idle,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eta-irl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seeds", help="comma-separated seeds, overriding the config")
        if name == "check":
            p.add_argument("--suite", default="all", help=f"one of: all, {', '.join(checks.SUITES)}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
