"""Seeded Monte-Carlo experiments and their CSV outputs.

Each ``run_*`` function takes an ``ExperimentConfig``, writes its CSV
files into ``config.output_dir`` and returns an ``ExperimentResult``.
Trial seeds depend only on (master seed, experiment name, grid point,
trial index), so results are reproducible and independent of the worker
count. Only the ``wallclock_ms`` column varies between identical runs.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from envyaudit import fairness
from envyaudit.audit import AuditParams, run_audit, sample_sizes, write_audit_report
from envyaudit.envs import (
    BernoulliBanditEnv,
    PolicyMatrix,
    RecommenderSystem,
    clustered_preferences,
    load_matrix,
    lowrank_fit,
    softmax_policies,
    standard_problem,
    synthetic_lowrank,
    two_tier_system,
)
from envyaudit.harness.config import ConfigError, ExperimentConfig
from envyaudit.ocef import OcefConfig, constraint_violated, empirical_cost, run, safety_trace
from envyaudit.seeding import derive_seed

TRIAL_COLUMNS = (
    "experiment", "grid_point", "trial", "seed", "verdict",
    "duration", "cost", "constraint_violated", "wallclock_ms",
)
SUMMARY_COLUMNS = (
    "grid_point", "n", "mean_duration", "std_duration", "mean_cost", "std_cost",
    "frac_envy", "frac_noenvy", "frac_inconclusive", "frac_violation",
    "min_duration", "max_duration", "min_cost", "max_cost",
)

# audit verdicts map onto the same summary columns as single-user verdicts
_ENVY_LABELS = {"envy", "not_envy_free"}
_NO_ENVY_LABELS = {"no_envy", "envy_free"}


@dataclass(frozen=True)
class TrialRecord:
    experiment: str
    grid_point: str
    trial: int
    seed: int
    verdict: str
    duration: int
    cost: float
    constraint_violated: bool
    wallclock_ms: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    files: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def grid_label(**params) -> str:
    return ";".join(f"{k}={v}" for k, v in params.items())


def parse_grid_point(label: str) -> dict:
    out = {}
    for part in label.split(";"):
        key, _, value = part.partition("=")
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def write_records(path, records: Sequence[TrialRecord]) -> Path:
    return write_rows(path, TRIAL_COLUMNS, (asdict(r) for r in records))


def read_records(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrialRecord(
            experiment=r["experiment"], grid_point=r["grid_point"], trial=int(r["trial"]),
            seed=int(r["seed"]), verdict=r["verdict"], duration=int(r["duration"]),
            cost=float(r["cost"]), constraint_violated=bool(int(r["constraint_violated"])),
            wallclock_ms=float(r["wallclock_ms"]),
        )
        for r in rows
    ]


def aggregate(records: Sequence[TrialRecord]) -> list[dict]:
    """One summary row per grid point, in order of first appearance."""
    groups: dict[str, list[TrialRecord]] = {}
    for rec in records:
        groups.setdefault(rec.grid_point, []).append(rec)
    rows = []
    for gp, recs in groups.items():
        n = len(recs)
        durations = [r.duration for r in recs]
        costs = [r.cost for r in recs]
        rows.append({
            "grid_point": gp,
            "n": n,
            "mean_duration": statistics.fmean(durations),
            "std_duration": statistics.pstdev(durations),
            "mean_cost": statistics.fmean(costs),
            "std_cost": statistics.pstdev(costs),
            "frac_envy": sum(r.verdict in _ENVY_LABELS for r in recs) / n,
            "frac_noenvy": sum(r.verdict in _NO_ENVY_LABELS for r in recs) / n,
            "frac_inconclusive": sum(r.verdict == "inconclusive" for r in recs) / n,
            "frac_violation": sum(r.constraint_violated for r in recs) / n,
            "min_duration": min(durations),
            "max_duration": max(durations),
            "min_cost": min(costs),
            "max_cost": max(costs),
        })
    return rows


def _execute(fn: Callable, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _output(config: ExperimentConfig, suffix: str) -> Path:
    return Path(config.output_dir) / f"{config.name}_{suffix}"


# ---------------------------------------------------------------- OCEF sweep

def _bandit_environments(config: ExperimentConfig, arm_count: int) -> list[tuple[str, BernoulliBanditEnv]]:
    env = config.environment
    kind = env["type"]
    if kind == "standard_problems":
        return [(str(p), standard_problem(int(p), arm_count)) for p in env.get("problems", [1, 2, 3, 4])]
    if kind == "bernoulli":
        instances = env.get("means")
        if not instances:
            raise ConfigError("environment.means must list at least one mean vector")
        if not isinstance(instances[0], list):
            instances = [instances]
        return [(f"custom{i}", BernoulliBanditEnv(m)) for i, m in enumerate(instances)]
    raise ConfigError(f"ocef_sweep does not support environment type {kind!r}")


def _ocef_trial(task) -> TrialRecord:
    experiment, gp, trial, seed, means, delta, alpha, epsilon, omega, max_steps = task
    start = time.perf_counter()
    try:
        env = BernoulliBanditEnv(means)
        cfg = OcefConfig.create(len(means) - 1, delta=delta, alpha=alpha, epsilon=epsilon,
                                omega=omega, max_steps=max_steps)
        outcome, state = run(cfg, env, random.Random(seed))
        verdict = outcome.verdict.value
        duration = outcome.duration
        cost = empirical_cost(state, means)
        violated = constraint_violated(state, means, alpha)
    except Exception:  # recorded, never aborts the sweep
        verdict, duration, cost, violated = "error", 0, math.nan, False
    elapsed = (time.perf_counter() - start) * 1000.0
    return TrialRecord(experiment, gp, trial, seed, verdict, duration, cost, violated, elapsed)


def ocef_tasks(config: ExperimentConfig) -> list:
    tasks = []
    # arm counts only parametrise the standard problems
    standard = config.environment["type"] == "standard_problems"
    for arms in config.grid_values("arm_count", [10]) if standard else [None]:
        for problem, env in _bandit_environments(config, int(arms or 0)):
            k = env.num_arms
            for delta in config.grid_values("delta", [config.delta]):
                for alpha in config.grid_values("alpha", [0.05]):
                    gp = grid_label(problem=problem, arms=k, delta=delta, alpha=alpha)
                    for trial in range(config.trials):
                        seed = derive_seed(config.master_seed, config.name, gp, trial)
                        tasks.append((config.name, gp, trial, seed, list(env.means), float(delta),
                                      float(alpha), config.epsilon, config.omega, config.max_steps))
    return tasks


def run_ocef_sweep(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """OCEF on Bernoulli problems over the alpha x delta x arm-count grid."""
    records = _execute(_ocef_trial, ocef_tasks(config), workers)
    summary = aggregate(records)
    result = ExperimentResult(config, records=records, summary=summary)
    result.files["trials"] = write_records(_output(config, "trials.csv"), records)
    result.files["summary"] = write_rows(_output(config, "summary.csv"), SUMMARY_COLUMNS, summary)
    return result


# ----------------------------------------------------------- recommender envs

def _preference_instance(env: dict, rng: np.random.Generator):
    kind = env["type"]
    if kind == "lowrank":
        return synthetic_lowrank(int(env["users"]), int(env["items"]), int(env["true_rank"]), rng)
    if kind == "clustered":
        prefs, _ = clustered_preferences(int(env["users"]), int(env["items"]), int(env.get("clusters", 2)), rng)
        return prefs
    if kind == "csv":
        if "preferences" not in env:
            raise ConfigError("environment.preferences (CSV path) is required for type 'csv'")
        return load_matrix(env["preferences"])
    raise ConfigError(f"unsupported environment type {kind!r}")


def _audit_systems(config: ExperimentConfig) -> list[tuple[str, RecommenderSystem]]:
    env = config.environment
    variants = env.get("variants") or [{"name": "default"}]
    systems = []
    for variant in variants:
        name = variant.get("name", "default")
        beta = float(variant.get("inverse_temperature", config.inverse_temperature))
        rng = np.random.default_rng(derive_seed(config.master_seed, config.name, "system", name))
        if env["type"] == "two_tier":
            system, _ = two_tier_system(
                num_users=int(env.get("users", 200)),
                num_popular=int(env.get("popular_items", 5)),
                disadvantaged_fraction=float(variant.get("disadvantaged_fraction", 0.0)),
                inverse_temperature=beta,
                rng=rng,
            )
        else:
            prefs = _preference_instance(env, rng)
            rank = int(variant.get("model_rank", env.get("model_rank", prefs.item_count)))
            policies = softmax_policies(lowrank_fit(prefs, rank), beta)
            system = RecommenderSystem(prefs, policies)
        systems.append((name, system))
    return systems


# -------------------------------------------------------------------- audits

TARGET_COLUMNS = ("grid_point", "trial", "target_user", "verdict", "duration", "cost",
                  "witness_arm", "witness_user", "true_gap", "constraint_violated")


def _audit_trial(task):
    experiment, gp, trial, seed, system, params, omega, max_steps, with_replacement, report_dir = task
    start = time.perf_counter()
    verdict = run_audit(system, params, seed, with_replacement=with_replacement, omega=omega,
                        max_steps=max_steps, record_log=True)
    target_rows = []
    any_violation = False
    for r in verdict.runs:
        means = r.env.means
        violated = any(z < -1e-9 for z in safety_trace(r.state.arm_sequence, means, params.alpha))
        any_violation |= violated
        witness = r.outcome.witness_arm if r.outcome is not None else None
        target_rows.append({
            "grid_point": gp, "trial": trial, "target_user": r.user, "verdict": r.verdict_label,
            "duration": r.duration, "cost": r.cost,
            "witness_arm": "" if witness is None else witness,
            "witness_user": "" if r.witness_user is None else r.witness_user,
            "true_gap": max(means[1:]) - means[0], "constraint_violated": violated,
        })
    if report_dir is not None:
        write_audit_report(verdict, report_dir, prefix=f"{gp.replace(';', '_').replace('=', '')}_trial{trial}")
    elapsed = (time.perf_counter() - start) * 1000.0
    record = TrialRecord(experiment, gp, trial, seed, verdict.verdict.value, verdict.duration,
                         verdict.mean_cost, any_violation, elapsed)
    return record, target_rows


def run_audit_experiment(config: ExperimentConfig, workers: int = 1, write_reports: bool = True) -> ExperimentResult:
    """AUDIT on each system variant over the alpha grid."""
    params = AuditParams(delta=config.delta, alpha=0.05, epsilon=config.epsilon,
                         gamma=config.gamma, lambda_=config.lambda_)
    m_tilde, k = sample_sizes(params)
    report_dir = Path(config.output_dir) / "reports" if write_reports else None
    tasks = []
    for name, system in _audit_systems(config):
        for alpha in config.grid_values("alpha", [0.05]):
            p = AuditParams(params.delta, float(alpha), params.epsilon, params.gamma, params.lambda_)
            gp = grid_label(system=name, alpha=alpha)
            for trial in range(config.trials):
                seed = derive_seed(config.master_seed, config.name, gp, trial)
                tasks.append((config.name, gp, trial, seed, system, p, config.omega,
                              config.max_steps, config.with_replacement, report_dir))
    outputs = _execute(_audit_trial, tasks, workers)
    records = [rec for rec, _ in outputs]
    targets = [row for _, rows in outputs for row in rows]
    summary = aggregate(records)
    result = ExperimentResult(config, records=records, summary=summary, rows=targets)
    result.files["trials"] = write_records(_output(config, "trials.csv"), records)
    result.files["summary"] = write_rows(_output(config, "summary.csv"), SUMMARY_COLUMNS, summary)
    result.files["targets"] = write_rows(_output(config, "targets.csv"), TARGET_COLUMNS, targets)
    params_path = _output(config, "sample_sizes.csv")
    write_rows(params_path, ("delta", "epsilon", "gamma", "lambda", "target_users", "arms"), [{
        "delta": config.delta, "epsilon": config.epsilon, "gamma": config.gamma,
        "lambda": config.lambda_, "target_users": m_tilde, "arms": k,
    }])
    result.files["sample_sizes"] = params_path
    return result


# ------------------------------------------------------------ envy analyses

MISPEC_COLUMNS = ("trial", "rank", "average_envy", "prop_envious")
MISPEC_SUMMARY_COLUMNS = ("rank", "n", "average_envy", "prop_envious", "std_average_envy")


def mispecification_rows(truth, ranks: Sequence[int], inverse_temperature: float, epsilon: float) -> list[dict]:
    rows = []
    for rank in ranks:
        policies = softmax_policies(lowrank_fit(truth, int(rank)), inverse_temperature)
        report = fairness.envy_report(truth, policies, epsilon)
        rows.append({"rank": int(rank), "average_envy": report.average_envy,
                     "prop_envious": report.prop_envious})
    return rows


def run_mispecification_sweep(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Envy of softmax policies built from rank-r fits of a known ground truth."""
    ranks = config.grid_values("rank", [1, 2, 4, 8])
    rows = []
    for trial in range(config.trials):
        rng = np.random.default_rng(derive_seed(config.master_seed, config.name, "truth", trial))
        truth = _preference_instance(config.environment, rng)
        for row in mispecification_rows(truth, ranks, config.inverse_temperature, config.epsilon):
            rows.append({"trial": trial, **row})
    summary = []
    for rank in ranks:
        sub = [r for r in rows if r["rank"] == int(rank)]
        envy = [r["average_envy"] for r in sub]
        summary.append({
            "rank": int(rank), "n": len(sub), "average_envy": statistics.fmean(envy),
            "prop_envious": statistics.fmean(r["prop_envious"] for r in sub),
            "std_average_envy": statistics.pstdev(envy),
        })
    result = ExperimentResult(config, rows=rows, summary=summary)
    result.files["ranks"] = write_rows(_output(config, "ranks.csv"), MISPEC_COLUMNS, rows)
    result.files["summary"] = write_rows(_output(config, "summary.csv"), MISPEC_SUMMARY_COLUMNS, summary)
    return result


POLICY_COLUMNS = ("trial", "policy", "total_utility", "average_envy", "prop_envious")


def _policy_row(trial: int, name: str, prefs, policies, epsilon: float) -> dict:
    report = fairness.envy_report(prefs, policies, epsilon)
    return {"trial": trial, "policy": name, "total_utility": fairness.total_utility(prefs, policies),
            "average_envy": report.average_envy, "prop_envious": report.prop_envious}


def run_euu_vs_opt(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Total utility and envy of penalised equal-utility policies vs OPT."""
    euu_cfg = fairness.EuuConfig(penalty_b=config.penalty_b, max_iterations=config.euu_iterations)
    rows = []
    for trial in range(config.trials):
        rng = np.random.default_rng(derive_seed(config.master_seed, config.name, "truth", trial))
        prefs = _preference_instance(config.environment, rng)
        rows.append(_policy_row(trial, "EUU", prefs, fairness.euu_policies(prefs, euu_cfg), 0.05))
        rows.append(_policy_row(trial, "OPT", prefs, fairness.opt_policies(prefs), 0.05))
    result = ExperimentResult(config, rows=rows)
    result.files["comparison"] = write_rows(_output(config, "comparison.csv"), POLICY_COLUMNS, rows)
    return result


def _contiguous_partition(n_items: int, n_categories: int) -> fairness.CategoryPartition:
    n_categories = max(1, min(n_categories, n_items))
    return fairness.CategoryPartition(tuple(a * n_categories // n_items for a in range(n_items)))


def _named_policies(name: str, prefs, config: ExperimentConfig) -> PolicyMatrix:
    env = config.environment
    if name == "opt":
        return fairness.opt_policies(prefs)
    if name == "softmax":
        rank = int(env.get("model_rank", prefs.item_count))
        return softmax_policies(lowrank_fit(prefs, rank), config.inverse_temperature)
    if name in ("parity", "equity"):
        partition = _contiguous_partition(prefs.item_count, int(env.get("categories", 2)))
        build = fairness.parity_policies if name == "parity" else fairness.equity_policies
        return build(prefs, partition)
    if name == "euu":
        return fairness.euu_policies(prefs, fairness.EuuConfig(config.penalty_b, config.euu_iterations))
    if name == "csv":
        if "policy_matrix" not in env:
            raise ConfigError("policy 'csv' needs environment.policy_matrix (CSV path)")
        return PolicyMatrix(load_matrix(env["policy_matrix"]).values)
    raise ConfigError(f"unknown policy {name!r}")


def run_envy_metrics(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Envy metrics of several policy families on one preference instance per trial."""
    names = list(config.environment.get("policies", ["opt", "softmax"]))
    rows = []
    result = ExperimentResult(config)
    for trial in range(config.trials):
        rng = np.random.default_rng(derive_seed(config.master_seed, config.name, "truth", trial))
        prefs = _preference_instance(config.environment, rng)
        for name in names:
            policies = _named_policies(name, prefs, config)
            rows.append(_policy_row(trial, name, prefs, policies, config.epsilon))
            if trial == 0:
                report = fairness.envy_report(prefs, policies, config.epsilon)
                path = _output(config, f"users_{name}.csv")
                path.parent.mkdir(parents=True, exist_ok=True)
                report.to_csv(path)
                result.files[f"users_{name}"] = path
    result.rows = rows
    result.files["metrics"] = write_rows(_output(config, "metrics.csv"), POLICY_COLUMNS, rows)
    return result


RUNNERS = {
    "ocef_sweep": run_ocef_sweep,
    "audit_run": run_audit_experiment,
    "envy_metrics": run_envy_metrics,
    "euu_vs_opt": run_euu_vs_opt,
    "mispecification_sweep": run_mispecification_sweep,
}


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    return RUNNERS[config.kind](config, workers=workers)
