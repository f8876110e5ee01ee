"""System-level audits built from per-user OCEF runs.

``run_audit`` certifies the probabilistic (epsilon, gamma, lambda)
criterion on a random subsample of users and arms; ``run_exact_audit``
runs OCEF for every user against every other user.

Per-user runs advance in lockstep, one step each per round, which is the
sequential equivalent of running them in parallel: the audit stops in the
round where the first user is found envious and the remaining runs are
cancelled with their partial state kept.
"""

from __future__ import annotations

import csv
import enum
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from envyaudit.envs import RecommenderSystem, UserBanditAdapter
from envyaudit.ocef import (
    OcefConfig,
    OcefOutcome,
    OcefState,
    Verdict,
    empirical_cost,
    select_candidate,
    step,
)
from envyaudit.seeding import derive_rng

_MAX_SAMPLE = 10_000_000


class AuditOutcome(str, enum.Enum):
    ENVY_FREE = "envy_free"
    NOT_ENVY_FREE = "not_envy_free"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class AuditParams:
    delta: float = 0.05
    alpha: float = 0.05
    epsilon: float = 0.05
    gamma: float = 0.1
    lambda_: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        for name in ("alpha", "epsilon", "gamma", "lambda_"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


def sample_sizes(params: AuditParams) -> tuple[int, int]:
    """Number of target users and of arms per target.

    M~ = ceil(log(3 / delta) / lambda), K = ceil(log(3 M~ / delta) / log(1 / (1 - gamma))),
    with K = 1 when gamma = 1.
    """
    m_tilde = math.ceil(math.log(3.0 / params.delta) / params.lambda_)
    if params.gamma >= 1.0:
        k = 1
    else:
        k = math.ceil(math.log(3.0 * m_tilde / params.delta) / -math.log1p(-params.gamma))
    if m_tilde > _MAX_SAMPLE or k > _MAX_SAMPLE:
        raise ValueError(f"sample sizes ({m_tilde}, {k}) are too large; increase gamma or lambda")
    return max(m_tilde, 1), max(k, 1)


@dataclass
class TargetRun:
    """One target user's OCEF run inside an audit.

    ``outcome`` is None when the run was cancelled because another target
    was found envious first.
    """

    user: int
    arm_users: list
    config: OcefConfig
    env: UserBanditAdapter
    state: OcefState
    outcome: Optional[OcefOutcome] = None

    @property
    def duration(self) -> int:
        return self.state.t

    @property
    def cost(self) -> float:
        return empirical_cost(self.state, self.env.means)

    @property
    def witness_user(self) -> Optional[int]:
        if self.outcome is None or self.outcome.witness_arm is None:
            return None
        return self.arm_users[self.outcome.witness_arm - 1]

    @property
    def verdict_label(self) -> str:
        return "cancelled" if self.outcome is None else self.outcome.verdict.value


@dataclass
class AuditVerdict:
    verdict: AuditOutcome
    envious_pair: Optional[tuple]
    runs: list
    sample_sizes: tuple

    def __post_init__(self):
        if self.verdict is AuditOutcome.NOT_ENVY_FREE and self.envious_pair is None:
            raise ValueError("a not-envy-free verdict needs an envious pair")

    @property
    def per_user_results(self) -> list:
        return [r.outcome for r in self.runs]

    @property
    def duration(self) -> int:
        return max((r.duration for r in self.runs), default=0)

    @property
    def total_cost(self) -> float:
        return sum(r.cost for r in self.runs)

    @property
    def mean_cost(self) -> float:
        if not self.runs:
            return 0.0
        return self.total_cost / len(self.runs)

    @property
    def mean_duration(self) -> float:
        if not self.runs:
            return 0.0
        return sum(r.duration for r in self.runs) / len(self.runs)


def _lockstep(runs: Sequence[TargetRun], rngs: Sequence[random.Random], selector, stop_on_envy: bool) -> Optional[TargetRun]:
    """Advance all runs round by round; return the first envious run, if any."""
    running = list(zip(runs, rngs))
    while running:
        still = []
        for run, rng in running:
            _, outcome = step(run.state, run.env, run.config, rng, selector)
            if outcome is None:
                still.append((run, rng))
                continue
            run.outcome = outcome
            if stop_on_envy and outcome.verdict is Verdict.ENVY:
                return run
        running = still
    return None


def _make_run(system: RecommenderSystem, user: int, arm_users: list, delta: float, alpha: float,
              epsilon: float, omega: float, max_steps: int, record_log: bool, clip: bool) -> TargetRun:
    config = OcefConfig.create(
        num_arms_k=len(arm_users), delta=delta, alpha=alpha, epsilon=epsilon, omega=omega,
        max_steps=max_steps, clip_intervals=clip, clip_xi=clip,
    )
    env = UserBanditAdapter(user, arm_users, system.preferences, system.policies)
    return TargetRun(user, arm_users, config, env, OcefState.initial(config, record_log=record_log))


def run_audit(system: RecommenderSystem, params: AuditParams, seed: int, *,
              with_replacement: bool = False, omega: float = 0.99, max_steps: int = 10_000_000,
              record_log: bool = False, clip: bool = True, selector=select_candidate) -> AuditVerdict:
    """Audit ``system`` for (epsilon, gamma, lambda)-envy-freeness.

    Target users are drawn without replacement; each target's arm users
    are drawn from the other users, without replacement unless
    ``with_replacement`` is set. Every OCEF run gets confidence
    delta / (3 * number of targets).
    """
    n_users = system.user_count
    if n_users < 2:
        raise ValueError("an audit needs at least two users")
    m_tilde, k = sample_sizes(params)
    m_tilde = min(m_tilde, n_users)
    targets = derive_rng(seed, "targets").sample(range(n_users), m_tilde)
    user_delta = params.delta / (3.0 * m_tilde)

    runs, rngs = [], []
    for user in targets:
        rng = derive_rng(seed, "user", user)
        others = [n for n in range(n_users) if n != user]
        if with_replacement:
            arm_users = rng.choices(others, k=k)
        else:
            arm_users = rng.sample(others, min(k, len(others)))
        runs.append(_make_run(system, user, arm_users, user_delta, params.alpha, params.epsilon,
                              omega, max_steps, record_log, clip))
        rngs.append(rng)

    envious = _lockstep(runs, rngs, selector, stop_on_envy=True)
    if envious is not None:
        return AuditVerdict(AuditOutcome.NOT_ENVY_FREE, (envious.user, envious.witness_user),
                            runs, (m_tilde, k))
    if any(r.outcome.verdict is Verdict.INCONCLUSIVE for r in runs):
        return AuditVerdict(AuditOutcome.INCONCLUSIVE, None, runs, (m_tilde, k))
    return AuditVerdict(AuditOutcome.ENVY_FREE, None, runs, (m_tilde, k))


@dataclass
class ExactAuditResult:
    runs: list

    @property
    def verdicts(self) -> list:
        return [r.outcome.verdict for r in self.runs]

    @property
    def envious_users(self) -> list:
        return [r.user for r in self.runs if r.outcome.verdict is Verdict.ENVY]

    @property
    def envy_free(self) -> bool:
        return all(v is Verdict.NO_ENVY for v in self.verdicts)


def run_exact_audit(system: RecommenderSystem, delta: float, alpha: float, epsilon: float, seed: int, *,
                    omega: float = 0.99, max_steps: int = 10_000_000, record_log: bool = False,
                    clip: bool = True, selector=select_candidate) -> ExactAuditResult:
    """Run OCEF for every user against all other users with confidence delta / M.

    Every run goes to completion; with a single user the result is empty.
    """
    n_users = system.user_count
    if n_users < 2:
        return ExactAuditResult([])
    runs, rngs = [], []
    for user in range(n_users):
        others = [n for n in range(n_users) if n != user]
        runs.append(_make_run(system, user, others, delta / n_users, alpha, epsilon,
                              omega, max_steps, record_log, clip))
        rngs.append(derive_rng(seed, "user", user))
    _lockstep(runs, rngs, selector, stop_on_envy=False)
    return ExactAuditResult(runs)


AUDIT_REPORT_HEADER = ("target_user", "verdict", "duration", "cost", "witness_arm", "witness_user")


def write_audit_report(verdict: AuditVerdict, directory, prefix: str = "audit") -> tuple[Path, Path]:
    """Write ``<prefix>_report.csv`` (one row per target) and ``<prefix>_verdict.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    report = directory / f"{prefix}_report.csv"
    with open(report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUDIT_REPORT_HEADER)
        for r in verdict.runs:
            witness = r.outcome.witness_arm if r.outcome is not None else None
            writer.writerow([
                r.user, r.verdict_label, r.duration, repr(r.cost),
                "" if witness is None else witness,
                "" if r.witness_user is None else r.witness_user,
            ])
    line = directory / f"{prefix}_verdict.txt"
    pair = "" if verdict.envious_pair is None else f" envious_pair={verdict.envious_pair[0]}->{verdict.envious_pair[1]}"
    m_tilde, k = verdict.sample_sizes
    line.write_text(f"{verdict.verdict.value} targets={m_tilde} arms={k}{pair}\n")
    return report, line
