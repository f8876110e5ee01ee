"""Online certification of envy-freeness for a single target user.

The auditor compares the target's own policy (arm 0, the baseline)
against K other users' policies (arms 1..K). At every step it either
explores a candidate arm or falls back to the baseline when the
conservative constraint

    for all t:  sum_{s <= t} mu_{k_s} >= (1 - alpha) * mu_0 * t

might be at risk. Arms confidently below mu_0 + epsilon are eliminated;
the run stops with ``ENVY`` as soon as one arm is confidently above the
baseline, and with ``NO_ENVY`` once every arm is eliminated.
"""

from __future__ import annotations

import csv
import enum
import math
import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

from envyaudit.bounds import ArmStats, BoundParams, _radius_formula, freedman_phi, theta


class Verdict(str, enum.Enum):
    ENVY = "envy"
    NO_ENVY = "no_envy"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class OcefConfig:
    """Inputs of one OCEF run.

    ``clip_intervals`` clips confidence bounds to [0, 1] for elimination
    and stopping; ``clip_xi`` does the same for the bounds entering the
    conservative check. Raw radii are always used for the radius test.
    """

    bound_params: BoundParams
    alpha: float = 0.05
    epsilon: float = 0.05
    max_steps: int = 10_000_000
    clip_intervals: bool = True
    clip_xi: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @classmethod
    def create(cls, num_arms_k: int, delta: float = 0.05, alpha: float = 0.05,
               epsilon: float = 0.05, omega: float = 0.99, sigma: float = 0.5, **kwargs) -> "OcefConfig":
        params = BoundParams(delta=delta, omega=omega, sigma=sigma, num_arms_k=num_arms_k)
        return cls(bound_params=params, alpha=alpha, epsilon=epsilon, **kwargs)

    @property
    def delta(self) -> float:
        return self.bound_params.delta

    @property
    def num_arms_k(self) -> int:
        return self.bound_params.num_arms_k


@dataclass(frozen=True)
class OcefOutcome:
    verdict: Verdict
    duration: int
    witness_arm: Optional[int] = None

    def __post_init__(self):
        if self.verdict is Verdict.ENVY and self.witness_arm is None:
            raise ValueError("an envy verdict needs a witness arm")


class RadiusTable:
    """Memoised LIL radii indexed by pull count."""

    def __init__(self, params: BoundParams):
        self.params = params
        self._theta = theta(params.omega, params.delta)
        one = _radius_formula(1, params, self._theta)
        self._values = [one + 1.0, one]

    def __getitem__(self, pulls: int) -> float:
        values = self._values
        while len(values) <= pulls:
            values.append(_radius_formula(len(values), self.params, self._theta))
        return values[pulls]


class PullRecord(NamedTuple):
    t: int
    arm: int
    reward: float
    xi_value: float
    active_set_size: int


PULL_LOG_HEADER = ("t", "arm", "reward", "xi_value", "active_set_size")


@dataclass
class OcefState:
    """Audit state of one target user after ``t`` steps.

    Per-arm lists are indexed 0..K. ``lower``/``upper`` hold the (possibly
    clipped) interval endpoints and ``radius`` the raw LIL radius.
    """

    config: OcefConfig
    t: int = 0
    pulls: list = field(default_factory=list)
    reward_sums: list = field(default_factory=list)
    radius: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    active_set: list = field(default_factory=list)
    exploration_reward_sum: float = 0.0
    exploration_count: int = 0
    weighted_radius_sum: float = 0.0
    pull_log: list = field(default_factory=list)
    record_log: bool = True
    outcome: Optional[OcefOutcome] = None
    radii: RadiusTable = field(default=None, repr=False)

    @classmethod
    def initial(cls, config: OcefConfig, record_log: bool = True) -> "OcefState":
        n = config.num_arms_k + 1
        radii = RadiusTable(config.bound_params)
        r0 = radii[0]
        lo, hi = _endpoints(0.0, r0, config.clip_intervals)
        return cls(
            config=config,
            pulls=[0] * n,
            reward_sums=[0.0] * n,
            radius=[r0] * n,
            lower=[lo] * n,
            upper=[hi] * n,
            active_set=list(range(1, n)),
            record_log=record_log,
            radii=radii,
        )

    @property
    def num_arms(self) -> int:
        return len(self.pulls)

    @property
    def stats(self) -> list[ArmStats]:
        return [ArmStats(p, s) for p, s in zip(self.pulls, self.reward_sums)]

    def mean(self, arm: int) -> float:
        n = self.pulls[arm]
        return self.reward_sums[arm] / n if n else 0.0

    @property
    def arm_sequence(self) -> list[int]:
        return [rec.arm for rec in self.pull_log]


def _endpoints(mean: float, radius: float, clip: bool) -> tuple[float, float]:
    lo = mean - radius
    hi = mean + radius
    if clip:
        if lo < 0.0:
            lo = 0.0
        if hi > 1.0:
            hi = 1.0
    return lo, hi


Selector = Callable[[OcefState, random.Random], int]


def select_candidate(state: OcefState, rng: random.Random) -> int:
    """Uniform draw from the active set."""
    active = state.active_set
    if not active:
        raise RuntimeError("active set is empty; the run should already have stopped")
    if len(active) == 1:
        return active[0]
    return active[rng.randrange(len(active))]


def select_largest_radius(state: OcefState, rng: random.Random) -> int:
    """Active arm with the fewest pulls (widest interval), lowest index on ties."""
    active = state.active_set
    if not active:
        raise RuntimeError("active set is empty; the run should already have stopped")
    return min(active, key=lambda k: state.pulls[k])


def budget_bound(state: OcefState) -> float:
    """Phi(t) computed from the statistics at t - 1."""
    p = state.config.bound_params
    phi = freedman_phi(state.exploration_count, p.delta, p.sigma)
    return min(state.weighted_radius_sum, phi)


def xi(state: OcefState, candidate: int, config: Optional[OcefConfig] = None) -> float:
    """Conservative-constraint estimate for exploring ``candidate`` at t = state.t + 1."""
    config = config or state.config
    t = state.t + 1
    mean_c = state.mean(candidate)
    mean_0 = state.mean(0)
    lower_c, _ = _endpoints(mean_c, state.radius[candidate], config.clip_xi)
    _, upper_0 = _endpoints(mean_0, state.radius[0], config.clip_xi)
    return (
        state.exploration_reward_sum
        - budget_bound(state)
        + lower_c
        + (state.pulls[0] - (1.0 - config.alpha) * t) * upper_0
    )


def _update_arm(state: OcefState, arm: int, reward: float) -> None:
    old_n = state.pulls[arm]
    n = old_n + 1
    state.pulls[arm] = n
    state.reward_sums[arm] += reward
    r = state.radii[n]
    if arm != 0:
        state.weighted_radius_sum += r * n - state.radius[arm] * old_n
        state.exploration_reward_sum += reward
        state.exploration_count += 1
    state.radius[arm] = r
    state.lower[arm], state.upper[arm] = _endpoints(
        state.reward_sums[arm] / n, r, state.config.clip_intervals
    )


def step(state: OcefState, env, config: Optional[OcefConfig] = None, rng: random.Random = None,
         selector: Selector = select_candidate) -> tuple[OcefState, Optional[OcefOutcome]]:
    """Advance the audit by one round, mutating and returning ``state``."""
    if state.outcome is not None:
        raise RuntimeError("the run has already stopped")
    config = config or state.config
    active = state.active_set
    candidate = selector(state, rng)

    xi_value = xi(state, candidate, config)
    min_radius = min(state.radius[k] for k in active)
    arm = 0 if (state.radius[0] > min_radius or xi_value < 0.0) else candidate

    reward = env.pull(arm, rng)
    state.t += 1
    _update_arm(state, arm, reward)

    eps = config.epsilon
    lower, upper = state.lower, state.upper
    if arm == 0:
        threshold = lower[0] + eps
        state.active_set = active = [k for k in active if upper[k] > threshold]
        upper_0 = upper[0]
        witness = next((k for k in active if lower[k] > upper_0), None)
    else:
        witness = None
        if arm in active:
            if upper[arm] <= lower[0] + eps:
                active.remove(arm)
            elif lower[arm] > upper[0]:
                witness = arm

    if state.record_log:
        state.pull_log.append(PullRecord(state.t, arm, reward, xi_value, len(active)))

    if witness is not None:
        state.outcome = OcefOutcome(Verdict.ENVY, state.t, witness)
    elif not active:
        state.outcome = OcefOutcome(Verdict.NO_ENVY, state.t)
    elif state.t >= config.max_steps:
        state.outcome = OcefOutcome(Verdict.INCONCLUSIVE, state.t)
    return state, state.outcome


def run(config: OcefConfig, env, rng: random.Random, selector: Selector = select_candidate,
        record_log: bool = True) -> tuple[OcefOutcome, OcefState]:
    """Run OCEF until a verdict or ``config.max_steps``."""
    if env.num_arms != config.num_arms_k + 1:
        raise ValueError(
            f"environment has {env.num_arms} arms, config expects {config.num_arms_k + 1}"
        )
    state = OcefState.initial(config, record_log=record_log)
    outcome = None
    while outcome is None:
        _, outcome = step(state, env, config, rng, selector)
    return outcome, state


def empirical_cost(state: OcefState, true_means: Sequence[float]) -> float:
    """C_t = t mu_0 - sum_s mu_{k_s} = sum_{k >= 1} (mu_0 - mu_k) N_k(t)."""
    mu0 = true_means[0]
    return sum((mu0 - true_means[k]) * state.pulls[k] for k in range(1, len(state.pulls)))


def cost_from_trace(arms: Sequence[int], true_means: Sequence[float]) -> float:
    mu0 = true_means[0]
    return len(arms) * mu0 - math.fsum(true_means[k] for k in arms)


def safety_trace(arms: Sequence[int], true_means: Sequence[float], alpha: float) -> list[float]:
    """Z_t = sum_{s <= t} mu_{k_s} - (1 - alpha) mu_0 t for t = 1..len(arms)."""
    target = (1.0 - alpha) * true_means[0]
    total = 0.0
    out = []
    for t, k in enumerate(arms, start=1):
        total += true_means[k]
        out.append(total - target * t)
    return out


def safety_budget(state: OcefState, true_means: Sequence[float], alpha: float) -> float:
    """Z_t at the current step (0 before any pull)."""
    if state.t == 0:
        return 0.0
    pulled = sum(true_means[k] * n for k, n in enumerate(state.pulls))
    return pulled - (1.0 - alpha) * true_means[0] * state.t


def constraint_violated(state: OcefState, true_means: Sequence[float], alpha: float,
                        tol: float = 1e-9) -> bool:
    """True if Z_t < 0 at any logged step; needs ``record_log``."""
    if len(state.pull_log) != state.t:
        raise ValueError("constraint check needs the full pull log")
    return any(z < -tol for z in safety_trace(state.arm_sequence, true_means, alpha))


def eta(true_means: Sequence[float], epsilon: float) -> list[float]:
    """Gaps eta_k = max(mu_k - mu_0, mu_0 + epsilon - mu_k) for k = 1..K."""
    mu0 = true_means[0]
    return [max(m - mu0, mu0 + epsilon - m) for m in true_means[1:]]


def duration_bound(true_means: Sequence[float], config: OcefConfig) -> float:
    """Worst-case stopping time sum_{k=0}^K H_k under omega = 1.

    theta = log(2) sqrt(delta / 6) regardless of the omega in ``config``.
    """
    delta, alpha, eps = config.delta, config.alpha, config.epsilon
    k_arms = len(true_means) - 1
    mu0 = true_means[0]
    th = math.log(2.0) * math.sqrt(delta / 6.0)
    gaps = eta(true_means, eps)

    def log_plus(x):
        return max(1.0, math.log(x))

    h = [
        1.0 + 64.0 / g ** 2 * math.log(2 * (k_arms + 1) * log_plus(128 * (k_arms + 1) / (th * g ** 2)) / th)
        for g in gaps
    ]
    if mu0 <= 0.0:
        return math.inf
    tail = (6 * k_arms + 2) / (alpha * mu0) + sum(
        256.0 * math.log(2 * (k_arms + 1) * math.log(2.0 * hk) / th) / (alpha * mu0 * g)
        for hk, g in zip(h, gaps)
    )
    h0 = max(max(h), tail)
    return h0 + sum(h)


def export_pull_log(state: OcefState, path) -> None:
    with open(path, "w", newline="") as fh:
        write_pull_log(state.pull_log, fh)


def write_pull_log(records: Sequence[PullRecord], fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(PULL_LOG_HEADER)
    for rec in records:
        writer.writerow([rec.t, rec.arm, repr(rec.reward), repr(rec.xi_value), rec.active_set_size])
