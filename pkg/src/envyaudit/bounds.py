"""Anytime confidence bounds used by the envy audit.

Three quantities are provided:

* ``lil_radius``: per-arm radius from an iterated-logarithm confidence
  sequence, valid simultaneously over all times and arms.
* ``freedman_phi``: martingale bound on the summed deviation of the
  rewards collected while exploring.
* ``conservative_budget_bound``: the tighter of the two ways of bounding
  that summed deviation.

All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

_TINY = math.ulp(0.0)


@dataclass(frozen=True)
class BoundParams:
    """Parameters shared by every confidence-bound formula.

    Attributes:
        delta: confidence level, in (0, 1).
        omega: LIL slack parameter, in (0, 1].
        sigma: subgaussian scale of the rewards (1/2 for rewards in [0, 1]).
        num_arms_k: number of non-baseline arms K.
    """

    delta: float
    omega: float = 0.99
    sigma: float = 0.5
    num_arms_k: int = 1

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must be in (0, 1], got {self.omega}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.num_arms_k < 1:
            raise ValueError(f"num_arms_k must be >= 1, got {self.num_arms_k}")

    @property
    def theta(self) -> float:
        return theta(self.omega, self.delta)

    @property
    def gamma_omega(self) -> float:
        """Leading constant 2 sigma^2 (1 + sqrt(omega))^2 (1 + omega)."""
        w = self.omega
        return 2.0 * self.sigma ** 2 * (1.0 + math.sqrt(w)) ** 2 * (1.0 + w)


@dataclass
class ArmStats:
    """Pull count and reward sum of one arm."""

    pulls: int = 0
    reward_sum: float = 0.0

    @property
    def empirical_mean(self) -> float:
        # zero-pull convention: the mean is 0
        if self.pulls == 0:
            return 0.0
        return self.reward_sum / self.pulls

    def add(self, reward: float) -> None:
        self.pulls += 1
        self.reward_sum += reward


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    radius: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def theta(omega: float, delta: float) -> float:
    """Return log(1 + omega) * (omega * delta / (2 (2 + omega)))^(1 / (1 + omega)).

    For omega = 1 this is log(2) * sqrt(delta / 6).
    """
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"omega must be in (0, 1], got {omega}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    base = omega * delta / (2.0 * (2.0 + omega))
    return math.log1p(omega) * base ** (1.0 / (1.0 + omega))


def _radius_formula(pulls: int, params: BoundParams, theta_value: float) -> float:
    w = params.omega
    inner = max(math.log((1.0 + w) * pulls), _TINY)
    outer = math.log(2.0 * (params.num_arms_k + 1) / theta_value * inner)
    return math.sqrt(params.gamma_omega / pulls * max(outer, 0.0))


def lil_radius_from_count(pulls: int, params: BoundParams) -> float:
    """Radius for a given pull count; see ``lil_radius``."""
    th = params.theta
    if pulls <= 0:
        return _radius_formula(1, params, th) + 1.0
    return _radius_formula(pulls, params, th)


def lil_radius(stats: ArmStats, params: BoundParams) -> float:
    """LIL confidence radius beta_k(t) of an arm.

    With zero pulls a sentinel equal to the one-pull radius plus one is
    returned, so the radius is strictly decreasing in the pull count.
    """
    return lil_radius_from_count(stats.pulls, params)


def interval_from(mean: float, radius: float, clip: bool = True) -> ConfidenceInterval:
    lower = mean - radius
    upper = mean + radius
    if clip:
        lower = max(0.0, lower)
        upper = min(1.0, upper)
    return ConfidenceInterval(lower, upper, radius)


def confidence_interval(stats: ArmStats, params: BoundParams, clip: bool = True) -> ConfidenceInterval:
    """Interval around the empirical mean, clipped to [0, 1] by default.

    ``radius`` keeps the unclipped value.
    """
    return interval_from(stats.empirical_mean, lil_radius(stats, params), clip)


def freedman_phi(history_size: int, delta: float, sigma: float) -> float:
    """Freedman-type deviation bound for ``history_size`` exploration rewards.

    Zero when nothing has been explored yet.
    """
    if history_size < 0:
        raise ValueError("history_size must be nonnegative")
    if history_size == 0:
        return 0.0
    log_term = math.log(6.0 * history_size ** 2 / delta)
    return sigma * math.sqrt(2.0 * history_size * log_term) + (2.0 / 3.0) * log_term


def conservative_budget_bound(all_arm_stats: Iterable[ArmStats], params: BoundParams) -> float:
    """min(sum_k beta_k N_k, phi) over the non-baseline arms 1..K.

    ``all_arm_stats`` must not include the baseline arm.
    """
    weighted = 0.0
    explored = 0
    for stats in all_arm_stats:
        if stats.pulls > 0:
            weighted += lil_radius(stats, params) * stats.pulls
            explored += stats.pulls
    return min(weighted, freedman_phi(explored, params.delta, params.sigma))
