"""Environments the auditor pulls from.

Two kinds of bandit environment are provided: plain Bernoulli arms (the
four benchmark problems) and ``UserBanditAdapter``, which turns a
recommender system (preference matrix + stochastic policies) into the
bandit seen by one target user. Rewards are context-free.
"""

from __future__ import annotations

import bisect
import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MatrixFormatError(ValueError):
    """Base class for CSV matrix problems."""


class MatrixDimensionError(MatrixFormatError):
    pass


class MatrixValueError(MatrixFormatError):
    """A cell is not a number."""


class MatrixRangeError(MatrixFormatError):
    """A cell lies outside [0, 1]."""


def _as_probability_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a nonempty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class PreferenceMatrix:
    """Expected rewards rho^m(a) of every user m for every item a."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_probability_matrix(self.values, "preference matrix")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("preference values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def user_count(self) -> int:
        return self.values.shape[0]

    @property
    def item_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PolicyMatrix:
    """Row m is the recommendation distribution pi^m over items."""

    rows: np.ndarray

    def __post_init__(self):
        arr = _as_probability_matrix(self.rows, "policy matrix")
        if arr.min() < 0.0:
            raise ValueError("policy entries must be nonnegative")
        sums = arr.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValueError("every policy row must sum to 1")
        arr.setflags(write=False)
        object.__setattr__(self, "rows", arr)

    @property
    def user_count(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class RecommenderSystem:
    preferences: PreferenceMatrix
    policies: PolicyMatrix

    def __post_init__(self):
        if self.preferences.values.shape != self.policies.rows.shape:
            raise ValueError(
                f"preferences {self.preferences.values.shape} and policies "
                f"{self.policies.rows.shape} do not conform"
            )

    @property
    def user_count(self) -> int:
        return self.preferences.user_count


class BernoulliBanditEnv:
    """Bernoulli arms; index 0 is the baseline."""

    def __init__(self, means: Sequence[float]):
        means = [float(m) for m in means]
        if len(means) < 2:
            raise ValueError("need at least two arms (baseline + one)")
        for k, m in enumerate(means):
            if not 0.0 <= m <= 1.0:
                raise ValueError(f"mean of arm {k} is {m}, outside [0, 1]")
        self.means = tuple(means)

    @property
    def num_arms(self) -> int:
        return len(self.means)

    def pull(self, arm: int, rng: random.Random) -> float:
        return 1.0 if rng.random() < self.means[arm] else 0.0

    def __repr__(self) -> str:
        return f"BernoulliBanditEnv(means={list(self.means)})"


@dataclass
class UserBanditAdapter:
    """Bandit view of a recommender system from one target user.

    Arm 0 recommends with the target's own policy, arm k >= 1 with the
    policy of ``arm_users[k - 1]``. Rewards are Bernoulli draws with the
    target's expected reward of the recommended item.
    """

    target_user: int
    arm_users: Sequence[int]
    preferences: PreferenceMatrix
    policies: PolicyMatrix
    _cdfs: list = field(init=False, repr=False)
    _rho: list = field(init=False, repr=False)

    def __post_init__(self):
        self.arm_users = list(self.arm_users)
        if not self.arm_users:
            raise ValueError("need at least one arm user")
        if self.target_user in self.arm_users:
            raise ValueError("the target user cannot be one of its own arms")
        self._rho = self.preferences.values[self.target_user].tolist()
        self._cdfs = []
        for user in self.policy_users:
            cdf = np.cumsum(self.policies.rows[user]).tolist()
            self._cdfs.append(cdf)

    @property
    def policy_users(self) -> list[int]:
        return [self.target_user] + self.arm_users

    @property
    def num_arms(self) -> int:
        return len(self.arm_users) + 1

    @property
    def means(self) -> tuple[float, ...]:
        """Exact arm means u^m(pi^{n_k})."""
        rho = self.preferences.values[self.target_user]
        return tuple(true_utility(self.policies.rows[u], rho) for u in self.policy_users)

    def sample_item(self, arm: int, rng: random.Random) -> int:
        cdf = self._cdfs[arm]
        idx = bisect.bisect_right(cdf, rng.random() * cdf[-1])
        return min(idx, len(cdf) - 1)

    def pull(self, arm: int, rng: random.Random) -> float:
        item = self.sample_item(arm, rng)
        return 1.0 if rng.random() < self._rho[item] else 0.0


def standard_problem(problem_id: int, num_arms: int = 10) -> BernoulliBanditEnv:
    """One of the four benchmark Bernoulli problems.

    ``num_arms`` counts the baseline. With K = num_arms - 1 non-baseline
    arms, problem 3 uses mu_k = 0.7 - 0.7 (k / (K + 1))^0.6.
    """
    if num_arms < 2:
        raise ValueError("num_arms must be at least 2")
    k_arms = num_arms - 1
    if problem_id == 1:
        means = [0.6] + [0.3] * k_arms
    elif problem_id == 2:
        means = [0.3, 0.6] + [0.3] * (k_arms - 1)
    elif problem_id in (3, 4):
        means = [0.7 - 0.7 * (k / num_arms) ** 0.6 for k in range(num_arms)]
        if problem_id == 4:
            means[0], means[1] = means[1], means[0]
    else:
        raise ValueError(f"unknown problem id {problem_id}; expected 1..4")
    return BernoulliBanditEnv(means)


def true_utility(policy_row, preference_row) -> float:
    """u^m(pi) = sum_a pi(a) rho^m(a)."""
    return float(np.dot(np.asarray(policy_row, dtype=float), np.asarray(preference_row, dtype=float)))


def softmax_policies(scores, inverse_temperature: float) -> PolicyMatrix:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if inverse_temperature <= 0:
        raise ValueError("inverse_temperature must be positive")
    z = inverse_temperature * (scores - scores.max(axis=1, keepdims=True))
    w = np.exp(z)
    return PolicyMatrix(w / w.sum(axis=1, keepdims=True))


def synthetic_lowrank(num_users: int, num_items: int, rank: int, rng: np.random.Generator) -> PreferenceMatrix:
    """Nonnegative rank-``rank`` preference matrix scaled into [0, 1]."""
    if not 1 <= rank <= min(num_users, num_items):
        raise ValueError(f"rank must be in [1, {min(num_users, num_items)}], got {rank}")
    user_factors = rng.uniform(0.0, 1.0, size=(num_users, rank))
    item_factors = rng.uniform(0.0, 1.0, size=(rank, num_items))
    values = user_factors @ item_factors
    return PreferenceMatrix(values / values.max())


def clustered_preferences(
    num_users: int,
    num_items: int,
    num_clusters: int,
    rng: np.random.Generator,
    high: float = 0.8,
    low: float = 0.1,
) -> tuple[PreferenceMatrix, np.ndarray]:
    """Users split into clusters, each liking its own block of items.

    Returns the preferences and each user's cluster label. Items are split
    into ``num_clusters`` contiguous blocks; a user's expected reward is
    ``high`` inside the block of its cluster and ``low`` elsewhere.
    """
    if not 1 <= num_clusters <= min(num_users, num_items):
        raise ValueError("num_clusters must be between 1 and min(num_users, num_items)")
    labels = np.arange(num_users) % num_clusters
    labels = rng.permutation(labels)
    item_block = np.arange(num_items) * num_clusters // num_items
    values = np.where(labels[:, None] == item_block[None, :], high, low)
    return PreferenceMatrix(values), labels


def save_matrix(matrix, path) -> None:
    """Write one user per line under an ``item_0,...`` header."""
    values = matrix.values if isinstance(matrix, PreferenceMatrix) else np.asarray(matrix, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"item_{a}" for a in range(values.shape[1])])
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix(path) -> PreferenceMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise MatrixDimensionError(f"{path}: empty file, expected a header row")
    width = len(rows[0])
    data = []
    for i, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != width:
            raise MatrixDimensionError(f"{path}: row {i} has {len(row)} cells, header has {width}")
        parsed = []
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise MatrixValueError(f"{path}: row {i}, column {j}: {cell!r} is not a number") from None
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise MatrixRangeError(f"{path}: row {i}, column {j}: {v} outside [0, 1]")
            parsed.append(v)
        data.append(parsed)
    if not data:
        raise MatrixDimensionError(f"{path}: no data rows")
    return PreferenceMatrix(np.array(data))


def lowrank_fit(preferences, rank: int) -> np.ndarray:
    """Scores of a rank-``rank`` model of the preference matrix.

    The best rank-r approximation (truncated SVD) is refit with every
    user embedding rescaled to the mean embedding norm, so the model
    captures what each user prefers but not how strongly. With rank 1
    every user therefore receives the same scores.
    """
    rho = preferences.values if isinstance(preferences, PreferenceMatrix) else np.asarray(preferences, dtype=float)
    if not 1 <= rank:
        raise ValueError("rank must be positive")
    u, s, vt = np.linalg.svd(rho, full_matrices=False)
    rank = min(rank, s.size)
    emb = u[:, :rank] * s[:rank]
    norms = np.sqrt((emb * emb).sum(axis=1, keepdims=True))
    norms[norms == 0] = 1.0
    return (emb / norms) @ vt[:rank] * float(norms.mean())


def two_tier_system(
    num_users: int = 200,
    num_popular: int = 5,
    disadvantaged_fraction: float = 0.0,
    inverse_temperature: float = 10.0,
    rng: np.random.Generator = None,
    popular_reward: float = 0.6,
    own_reward: float = 0.9,
    other_reward: float = 0.05,
) -> tuple[RecommenderSystem, np.ndarray]:
    """Recommender with popular items and one personal item per user.

    Every user likes the popular items (``popular_reward``) and their own
    personal item (``own_reward``); other users' personal items are worth
    ``other_reward``. With ``disadvantaged_fraction`` = 0 policies are a
    softmax over the true preferences, which is envy-free with large gaps.
    Otherwise the model is popularity-biased: a random fraction of users
    (the disadvantaged ones, returned as a boolean mask) gets uniform
    scores over personal items, while everyone else gets scores favouring
    popular items, so the disadvantaged users envy the others.
    """
    if not 0.0 <= disadvantaged_fraction <= 1.0:
        raise ValueError("disadvantaged_fraction must be in [0, 1]")
    n_items = num_popular + num_users
    rho = np.full((num_users, n_items), other_reward)
    rho[:, :num_popular] = popular_reward
    personal = num_popular + np.arange(num_users)
    rho[np.arange(num_users), personal] = own_reward
    disadvantaged = np.zeros(num_users, dtype=bool)
    if disadvantaged_fraction == 0.0:
        scores = rho
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        chosen = rng.permutation(num_users)[: int(round(disadvantaged_fraction * num_users))]
        disadvantaged[chosen] = True
        scores = np.zeros_like(rho)
        scores[:, :num_popular] = 1.0
        scores[np.arange(num_users), personal] = 0.8
        scores[disadvantaged] = 0.0
        scores[np.ix_(disadvantaged, personal)] = 0.5
    system = RecommenderSystem(PreferenceMatrix(rho), softmax_policies(scores, inverse_temperature))
    return system, disadvantaged
