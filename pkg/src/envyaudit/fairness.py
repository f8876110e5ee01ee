"""Ground-truth fairness computations on a known preference matrix.

Everything here assumes full knowledge of the expected rewards, so
utilities are exact inner products rather than estimates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from envyaudit.envs import PolicyMatrix, PreferenceMatrix


def _prefs(preferences) -> np.ndarray:
    if isinstance(preferences, PreferenceMatrix):
        return preferences.values
    return np.asarray(preferences, dtype=float)


def _policies(policies) -> np.ndarray:
    if isinstance(policies, PolicyMatrix):
        return policies.rows
    return np.asarray(policies, dtype=float)


@dataclass(frozen=True)
class CategoryPartition:
    """Assignment of every item to one of ``category_count`` categories."""

    assignment: tuple

    def __post_init__(self):
        assignment = tuple(int(s) for s in self.assignment)
        if not assignment:
            raise ValueError("partition must cover at least one item")
        if min(assignment) < 0:
            raise ValueError("category indices must be nonnegative")
        count = max(assignment) + 1
        if set(assignment) != set(range(count)):
            raise ValueError("every category must contain at least one item")
        object.__setattr__(self, "assignment", assignment)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]]) -> "CategoryPartition":
        n_items = sum(len(g) for g in groups)
        assignment = [-1] * n_items
        for s, group in enumerate(groups):
            for a in group:
                if assignment[a] != -1:
                    raise ValueError(f"item {a} assigned twice")
                assignment[a] = s
        return cls(tuple(assignment))

    @property
    def category_count(self) -> int:
        return max(self.assignment) + 1

    @property
    def item_count(self) -> int:
        return len(self.assignment)

    def items(self, category: int) -> list[int]:
        return [a for a, s in enumerate(self.assignment) if s == category]


@dataclass(frozen=True)
class EnvyReport:
    per_user_delta: np.ndarray
    average_envy: float
    prop_envious: float
    epsilon: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user", "delta", "epsilon_flag"])
            for m, d in enumerate(self.per_user_delta):
                writer.writerow([m, repr(float(d)), int(d > self.epsilon)])


@dataclass(frozen=True)
class EuuConfig:
    penalty_b: float = 50.0
    max_iterations: int = 2000
    smoothing: float = 1e-8

    def __post_init__(self):
        if self.penalty_b <= 0:
            raise ValueError("penalty_b must be positive")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def utility_matrix(preferences, policies) -> np.ndarray:
    """U[m, n] = u^m(pi^n)."""
    return _prefs(preferences) @ _policies(policies).T


def envy_report(preferences, policies, epsilon: float = 0.05) -> EnvyReport:
    u = utility_matrix(preferences, policies)
    own = np.diag(u)
    delta = np.maximum(u.max(axis=1) - own, 0.0)
    return EnvyReport(
        per_user_delta=delta,
        average_envy=float(delta.mean()),
        prop_envious=float(np.mean(delta > epsilon)),
        epsilon=epsilon,
    )


def _one_hot(size: int, index: int) -> np.ndarray:
    row = np.zeros(size)
    row[index] = 1.0
    return row


def opt_policy(preferences, m: int) -> np.ndarray:
    """One-hot on the best item of user m (lowest index on ties).

    An all-zero row gets the uniform policy.
    """
    rho = _prefs(preferences)[m]
    if not np.any(rho > 0):
        return np.full(rho.size, 1.0 / rho.size)
    return _one_hot(rho.size, int(np.argmax(rho)))


def opt_policies(preferences) -> PolicyMatrix:
    rho = _prefs(preferences)
    return PolicyMatrix(np.vstack([opt_policy(rho, m) for m in range(rho.shape[0])]))


def _category_argmax_policy(rho: np.ndarray, partition: CategoryPartition, masses: Sequence[float]) -> np.ndarray:
    if partition.item_count != rho.size:
        raise ValueError(f"partition covers {partition.item_count} items, preferences have {rho.size}")
    row = np.zeros(rho.size)
    for s in range(partition.category_count):
        items = partition.items(s)
        best = items[int(np.argmax(rho[items]))]
        row[best] = masses[s]
    return row


def parity_exposure_policy(preferences, m: int, partition: CategoryPartition) -> np.ndarray:
    """Best policy of user m giving each category exposure |A_s| / |A|."""
    rho = _prefs(preferences)[m]
    if not np.any(rho > 0):
        return np.full(rho.size, 1.0 / rho.size)
    n = partition.item_count
    masses = [len(partition.items(s)) / n for s in range(partition.category_count)]
    return _category_argmax_policy(rho, partition, masses)


def equity_exposure_policy(preferences, m: int, partition: CategoryPartition) -> np.ndarray:
    """Best policy of user m giving each category its share of m's total relevance.

    The constraints are dropped when m's total relevance is zero.
    """
    rho = _prefs(preferences)[m]
    total = rho.sum()
    if total <= 0:
        return opt_policy(rho[None, :], 0)
    masses = [rho[partition.items(s)].sum() / total for s in range(partition.category_count)]
    return _category_argmax_policy(rho, partition, masses)


def parity_policies(preferences, partition: CategoryPartition) -> PolicyMatrix:
    rho = _prefs(preferences)
    return PolicyMatrix(np.vstack([parity_exposure_policy(rho, m, partition) for m in range(rho.shape[0])]))


def equity_policies(preferences, partition: CategoryPartition) -> PolicyMatrix:
    rho = _prefs(preferences)
    return PolicyMatrix(np.vstack([equity_exposure_policy(rho, m, partition) for m in range(rho.shape[0])]))


def euu_objective(preferences, policies, penalty_b: float, smoothing: float = 0.0) -> float:
    """sum_m u^m(p^m) - b sqrt(D(p) + smoothing)."""
    rho = _prefs(preferences)
    p = _policies(policies)
    u = np.einsum("ma,ma->m", rho, p)
    dev = u - u.mean()
    return float(u.sum() - penalty_b * np.sqrt(np.dot(dev, dev) + smoothing))


def euu_policies(preferences, config: EuuConfig = EuuConfig(), return_trace: bool = False):
    """Frank-Wolfe on the penalised equal-user-utility objective.

    Starts from uniform policies, uses the step size 2 / (k + 2) and the
    smoothed penalty b sqrt(D + smoothing). With ``return_trace`` the
    objective value after each iteration is returned as well.
    """
    rho = _prefs(preferences)
    n_users, n_items = rho.shape
    p = np.full((n_users, n_items), 1.0 / n_items)
    rows = np.arange(n_users)
    trace = []
    for k in range(config.max_iterations):
        u = np.einsum("ma,ma->m", rho, p)
        dev = u - u.mean()
        scale = np.sqrt(np.dot(dev, dev) + config.smoothing)
        # dF/du_m; the mean term cancels because deviations sum to zero
        grad_u = 1.0 - config.penalty_b * dev / scale
        grad = grad_u[:, None] * rho
        vertex = np.zeros_like(p)
        vertex[rows, np.argmax(grad, axis=1)] = 1.0
        step = 2.0 / (k + 2.0)
        p = (1.0 - step) * p + step * vertex
        if return_trace:
            trace.append(euu_objective(rho, p, config.penalty_b, config.smoothing))
    # renormalise away round-off from the convex combinations
    p = p / p.sum(axis=1, keepdims=True)
    result = PolicyMatrix(p)
    return (result, trace) if return_trace else result


def total_utility(preferences, policies) -> float:
    return float(np.einsum("ma,ma->", _prefs(preferences), _policies(policies)))


def _block_mean(u: np.ndarray, group: Sequence[int], other_group: Sequence[int]) -> float:
    if len(group) == 0 or len(other_group) == 0:
        raise ValueError("groups must be nonempty")
    block = u[np.ix_(list(group), list(other_group))]
    return float(block.sum() / (len(group) * len(other_group)))


def group_utility(group: Sequence[int], other_group: Sequence[int], policies, preferences) -> float:
    """U(g, g'): mean utility of g's members for the average policy of g'.

    Utility is linear in the policy, so this is the mean of the (g, g')
    block of the utility matrix; singleton groups give its entries exactly.
    """
    return _block_mean(utility_matrix(preferences, policies), group, other_group)


@dataclass(frozen=True)
class GroupEnvyResult:
    envy_free: bool
    worst_pair: Optional[tuple]
    worst_violation: float


def group_envy_free(groups: Sequence[Sequence[int]], policies, preferences, epsilon: float) -> GroupEnvyResult:
    """Check U(g, g') <= U(g, g) + epsilon for every ordered pair of groups.

    ``worst_pair`` is the pair maximising U(g, g') - U(g, g) (None with a
    single group).
    """
    users = sorted(u for g in groups for u in g)
    if users != list(range(len(users))) or len(users) != _prefs(preferences).shape[0]:
        raise ValueError("groups must partition the users")
    u = utility_matrix(preferences, policies)
    worst_pair, worst = None, -np.inf
    for i, g in enumerate(groups):
        own = _block_mean(u, g, g)
        for j, h in enumerate(groups):
            if i == j:
                continue
            gap = _block_mean(u, g, h) - own
            if gap > worst:
                worst, worst_pair = gap, (i, j)
    if worst_pair is None:
        return GroupEnvyResult(True, None, 0.0)
    return GroupEnvyResult(bool(worst <= epsilon), worst_pair, float(worst))


def individually_envy_free(preferences, policies, epsilon: float) -> bool:
    return bool(np.all(envy_report(preferences, policies, epsilon).per_user_delta <= epsilon))
