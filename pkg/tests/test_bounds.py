"""Confidence-sequence formulas: closed-form oracles and invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import phi as oracle_phi
from oracles import radius as oracle_radius
from oracles import theta as oracle_theta

from envyaudit.bounds import (
    ArmStats,
    BoundParams,
    confidence_interval,
    conservative_budget_bound,
    freedman_phi,
    interval_from,
    lil_radius,
    lil_radius_from_count,
    theta,
)


P1 = BoundParams(delta=0.05, omega=1.0, sigma=0.5, num_arms_k=9)


class TestTheta:

    def test_omega_one_special_case(self):
        assert theta(1.0, 0.05) == pytest.approx(math.log(2) * math.sqrt(0.05 / 6), rel=1e-14)
        assert theta(1.0, 0.05) == pytest.approx(0.063276, abs=1e-6)

    def test_default_omega(self):
        assert theta(0.99, 0.05) == pytest.approx(oracle_theta(0.99, 0.05), rel=1e-14)

    @pytest.mark.parametrize("omega,delta", [(1.0, 6.0), (1.0, 0.0), (0.0, 0.05), (1.5, 0.05), (1.0, 1.0)])
    def test_domain(self, omega, delta):
        with pytest.raises(ValueError):
            theta(omega, delta)

    def test_params_expose_theta(self):
        assert P1.theta == theta(1.0, 0.05)
        assert P1.gamma_omega == pytest.approx(4.0)


class TestBoundParams:

    @pytest.mark.parametrize("kwargs", [
        dict(delta=0.0), dict(delta=1.0), dict(delta=0.05, omega=0.0), dict(delta=0.05, omega=1.01),
        dict(delta=0.05, sigma=-0.1), dict(delta=0.05, num_arms_k=0),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            BoundParams(**kwargs)


class TestLilRadius:

    def test_one_pull(self):
        # sqrt(4 * log((20 / theta) * log 2))
        r = lil_radius(ArmStats(1, 1.0), P1)
        expected = math.sqrt(4 * math.log(20 / theta(1.0, 0.05) * math.log(2)))
        assert r == pytest.approx(expected, rel=1e-13)
        assert r == pytest.approx(4.645, abs=5e-3)  # hand-rounded value

    @pytest.mark.parametrize("n", [1, 2, 7, 100, 4321])
    @pytest.mark.parametrize("omega", [0.5, 0.99, 1.0])
    def test_matches_oracle(self, n, omega):
        p = BoundParams(delta=0.1, omega=omega, sigma=0.5, num_arms_k=74)
        assert lil_radius_from_count(n, p) == pytest.approx(oracle_radius(n, 0.5, omega, 74, 0.1), rel=1e-13)

    @pytest.mark.parametrize("delta", [0.01, 0.05, 0.1])
    @pytest.mark.parametrize("omega", [0.5, 0.99, 1.0])
    @pytest.mark.parametrize("k", [1, 9, 74])
    def test_zero_pull_sentinel(self, delta, omega, k):
        p = BoundParams(delta=delta, omega=omega, num_arms_k=k)
        assert lil_radius(ArmStats(), p) > lil_radius(ArmStats(1, 0.0), p)

    def test_strictly_decreasing(self):
        r = [lil_radius_from_count(n, P1) for n in range(0, 10_001)]
        assert all(a > b for a, b in zip(r, r[1:]))

    def test_radius_independent_of_rewards(self):
        assert lil_radius(ArmStats(5, 0.0), P1) == lil_radius(ArmStats(5, 5.0), P1)


class TestFreedman:

    def test_zero_history(self):
        assert freedman_phi(0, 0.05, 0.5) == 0.0

    def test_one(self):
        expected = 0.5 * math.sqrt(2 * math.log(120)) + 2 / 3 * math.log(120)
        assert freedman_phi(1, 0.05, 0.5) == pytest.approx(expected, rel=1e-14)
        assert freedman_phi(1, 0.05, 0.5) == pytest.approx(4.738, abs=1e-3)

    def test_nondecreasing(self):
        v = [freedman_phi(n, 0.05, 0.5) for n in range(10_001)]
        assert all(a <= b for a, b in zip(v, v[1:]))

    @pytest.mark.parametrize("n", [2, 50, 999])
    def test_matches_oracle(self, n):
        assert freedman_phi(n, 0.02, 0.5) == pytest.approx(oracle_phi(n, 0.02, 0.5), rel=1e-14)


class TestBudgetBound:

    def test_no_pulls(self):
        assert conservative_budget_bound([ArmStats() for _ in range(9)], P1) == 0.0

    def test_one_pull(self):
        stats = [ArmStats(1, 1.0)] + [ArmStats() for _ in range(8)]
        bound = conservative_budget_bound(stats, P1)
        assert bound == pytest.approx(min(oracle_radius(1, 0.5, 1.0, 9, 0.05), oracle_phi(1, 0.05, 0.5)))
        assert bound == pytest.approx(4.645, abs=5e-3)

    def test_large_history_uses_freedman(self):
        stats = [ArmStats(500, 250.0) for _ in range(9)]
        assert conservative_budget_bound(stats, P1) == pytest.approx(oracle_phi(4500, 0.05, 0.5))


class TestIntervals:

    def test_clipping_keeps_raw_radius(self):
        ci = interval_from(0.9, 0.5)
        assert (ci.lower, ci.upper, ci.radius) == (pytest.approx(0.4), 1.0, 0.5)

    def test_unclipped(self):
        ci = interval_from(0.1, 0.5, clip=False)
        assert ci.lower == pytest.approx(-0.4)

    def test_zero_pull_mean(self):
        ci = confidence_interval(ArmStats(), P1)
        assert ci.lower == 0.0 and ci.upper == 1.0

    @settings(max_examples=200, deadline=None)
    @given(pulls=st.integers(0, 10_000), frac=st.floats(0, 1), delta=st.floats(0.001, 0.5),
           omega=st.floats(0.1, 1.0), k=st.integers(1, 100))
    def test_clipped_interval_ordered(self, pulls, frac, delta, omega, k):
        p = BoundParams(delta=delta, omega=omega, num_arms_k=k)
        ci = confidence_interval(ArmStats(pulls, round(frac * pulls)), p)
        assert 0.0 <= ci.lower <= ci.upper <= 1.0
        assert ci.radius >= 0.0

    @settings(max_examples=200, deadline=None)
    @given(counts=st.lists(st.integers(0, 3000), min_size=1, max_size=12), delta=st.floats(0.001, 0.5))
    def test_budget_never_exceeds_freedman(self, counts, delta):
        p = BoundParams(delta=delta, num_arms_k=len(counts))
        stats = [ArmStats(n, n / 2) for n in counts]
        assert conservative_budget_bound(stats, p) <= freedman_phi(sum(counts), delta, p.sigma) + 1e-12


def coverage_failure_rate(means, delta, horizon, sims, seed):
    """Fraction of simulations where some arm's mean leaves its interval at some pull count."""
    p = BoundParams(delta=delta, num_arms_k=len(means) - 1)
    radii = np.array([lil_radius_from_count(n, p) for n in range(1, horizon + 1)])
    counts = np.arange(1, horizon + 1)
    rng = np.random.default_rng(seed)
    failed = np.zeros(sims, dtype=bool)
    for mu in means:
        rewards = rng.random((sims, horizon)) < mu
        emp = np.cumsum(rewards, axis=1) / counts
        lower = np.maximum(emp - radii, 0.0)
        upper = np.minimum(emp + radii, 1.0)
        failed |= np.any((mu < lower) | (mu > upper), axis=1)
    return failed.mean()


class TestCoverage:

    def test_anytime_coverage(self):
        rate = coverage_failure_rate([0.5, 0.3, 0.9], delta=0.1, horizon=5000, sims=300, seed=3)
        assert rate <= 0.1
