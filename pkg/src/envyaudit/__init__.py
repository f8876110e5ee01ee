"""Online certification of envy-freeness in recommender systems."""

from envyaudit.audit import AuditOutcome, AuditParams, AuditVerdict, run_audit, run_exact_audit, sample_sizes
from envyaudit.bounds import BoundParams, confidence_interval, freedman_phi, lil_radius
from envyaudit.envs import (
    BernoulliBanditEnv,
    PolicyMatrix,
    PreferenceMatrix,
    RecommenderSystem,
    UserBanditAdapter,
    standard_problem,
    two_tier_system,
)
from envyaudit.fairness import envy_report, opt_policies
from envyaudit.ocef import OcefConfig, OcefOutcome, Verdict, run

__version__ = "0.1.0"
