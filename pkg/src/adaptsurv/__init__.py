"""Survival trials with staggered entry and outcome-adaptive allocation.

Simulation, Cox score processes on the calendar-time / entry-time plane,
information-time monitoring and the Monte Carlo checks that go with them.
"""

__version__ = "0.1.0"

from .cox_engine import FULL, SUBSAMPLE, ScoreScanner, score
from .errors import AdaptSurvError
from .estimator import MpleResult, solve_mple, solve_mple_at_fraction
from .info_time import bhat_path, information_path, sigma_hat
from .seq_monitor import MonitoringPlan, compute_boundaries, monitor_trial
from .sim_engine import simulate_trial
from .trial_core import (
    AllocationSpec,
    CovariatePath,
    DesignConfig,
    EntryProcess,
    HazardSpec,
    Subject,
    TrialData,
)

__all__ = [
    "FULL", "SUBSAMPLE", "AdaptSurvError", "AllocationSpec", "CovariatePath", "DesignConfig", "EntryProcess",
    "HazardSpec", "MonitoringPlan", "MpleResult", "ScoreScanner", "Subject", "TrialData", "bhat_path",
    "compute_boundaries", "information_path", "monitor_trial", "score", "sigma_hat", "simulate_trial",
    "solve_mple", "solve_mple_at_fraction",
]
