"""Trial simulator: staggered entry, outcome-adaptive allocation, Cox event times.

Random streams
--------------
All randomness derives from one root seed through ``numpy.random.SeedSequence``
spawn keys, so any stream can be rebuilt from its key alone:

* ``(replicate, 0)`` -- entry-time gaps of replicate ``replicate``;
* ``(replicate, 1)`` -- an ``(n, d + 2)`` block of uniforms; row ``i`` belongs
  to subject ``i``: allocation uniform, ``d - 1`` baseline covariate uniforms,
  then the event and censoring uniforms (mapped to unit exponentials by
  ``-log(1 - u)``).

Replicates therefore do not depend on the order in which they are run.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConditionAViolation, ScheduleExceedsHorizon, ValidationError
from .trial_core import (
    AllocationSpec,
    CovariatePath,
    DesignConfig,
    HazardSpec,
    Subject,
    TrialData,
)


def stream(root_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(root_seed, spawn_key=key)))


@dataclass(frozen=True)
class Response:
    """An interim outcome that an allocation rule may react to."""

    completion_time: float
    arm: int
    success: bool


@dataclass
class AllocationPolicy:
    spec: AllocationSpec
    urn: list = field(default_factory=list)
    n_allocated: int = 0
    responses_seen: int = 0
    last_info_time: float = -math.inf

    def __post_init__(self):
        if not self.urn:
            self.urn = [int(self.spec.initial_balls)] * 2

    def probability_arm1(self) -> float:
        kind = self.spec.kind
        if kind == "complete_randomization":
            return self.spec.p
        if kind == "randomized_play_the_winner":
            return self.urn[1] / (self.urn[0] + self.urn[1])
        if kind == "deterministic_alternation":
            return float(self.n_allocated % 2)
        raise ValueError(f"{kind} has no outcome-independent probability")


def allocate_next(policy: AllocationPolicy, entry_time: float, history: Sequence[Response],
                  rng: np.random.Generator | float):
    """Assign the arm of a subject entering at ``entry_time``.

    ``history`` holds responses not yet shown to the policy. The urn absorbs
    them before the draw: a success adds ``balls_added`` balls of the same arm,
    a failure adds them to the other arm. ``rng`` may be a generator or an
    already drawn uniform.

    Returns:
        ``(arm, policy)``; the policy is updated in place and returned for
        convenience.
    """
    for r in history:
        if r.completion_time > entry_time:
            raise ConditionAViolation(
                f"response completing at {r.completion_time!r} offered to entry at {entry_time!r}")
    if policy.spec.kind == "peek_own_outcome":
        raise ConditionAViolation("peek_own_outcome cannot be driven through allocate_next")
    u = float(rng.random()) if isinstance(rng, np.random.Generator) else float(rng)
    if policy.spec.kind == "randomized_play_the_winner":
        add = int(policy.spec.balls_added)
        for r in history:
            policy.urn[r.arm if r.success else 1 - r.arm] += add
    for r in history:
        policy.responses_seen += 1
        policy.last_info_time = max(policy.last_info_time, r.completion_time)
    arm = int(u < policy.probability_arm1())
    policy.n_allocated += 1
    return arm, policy


def generate_entry_times(config: DesignConfig, rng: np.random.Generator) -> np.ndarray:
    horizon = config.hazard.admin_horizon
    ep = config.entry_process
    if ep.kind == "fixed_schedule":
        times = np.asarray(ep.times, dtype=float)
        if len(times) != config.n:
            raise ValidationError("entry_times", "fixed schedule length must equal n")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("entry_times", "schedule must be strictly increasing (no ties)")
        if times[0] < 0:
            raise ValidationError("entry_times", "must be >= 0")
    else:
        times = np.cumsum(rng.standard_exponential(config.n) / ep.rate)
    if times[-1] >= horizon:
        raise ScheduleExceedsHorizon(f"last entry {times[-1]!r} is not before horizon {horizon!r}")
    return times


def cumulative_hazard(hazard: HazardSpec, beta, path: CovariatePath, w: float) -> float:
    """``int_0^w exp(beta'Z(s)) lambda0(s) ds`` summed exactly over constant pieces."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    bps, rates = _pieces(hazard, beta, path)
    total = 0.0
    for k, (a, r) in enumerate(zip(bps, rates)):
        if w <= a:
            break
        b = bps[k + 1] if k + 1 < len(bps) else math.inf
        total += r * (min(w, b) - a)
    return total


def _pieces(hazard, beta, path):
    bps = np.union1d(np.asarray(hazard.cut_points), path.jump_times)
    lam = hazard.rate_at(bps)
    z = path.values[np.searchsorted(path.jump_times, bps, side="right") - 1]
    return bps, lam * np.exp(z @ beta)


def invert_cumulative_hazard(hazard: HazardSpec, beta, path: CovariatePath, e: float) -> float:
    """Time ``T`` at which the cumulative hazard first reaches ``e``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    return _invert(*_pieces(hazard, beta, path), e)


def _invert(bps, rates, e):
    acc = 0.0
    for k in range(len(bps)):
        a = bps[k]
        b = bps[k + 1] if k + 1 < len(bps) else math.inf
        inc = rates[k] * (b - a)
        if acc + inc >= e:
            return float(a + (e - acc) / rates[k])
        acc += inc
    raise AssertionError("unreachable: last piece is unbounded")


def sample_event_time(hazard: HazardSpec, beta0, path: CovariatePath, rng: np.random.Generator) -> float:
    """Draw ``T`` from the Cox model by inverting the cumulative hazard at a unit exponential."""
    return invert_cumulative_hazard(hazard, beta0, path, float(rng.standard_exponential()))


@dataclass(frozen=True)
class AllocationRecord:
    subject_id: int
    entry_time: float
    urn: tuple
    arm: int
    uniform: float
    responses_used: int
    last_info_time: float


@dataclass(frozen=True)
class SimOutcome:
    trial: TrialData
    allocation_log: tuple

    def condition_a_holds(self) -> bool:
        return all(r.last_info_time < r.entry_time for r in self.allocation_log)


def _response_of(spec: AllocationSpec, entry, obs, event, arm):
    """Resolution time and success flag of a subject's interim response, or None."""
    window = spec.response_window
    if obs >= window:
        return entry + window, spec.success_rule == "survival"
    if event:
        return entry + obs, spec.success_rule == "event"
    return None


def _covariate_path(config: DesignConfig, arm: int, extra: np.ndarray) -> CovariatePath:
    if config.switch_time is not None and arm == 0:
        vals = np.array([[0.0, *extra], [1.0, *extra]])
        return CovariatePath([0.0, config.switch_time], vals)
    return CovariatePath([0.0], np.array([[float(arm), *extra]]))


def simulate_trial(config: DesignConfig, replicate: int = 0) -> SimOutcome:
    """Simulate one trial; deterministic in ``(config.seed, replicate)``."""
    seed = config.seed
    entries = generate_entry_times(config, stream(seed, replicate, 0))
    hazard = config.hazard
    beta0 = np.asarray(config.beta0)
    spec = config.allocation
    policy = AllocationPolicy(spec)
    pending: list = []  # heap of (resolution time, arm, success)
    subjects, log = [], []
    draws = stream(seed, replicate, 1).random((config.n, config.dim + 2))
    paths: dict = {}
    for i, u_i in enumerate(entries):
        u_alloc = float(draws[i, 0])
        extra = (draws[i, 1:config.dim] < 0.5).astype(float)
        e_event = -math.log1p(-draws[i, -2])
        e_censor = -math.log1p(-draws[i, -1])

        history = []
        while pending and pending[0][0] < u_i:
            c, a, ok = heapq.heappop(pending)
            history.append(Response(c, a, ok))
        if spec.kind == "peek_own_outcome":
            # looks at the entering subject's own pending outcome
            arm = int(e_event > math.log(2.0))
        else:
            arm, policy = allocate_next(policy, float(u_i), history, u_alloc)
        key = (arm, extra.tobytes())
        if key not in paths:
            path = _covariate_path(config, arm, extra)
            if path.total_variation() > config.covariate_bound:
                raise ValidationError("covariate_bound", "generated covariate path exceeds the bound")
            paths[key] = (path, _pieces(hazard, beta0, path))
        path, pieces = paths[key]
        t_event = _invert(*pieces, e_event)
        c_exp = e_censor / hazard.censor_rate if hazard.censor_rate > 0 else math.inf
        t_censor = min(c_exp, hazard.admin_horizon - u_i)
        obs = min(t_event, t_censor)
        ev = int(t_event <= t_censor)
        subjects.append(Subject(float(u_i), path, obs, ev, arm, t_event, t_censor))
        if spec.kind == "peek_own_outcome":
            log.append(AllocationRecord(i, float(u_i), tuple(policy.urn), arm, u_alloc, 1,
                                        float(u_i) + t_event))
        else:
            log.append(AllocationRecord(i, float(u_i), tuple(policy.urn), arm, u_alloc,
                                        policy.responses_seen, policy.last_info_time))
        resp = _response_of(spec, float(u_i), obs, ev, arm)
        if resp is not None:
            heapq.heappush(pending, (resp[0], arm, resp[1]))
    trial = TrialData(tuple(subjects), horizon=hazard.admin_horizon, true_beta=config.beta0,
                      baseline_hazard=hazard)
    return SimOutcome(trial, tuple(log))
