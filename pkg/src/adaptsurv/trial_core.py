"""Domain data model: covariate paths, subjects, trials and design configuration.

Times come in two flavours. Calendar time ``t`` runs from study start;
time-on-study ``w`` runs from a subject's own entry, so subject ``i`` is at
calendar time ``U_i + w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ValidationError

MAX_INFORMATION_FRACTION = 1.0


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovariatePath:
    """Right-continuous step function ``Z(w)`` on time-on-study ``w >= 0``.

    ``values[k]`` holds on ``[jump_times[k], jump_times[k + 1])``; the last
    value extends to infinity.
    """

    jump_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        jumps = np.atleast_1d(np.asarray(self.jump_times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None] if len(jumps) > 1 or values.size == 1 else values[None, :]
        if values.ndim != 2 or values.shape[0] != jumps.shape[0]:
            raise ValidationError("covariates", "need one value vector per segment")
        if values.shape[1] < 1:
            raise ValidationError("covariates", "dimension must be at least 1")
        if jumps[0] != 0.0:
            raise ValidationError("covariates", "first segment must start at w = 0")
        if np.any(np.diff(jumps) <= 0):
            raise ValidationError("covariates", "jump times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError("covariates", "values must be finite")
        object.__setattr__(self, "jump_times", _frozen(jumps))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def constant(cls, value) -> "CovariatePath":
        return cls([0.0], np.atleast_1d(np.asarray(value, dtype=float))[None, :])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, w: float) -> np.ndarray:
        return covariate_at(self, w)

    def total_variation(self) -> float:
        """``|Z(0)|`` plus the L1 size of every jump."""
        tv = np.abs(self.values[0]).sum()
        if len(self.values) > 1:
            tv += np.abs(np.diff(self.values, axis=0)).sum()
        return float(tv)

    def __eq__(self, other):
        if not isinstance(other, CovariatePath):
            return NotImplemented
        return (np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.jump_times.tobytes(), self.values.tobytes()))


def covariate_at(path: CovariatePath, w: float) -> np.ndarray:
    """Value of the step function at time-on-study ``w`` (right-continuous)."""
    if w < 0:
        raise ValueError("w must be >= 0")
    k = int(np.searchsorted(path.jump_times, w, side="right")) - 1
    return path.values[k].copy()


@dataclass(frozen=True)
class Subject:
    entry_time: float
    covariates: CovariatePath
    observed_time: float
    event_indicator: int
    arm: int = 0
    latent_event: Optional[float] = None
    latent_censor: Optional[float] = None

    def __post_init__(self):
        if not self.entry_time >= 0:
            raise ValidationError("entry_time", "must be >= 0")
        if not self.observed_time > 0:
            raise ValidationError("observed_time", "must be > 0")
        if self.event_indicator not in (0, 1):
            raise ValidationError("event_indicator", "must be 0 or 1")
        if self.latent_event is not None and self.latent_censor is not None:
            obs = min(self.latent_event, self.latent_censor)
            ev = int(self.latent_event <= self.latent_censor)
            if obs != self.observed_time or ev != self.event_indicator:
                raise ValidationError("observed_time", "inconsistent with latent times")

    @property
    def completion_time(self) -> float:
        """Calendar time at which the subject's outcome becomes known."""
        return self.entry_time + self.observed_time


def risk_indicator(subject: Subject, w: float) -> int:
    """1 when the subject is still under observation at time-on-study ``w``."""
    if w < 0:
        raise ValueError("w must be >= 0")
    return int(subject.observed_time >= w)


@dataclass(frozen=True)
class HazardSpec:
    """Piecewise-constant baseline hazard with exponential plus administrative censoring.

    ``rates[k]`` applies on ``[cut_points[k], cut_points[k + 1])``; ``cut_points``
    starts at 0.
    """

    cut_points: tuple = (0.0,)
    rates: tuple = (1.0,)
    censor_rate: float = 0.0
    admin_horizon: float = math.inf

    def __post_init__(self):
        cuts = tuple(float(c) for c in np.atleast_1d(self.cut_points))
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        if not rates:
            raise ValidationError("rates", "at least one rate required")
        if len(cuts) != len(rates):
            raise ValidationError("cut_points", "need one cut point per rate")
        if cuts[0] != 0.0 or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValidationError("cut_points", "must start at 0 and increase")
        if any(not (r > 0 and math.isfinite(r)) for r in rates):
            raise ValidationError("rates", "all rates must be positive and finite")
        if not self.censor_rate >= 0:
            raise ValidationError("censor_rate", "must be >= 0")
        if not self.admin_horizon > 0:
            raise ValidationError("admin_horizon", "must be > 0")
        object.__setattr__(self, "cut_points", cuts)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "censor_rate", float(self.censor_rate))
        object.__setattr__(self, "admin_horizon", float(self.admin_horizon))

    def rate_at(self, w):
        idx = np.searchsorted(self.cut_points, w, side="right") - 1
        return np.asarray(self.rates)[idx]

    def cumulative(self, w: float) -> float:
        """Baseline cumulative hazard on ``[0, w]``."""
        total = 0.0
        ends = list(self.cut_points[1:]) + [math.inf]
        for a, b, r in zip(self.cut_points, ends, self.rates):
            if w <= a:
                break
            total += r * (min(w, b) - a)
        return total


@dataclass(frozen=True)
class TrialData:
    """A completed (simulated or ingested) trial; subjects ordered by entry."""

    subjects: tuple
    horizon: float = math.inf
    true_beta: Optional[tuple] = None
    baseline_hazard: Optional[HazardSpec] = None

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if self.true_beta is not None:
            object.__setattr__(self, "true_beta", tuple(float(b) for b in np.atleast_1d(self.true_beta)))
        entries = [s.entry_time for s in subjects]
        for a, b in zip(entries, entries[1:]):
            if not b > a:
                raise ValidationError("entry_time", f"entry times must be strictly increasing ({a!r}, {b!r})")
        if subjects and not entries[-1] < self.horizon:
            raise ValidationError("entry_time", "every entry must precede the horizon")
        dims = {s.covariates.dim for s in subjects}
        if len(dims) > 1:
            raise ValidationError("covariates", "all subjects need the same covariate dimension")

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def dim(self) -> int:
        if self.subjects:
            return self.subjects[0].covariates.dim
        return len(self.true_beta) if self.true_beta else 1

    # Array views used by the numerical code. Computed once per instance.

    @cached_property
    def entry(self) -> np.ndarray:
        return _frozen([s.entry_time for s in self.subjects])

    @cached_property
    def observed(self) -> np.ndarray:
        return _frozen([s.observed_time for s in self.subjects])

    @cached_property
    def event(self) -> np.ndarray:
        a = np.array([s.event_indicator == 1 for s in self.subjects], dtype=bool)
        a.setflags(write=False)
        return a

    @cached_property
    def completion(self) -> np.ndarray:
        """Calendar time ``U_i + T~_i``; used for every event-inclusion test."""
        return _frozen(self.entry + self.observed)

    @cached_property
    def arms(self) -> np.ndarray:
        return np.array([s.arm for s in self.subjects], dtype=int)

    @cached_property
    def _padded_paths(self):
        d = self.dim
        J = max((len(s.covariates.jump_times) for s in self.subjects), default=1)
        jumps = np.full((self.n, J), np.inf)
        values = np.zeros((self.n, J, d))
        for i, s in enumerate(self.subjects):
            k = len(s.covariates.jump_times)
            jumps[i, :k] = s.covariates.jump_times
            values[i, :k] = s.covariates.values
            values[i, k:] = s.covariates.values[-1]
        return jumps, values

    @property
    def time_constant(self) -> bool:
        """True when no subject's covariates ever jump."""
        return self._padded_paths[0].shape[1] == 1

    @property
    def baseline_covariates(self) -> np.ndarray:
        """``Z_j(0)`` for every subject; shape (n, d)."""
        return self._padded_paths[1][:, 0, :]

    def covariates_at(self, w) -> np.ndarray:
        """``Z_j(w_e)`` for every query ``w_e`` and subject ``j``; shape (m, n, d)."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        jumps, values = self._padded_paths
        if jumps.shape[1] == 1:
            return np.broadcast_to(values[None, :, 0, :], (len(w), self.n, self.dim))
        idx = (jumps[None, :, :] <= w[:, None, None]).sum(axis=2) - 1
        return values[np.arange(self.n)[None, :], idx]

    def enrolled(self, t: float) -> int:
        """Entry counting process ``R_t``: subjects with ``U_i <= t``."""
        return int(np.searchsorted(self.entry, t, side="right"))

    def observed_at(self, t: float) -> "TrialData":
        """The trial as it would look to an analyst at calendar time ``t``.

        Subjects not yet entered are dropped and pending follow-up is censored at
        ``t``. Latent times are discarded.
        """
        subjects = []
        for s in self.subjects:
            if s.entry_time > t:
                break
            if s.completion_time <= t:
                obs, ev = s.observed_time, s.event_indicator
            else:
                obs, ev = t - s.entry_time, 0
            if obs <= 0:
                continue
            subjects.append(Subject(s.entry_time, s.covariates, obs, ev, s.arm))
        return TrialData(tuple(subjects), horizon=self.horizon, true_beta=self.true_beta,
                         baseline_hazard=self.baseline_hazard)


@dataclass(frozen=True)
class EntryProcess:
    kind: str = "poisson"  # or "fixed_schedule"
    rate: float = 1.0
    times: tuple = ()

    def __post_init__(self):
        if self.kind not in ("poisson", "fixed_schedule"):
            raise ValidationError("entry_process", f"unknown kind {self.kind!r}")
        if self.kind == "poisson" and not self.rate > 0:
            raise ValidationError("entry_rate", "must be > 0")
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))


ALLOCATION_KINDS = (
    "complete_randomization",
    "randomized_play_the_winner",
    "deterministic_alternation",
    "peek_own_outcome",
)


@dataclass(frozen=True)
class AllocationSpec:
    """Descriptor of an allocation policy; the live state lives in ``sim_engine``.

    ``peek_own_outcome`` deliberately breaks the no-look-ahead contract and
    exists only as a negative control for the validation harness.
    """

    kind: str = "randomized_play_the_winner"
    p: float = 0.5
    initial_balls: int = 1
    balls_added: int = 1
    response_window: float = 1.0
    success_rule: str = "survival"  # or "event"

    def __post_init__(self):
        if self.kind not in ALLOCATION_KINDS:
            raise ValidationError("kind", f"unknown policy {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError("p", "must lie in [0, 1]")
        if int(self.initial_balls) != self.initial_balls or self.initial_balls < 1:
            raise ValidationError("initial_balls", "must be a positive integer")
        if int(self.balls_added) != self.balls_added or self.balls_added < 0:
            raise ValidationError("balls_added", "must be a nonnegative integer")
        if not self.response_window > 0:
            raise ValidationError("response_window", "must be > 0")
        if self.success_rule not in ("survival", "event"):
            raise ValidationError("success_rule", "must be 'survival' or 'event'")


@dataclass(frozen=True)
class DesignConfig:
    """Everything needed to simulate one trial.

    The covariate vector has ``len(beta0)`` components: component 0 is the arm
    indicator (optionally switching from 0 to 1 at ``switch_time`` for the
    control arm), the rest are baseline Bernoulli(1/2) covariates.
    """

    n: int
    hazard: HazardSpec
    beta0: tuple = (0.0,)
    entry_process: EntryProcess = field(default_factory=EntryProcess)
    allocation: AllocationSpec = field(default_factory=AllocationSpec)
    planned_information: Optional[float] = None
    v_bar: float = 1.0
    seed: int = 0
    covariate_bound: float = 10.0
    switch_time: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "beta0", tuple(float(b) for b in np.atleast_1d(self.beta0)))
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("n", "must be a positive integer")
        if self.planned_information is None:
            object.__setattr__(self, "planned_information", float(self.n))
        if not self.planned_information > 0:
            raise ValidationError("planned_information", "must be > 0")
        if not 0 < self.v_bar <= MAX_INFORMATION_FRACTION:
            raise ValidationError("v_bar", f"must lie in (0, {MAX_INFORMATION_FRACTION}]")
        if not self.covariate_bound > 0:
            raise ValidationError("covariate_bound", "must be > 0")
        if self.switch_time is not None and not self.switch_time > 0:
            raise ValidationError("switch_time", "must be > 0")
        if self.entry_process.kind == "fixed_schedule" and len(self.entry_process.times) != self.n:
            raise ValidationError("entry_times", "fixed schedule length must equal n")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed", "must be a 64-bit unsigned integer")

    @property
    def dim(self) -> int:
        return len(self.beta0)
