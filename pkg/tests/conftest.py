import math

import numpy as np
import pytest
from hypothesis import strategies as st

from adaptsurv.trial_core import (
    AllocationSpec,
    CovariatePath,
    DesignConfig,
    EntryProcess,
    HazardSpec,
    Subject,
    TrialData,
)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_trial(entries, z, observed, events, horizon=math.inf, hazard=None):
    """TrialData with time-constant covariates; ``z`` is (n,) or (n, d)."""
    z = np.asarray(z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    subs = tuple(Subject(float(u), CovariatePath.constant(zi), float(o), int(e), int(zi[0] > 0.5))
                 for u, zi, o, e in zip(entries, z, observed, events))
    return TrialData(subs, horizon=horizon, baseline_hazard=hazard)


def random_trial(rng, n, d=1, switching=False, horizon=50.0):
    """Small random trial with distinct entries and optional covariate jumps."""
    entries = np.sort(rng.uniform(0, horizon * 0.6, n))
    subs = []
    for u in entries:
        vals = rng.integers(0, 2, size=(1, d)).astype(float)
        jumps = [0.0]
        if switching and rng.random() < 0.5:
            jumps.append(float(rng.uniform(0.5, 10)))
            vals = np.vstack([vals, rng.integers(0, 2, size=(1, d))])
        t_event = float(rng.exponential(8.0))
        cap = float(horizon - u) * 0.999
        event = int(t_event < cap and rng.random() < 0.8)
        subs.append(Subject(float(u), CovariatePath(jumps, vals), min(t_event, cap), event, int(vals[0, 0])))
    return TrialData(tuple(subs), horizon=horizon)


def small_design(**kw):
    base = dict(n=80, hazard=HazardSpec(rates=(0.1,), censor_rate=0.01, admin_horizon=100.0),
                entry_process=EntryProcess(rate=2.0), allocation=AllocationSpec(response_window=5.0),
                planned_information=12.0, seed=3)
    base.update(kw)
    return DesignConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
