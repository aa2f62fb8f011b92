import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptsurv.errors import QuadratureFailure
from adaptsurv.seq_monitor import (
    SPENDING_FUNCTIONS,
    MonitoringPlan,
    compute_boundaries,
    monitor_trial,
    spending_value,
)
from adaptsurv.sim_engine import simulate_trial
from adaptsurv.trial_core import AllocationSpec, EntryProcess, HazardSpec

from conftest import make_trial, small_design
from oracles import two_look_boundaries


class TestSpending:
    @pytest.mark.parametrize("spending", SPENDING_FUNCTIONS)
    def test_full_alpha_at_one(self, spending):
        assert spending_value(spending, 0.05, 1.0) == pytest.approx(0.05, abs=1e-15)
        assert spending_value(spending, 0.05, 0.0) == 0.0

    def test_linear(self):
        assert spending_value("linear", 0.05, 0.4) == pytest.approx(0.02)

    def test_pocock_exact(self):
        assert spending_value("pocock_type", 0.05, 1.0) == 0.05

    @given(st.sampled_from(SPENDING_FUNCTIONS), st.lists(st.floats(0, 1), min_size=2, max_size=10))
    def test_monotone(self, spending, vs):
        vals = [spending_value(spending, 0.05, v) for v in sorted(vs)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert all(0 <= x <= 0.05 + 1e-15 for x in vals)

    def test_increments_sum_to_alpha(self):
        v = np.linspace(0.1, 1.0, 10)
        cum = [spending_value("obrien_fleming_type", 0.05, x) for x in v]
        assert abs(np.sum(np.diff(np.concatenate([[0.0], cum]))) - 0.05) < 1e-12

    def test_unknown(self):
        with pytest.raises(ValueError):
            spending_value("haybittle", 0.05, 0.5)


class TestBoundaries:
    @pytest.mark.parametrize("spending", SPENDING_FUNCTIONS)
    def test_single_look(self, spending):
        assert abs(compute_boundaries([1.0], 0.05, spending)[0] - 1.95996) < 1e-4

    def test_two_look_obf_two_sided(self):
        c = compute_boundaries([0.5, 1.0], 0.05)
        a1 = spending_value("obrien_fleming_type", 0.05, 0.5)
        np.testing.assert_allclose(c, two_look_boundaries(0.5, a1, 0.05), atol=1e-6)

    def test_two_look_obf_reference_values(self):
        # the widely quoted (2.963, 1.969) pair is the one-sided 0.025 design
        c = compute_boundaries([0.5, 1.0], 0.025, sided="one")
        np.testing.assert_allclose(c, [2.963, 1.969], atol=5e-3)
        a1 = spending_value("obrien_fleming_type", 0.025, 0.5)
        np.testing.assert_allclose(c, two_look_boundaries(0.5, a1, 0.025, two_sided=False), atol=1e-6)

    def test_pocock_flat(self):
        c = compute_boundaries(np.arange(1, 6) / 5, 0.05, "pocock_type")
        assert c.max() - c.min() < 0.15

    def test_obf_non_increasing(self):
        c = compute_boundaries(np.arange(1, 6) / 5, 0.05)
        assert np.all(c > 0) and np.all(np.diff(c) <= 0)

    def test_resolution_self_check(self):
        v = [0.3, 0.55, 0.8, 1.0]
        a = compute_boundaries(v, 0.05, nodes=4001)
        b = compute_boundaries(v, 0.05, nodes=8001)
        assert np.max(np.abs(a - b)) < 5e-4

    def test_coarse_grid_matches_default(self):
        v = [0.34, 0.68, 1.0]
        assert np.max(np.abs(compute_boundaries(v, 0.05, nodes=401) - compute_boundaries(v, 0.05))) < 1e-8

    def test_quadrature_failure_detected(self):
        with pytest.raises(QuadratureFailure):
            compute_boundaries([0.2, 0.5, 1.0], 0.05, "linear", span=1.5, nodes=101)

    @pytest.mark.parametrize("kw", [dict(v_grid=[0.0, 1.0]), dict(v_grid=[0.5, 0.5]), dict(nodes=400)])
    def test_input_checks(self, kw):
        args = dict(v_grid=[0.5, 1.0], alpha=0.05, nodes=401)
        args.update(kw)
        with pytest.raises(ValueError):
            compute_boundaries(**args)

    def test_plan(self):
        plan = MonitoringPlan.equally_spaced(3, nodes=401)
        assert plan.v_grid == pytest.approx((1 / 3, 2 / 3, 1.0))
        assert len(plan.boundaries) == 3
        with pytest.raises(ValueError):
            MonitoringPlan((0.5, 1.2))


class TestMonitor:
    def test_zero_events(self):
        tr = make_trial([0.0, 1.0], [0, 1], [3.0, 3.0], [0, 0], horizon=10.0)
        dec = monitor_trial(tr, MonitoringPlan.equally_spaced(3, nodes=401), Vn=1.0)
        assert [d.action for d in dec] == ["accept_fail_to_reach"] * 3

    def test_no_look_ahead(self):
        cfg = small_design(n=300, beta0=(1.5,), hazard=HazardSpec(rates=(0.1,), admin_horizon=200.0),
                           entry_process=EntryProcess(rate=3.0), planned_information=40.0)
        plan = MonitoringPlan.equally_spaced(4, nodes=401)
        for r in range(5):
            log = []
            dec = monitor_trial(simulate_trial(cfg, r).trial, plan, 0.0, 40.0, access_log=log)
            last = dec[-1]
            if last.action == "reject":
                assert max(log) == last.sigma_hat
            assert log == sorted(log)
            for d in dec:
                if d.action != "accept_fail_to_reach":
                    assert (abs(d.z_statistic) >= d.boundary) == (d.action == "reject")

    def test_power_and_early_stopping(self):
        cfg = small_design(n=400, beta0=(math.log(2),), hazard=HazardSpec(rates=(0.1,), censor_rate=0.01,
                                                                           admin_horizon=150.0),
                           entry_process=EntryProcess(rate=4.0), allocation=AllocationSpec(response_window=5.0),
                           planned_information=64.0)
        plan = MonitoringPlan.equally_spaced(3, nodes=401)
        stops = []
        for r in range(200):
            dec = monitor_trial(simulate_trial(cfg, r).trial, plan, 0.0, 64.0)
            stops.append(dec[-1].look_index if dec[-1].action == "reject" else math.inf)
        stops = np.array(stops)
        assert np.mean(np.isfinite(stops)) > 0.8
        assert np.median(stops) < 3
