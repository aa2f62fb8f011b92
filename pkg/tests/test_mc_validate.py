import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from adaptsurv.cox_engine import FULL, SUBSAMPLE, score, zbar
from adaptsurv.errors import InsufficientReplicates
from adaptsurv.mc_validate import (
    DiagnosticsReport,
    ValidationOptions,
    _loo_covariances,
    brownian_diagnostics,
    compensated_parts,
    compensated_score,
    estimation_diagnostics,
    field_diagnostics,
    oracle_score,
    replicates_to_csv,
    run_replicates,
    type1_and_coverage,
)
from adaptsurv.seq_monitor import MonitoringPlan
from adaptsurv.sim_engine import simulate_trial
from adaptsurv.trial_core import HazardSpec, TrialData

from conftest import make_trial, random_trial, seeds, small_design


def tiny_design(**kw):
    base = dict(n=30, hazard=HazardSpec(rates=(0.1,), censor_rate=0.01, admin_horizon=60.0), planned_information=3.0)
    base.update(kw)
    return small_design(**base)


class TestOracle:
    def test_hand_case(self):
        tr = make_trial([0.0, 1.0, 2.0], [1, 0, 1], [2.5, 10.0, 1.2], [1, 0, 1], horizon=20.0)
        # event at w=1.2 (calendar 3.2): all three at risk, Zbar = 2/3
        # event at w=2.5 (calendar 2.5): subjects 0 and 1, Zbar = 1/2
        assert oracle_score(tr, 0.0, 4.0, 4.0)[0] == pytest.approx(5 / 6, abs=1e-15)

    def test_zero_events(self):
        tr = make_trial([0.0, 1.0], [1, 0], [2.0, 3.0], [0, 0], horizon=10.0)
        assert oracle_score(tr, 0.3, 5.0).tolist() == [0.0]

    @given(seeds, st.floats(-2, 2), st.floats(0.05, 1.0), st.floats(0.05, 1.0),
           st.sampled_from([FULL, SUBSAMPLE]))
    @settings(max_examples=30, deadline=None)
    def test_matches_score(self, seed, beta, a, b, variant):
        rng = np.random.default_rng(seed)
        tr = random_trial(rng, int(rng.integers(2, 30)), d=int(rng.integers(1, 3)), switching=True)
        t = a * tr.horizon
        theta = b * t
        fast = score(tr, [beta] * tr.dim, t, theta, variant).score
        assert np.max(np.abs(fast - oracle_score(tr, [beta] * tr.dim, t, theta, variant))) < 1e-12


class TestCompensated:
    @given(seeds, st.floats(-1, 1))
    @settings(max_examples=25, deadline=None)
    def test_cancels_at_theta_equal_t(self, seed, beta):
        rng = np.random.default_rng(seed)
        tr = random_trial(rng, 25, switching=True)
        hz = HazardSpec(cut_points=(0.0, 3.0), rates=(0.2, 0.05))
        for t in (10.0, 30.0, 49.0):
            u = compensated_score(tr, beta, t, t, hz)
            assert np.max(np.abs(u - oracle_score(tr, beta, t, t))) < 1e-8

    def test_empty(self):
        tr = TrialData((), horizon=10.0, true_beta=(0.0,))
        assert compensated_score(tr, 0.0, 5.0, 5.0, HazardSpec()).tolist() == [0.0]
        tr = make_trial([0.0, 1.0], [1, 0], [2.0, 3.0], [0, 0], horizon=10.0)
        np.testing.assert_allclose(compensated_score(tr, 0.0, 5.0, 5.0, HazardSpec()), [0.0], atol=1e-15)

    def test_compensator_against_quadrature(self, rng):
        tr = random_trial(rng, 12, switching=True)
        hz = HazardSpec(cut_points=(0.0, 2.0, 5.0), rates=(0.3, 0.1, 0.2))
        beta, t = 0.4, 35.0
        parts = compensated_parts(tr, beta, t, hz)
        for j, s in enumerate(tr.subjects):
            if s.entry_time > t:
                continue
            end = min(s.observed_time, t - s.entry_time)

            def f(w):
                z = s.covariates.at(w)[0]
                return (z - zbar(tr, beta, t, w)[0]) * math.exp(beta * z) * hz.rate_at(w)

            pts = [p for p in np.concatenate([tr.observed, t - tr.entry, s.covariates.jump_times, hz.cut_points])
                   if 0 < p < end]
            ref = integrate.quad(f, 0, end, points=pts or None, limit=500, epsabs=1e-11)[0]
            assert parts.compensator[j, 0] == pytest.approx(ref, abs=1e-8)

    def test_needs_hazard(self, rng):
        with pytest.raises(ValueError):
            compensated_score(random_trial(rng, 5), 0.0, 10.0)

    def test_uses_stored_hazard(self):
        out = simulate_trial(small_design())
        a = compensated_score(out.trial, 0.0, 60.0, 30.0)
        b = compensated_score(out.trial, 0.0, 60.0, 30.0, small_design().hazard)
        assert np.array_equal(a, b)


class TestReplicates:
    def test_rejects_single_replicate(self):
        with pytest.raises(ValueError):
            run_replicates(tiny_design(), 1)

    def test_deterministic(self):
        opts = ValidationOptions(t_grid=(40.0,), theta_grid=(20.0,), final_estimate=True)
        a = run_replicates(tiny_design(), 3, opts)
        b = run_replicates(tiny_design(), 3, opts)
        assert replicates_to_csv(a) == replicates_to_csv(b)
        assert len({r.seed for r in a.per_replicate}) == 3

    def test_threads_do_not_change_results(self):
        opts = ValidationOptions(t_grid=(40.0,), theta_grid=(20.0,))
        assert replicates_to_csv(run_replicates(tiny_design(), 4, opts)) == \
            replicates_to_csv(run_replicates(tiny_design(), 4, opts, threads=2))

    def test_failures_isolated(self):
        opts = ValidationOptions(v_grid=(0.5,), estimate_fractions=(1.0,))
        rs = run_replicates(tiny_design(planned_information=1e4), 3, opts)
        assert rs.failure_rate() == 1.0
        assert all(r.failures == (("estimate_v1.0", "E_INFORMATION_NOT_REACHED"),) for r in rs.per_replicate)
        assert estimation_diagnostics(rs).notes

    def test_oracle_checks(self):
        rs = run_replicates(tiny_design(), 2, ValidationOptions(oracle_checks=1))
        assert rs.per_replicate[0].oracle_error < 1e-12
        assert math.isnan(rs.per_replicate[1].oracle_error)


class TestDiagnostics:
    def test_insufficient_replicates(self):
        rs = run_replicates(tiny_design(), 10)
        with pytest.raises(InsufficientReplicates):
            brownian_diagnostics(rs)
        with pytest.raises(InsufficientReplicates):
            field_diagnostics(rs)
        with pytest.raises(InsufficientReplicates):
            type1_and_coverage(tiny_design(), MonitoringPlan.equally_spaced(2, nodes=401), 100)

    def test_no_events_flags_all_unattained(self):
        cfg = tiny_design(n=3, hazard=HazardSpec(rates=(1e-9,), admin_horizon=60.0))
        rep = brownian_diagnostics(run_replicates(cfg, 500))
        assert rep.reached == [0, 0, 0, 0]
        assert rep.notes
        json.loads(rep.to_json())

    def test_identity_pairs_exact(self):
        opts = ValidationOptions(v_grid=(), t_grid=(30.0, 50.0), theta_grid=(10.0, 25.0))
        rep = field_diagnostics(run_replicates(tiny_design(), 500, opts))
        same = [e for e in rep.minmatch_errors if e[0] == e[1]]
        assert len(same) == 4 and all(e[2] == 0.0 for e in same)
        assert len(rep.field_covariance_matrix) == 4

    def test_loo_covariances(self, rng):
        X = rng.normal(size=(12, 3))
        loo = _loo_covariances(X)
        for i in (0, 5, 11):
            np.testing.assert_allclose(loo[i], np.cov(np.delete(X, i, axis=0), rowvar=False), atol=1e-12)

    def test_report_json_has_no_nan(self):
        rep = DiagnosticsReport(R=3, bhat_means=[math.nan, 0.1])
        assert json.loads(rep.to_json())["bhat_means"] == [None, 0.1]

    def test_merge(self):
        a = DiagnosticsReport(R=5, notes=["x"])
        a.merge(DiagnosticsReport(coverage_rate=0.9, notes=["y"]))
        assert a.R == 5 and a.coverage_rate == 0.9 and a.notes == ["x", "y"]
