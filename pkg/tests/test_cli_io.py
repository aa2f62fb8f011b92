import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptsurv.cli_io import main, parse_config, trial_from_csv, trial_to_csv
from adaptsurv.errors import ParseError, ValidationError
from adaptsurv.sim_engine import simulate_trial
from adaptsurv.trial_core import CovariatePath, Subject, TrialData

from conftest import small_design

MINIMAL = """
[design]
n = 40

[hazard]
rates = [0.1]
admin_horizon = 80.0
"""

FULL_CONFIG = """
# a complete example
[design]
n = 60
beta0 = 0.0
planned_information = 8.0
entry_rate = 2.0
seed = 17

[hazard]
rates = [0.1]
censor_rate = 0.01
admin_horizon = 100.0

[allocation]
kind = "randomized_play_the_winner"
response_window = 5.0

[monitoring]
looks = 2
alpha = 0.05
nodes = 401

[validation]
replicates = 3
t_grid = [50.0, 90.0]
theta_grid = [25.0]
final_estimate = true
monitor = true
"""


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config(MINIMAL, env={})
        assert cfg.design.planned_information == 40.0
        assert cfg.plan.spending == "obrien_fleming_type"
        assert cfg.design.allocation.kind == "randomized_play_the_winner"
        assert cfg.validation.replicates == 500

    def test_missing_rates(self):
        with pytest.raises(ValidationError) as err:
            parse_config(MINIMAL.replace("rates = [0.1]\n", ""), env={})
        assert err.value.key == "rates"

    def test_v_bar_zero(self):
        with pytest.raises(ValidationError) as err:
            parse_config(MINIMAL.replace("n = 40", "n = 40\nv_bar = 0.0"), env={})
        assert err.value.key == "v_bar"

    @pytest.mark.parametrize("extra, key", [
        ("[design]\nsample_size = 3", "sample_size"),
        ("[extras]\nx = 1", "extras"),
    ])
    def test_unknown_keys(self, extra, key):
        text = MINIMAL + "\n" + extra if extra.startswith("[extras]") else MINIMAL.replace("[design]", extra)
        with pytest.raises(ValidationError) as err:
            parse_config(text, env={})
        assert err.value.key == key

    def test_parse_error_line(self):
        with pytest.raises(ParseError) as err:
            parse_config(MINIMAL.replace("n = 40", "n = "), env={})
        assert err.value.line == 3

    @pytest.mark.parametrize("text, key", [
        (MINIMAL.replace("admin_horizon = 80.0", "admin_horizon = inf"), "admin_horizon"),
        (MINIMAL.replace("admin_horizon = 80.0\n", ""), "admin_horizon"),
        (MINIMAL.replace("n = 40", "n = 4.5"), "n"),
        (MINIMAL + "[monitoring]\nspending = 'bogus'\n", "monitoring"),
        (MINIMAL.replace("n = 40", "n = 40\nplanned_information = 0.0"), "planned_information"),
    ])
    def test_validation_by_key(self, text, key):
        with pytest.raises(ValidationError) as err:
            parse_config(text, env={})
        assert err.value.key == key

    def test_seed_override(self):
        assert parse_config(FULL_CONFIG, env={"ADAPTSURV_SEED": "99"}).design.seed == 99
        assert parse_config(FULL_CONFIG, env={}).design.seed == 17

    def test_full(self):
        cfg = parse_config(FULL_CONFIG, env={})
        assert cfg.plan.v_grid == (0.5, 1.0)
        assert cfg.validation.options.grid_points() == [(50.0, 25.0), (90.0, 25.0)]
        assert cfg.validation.options.plan is cfg.plan


def _trials():
    gaps = st.lists(st.floats(1e-6, 5.0, allow_subnormal=False), min_size=1, max_size=15)
    return st.tuples(gaps, st.integers(0, 2**31), st.integers(1, 3))


class TestTrialCsv:
    @given(_trials())
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_exact(self, spec):
        gaps, seed, d = spec
        rng = np.random.default_rng(seed)
        entries = np.cumsum(gaps)
        subs = []
        for u in entries:
            jumps = [0.0] + sorted(set(rng.uniform(0.01, 4, rng.integers(0, 3)).tolist()))
            vals = rng.normal(size=(len(jumps), d))
            subs.append(Subject(float(u), CovariatePath(jumps, vals), float(rng.exponential() + 1e-9),
                                int(rng.integers(0, 2)), int(rng.integers(0, 2))))
        tr = TrialData(tuple(subs), horizon=float(entries[-1] + rng.uniform(0.1, 3)))
        back = trial_from_csv(trial_to_csv(tr))
        assert back.horizon == tr.horizon
        for a, b in zip(tr.subjects, back.subjects):
            assert (a.entry_time, a.observed_time, a.event_indicator, a.arm) == \
                (b.entry_time, b.observed_time, b.event_indicator, b.arm)
            assert a.covariates == b.covariates

    def test_simulated_roundtrip(self):
        tr = simulate_trial(small_design(switch_time=2.0)).trial
        assert trial_to_csv(trial_from_csv(trial_to_csv(tr))) == trial_to_csv(tr)

    @pytest.mark.parametrize("text, line", [
        ("# horizon=10.0\nsubject_id,entry_time,observed_time,event_indicator,arm,z0\n0,1.0,2.0,1,0\n", 3),
        ("# horizon=10.0\nsubject_id,entry_time,observed_time,event_indicator,arm,z0\n0,1.0,x,1,0,0.0:1.0\n", 3),
        ("# horizon=10.0\nid,entry\n", 2),
        ("# horizon=ten\n", 1),
    ])
    def test_parse_errors(self, text, line):
        with pytest.raises(ParseError) as err:
            trial_from_csv(text)
        assert err.value.line == line


class TestCommandLine:
    @pytest.fixture
    def config(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text(FULL_CONFIG)
        return p

    def test_unknown_subcommand(self, capsys):
        assert main(["bogus"]) == 2

    def test_missing_flag(self):
        assert main(["simulate"]) == 2

    def test_domain_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text(MINIMAL.replace("rates = [0.1]\n", ""))
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert "error[E_VALIDATION]" in capsys.readouterr().err

    def test_parse_error_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[design\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert "error[E_PARSE]" in capsys.readouterr().err

    def test_pipeline(self, tmp_path, config, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
        assert {p.name for p in out.iterdir()} == {"trial.csv", "allocation_log.csv", "manifest.json"}
        man = json.loads((out / "manifest.json").read_text())
        assert man["status"] == "ok" and man["root_seed"] == 17 and len(man["outputs"]) == 2
        trial = str(out / "trial.csv")
        assert main(["score", "--trial", trial, "--beta", "0.2", "--t", "80", "--out", str(tmp_path / "s")]) == 0
        assert json.loads((tmp_path / "s" / "score.json").read_text())["t"] == 80.0
        assert main(["estimate", "--trial", trial, "--out", str(tmp_path / "e")]) == 0
        assert json.loads((tmp_path / "e" / "estimate.json").read_text())["converged"]
        assert main(["monitor", "--trial", trial, "--config", str(config), "--out", str(tmp_path / "m")]) == 0
        assert (tmp_path / "m" / "monitoring.csv").read_text().startswith("look,v,sigma_hat,z,boundary,action")
        assert main(["validate", "--config", str(config), "--out", str(tmp_path / "v")]) == 0
        rep = json.loads((tmp_path / "v" / "diagnostics.json").read_text())
        assert rep["R"] == 3 and rep["notes"]

    def test_env_seed_changes_trial(self, tmp_path, config, monkeypatch):
        main(["simulate", "--config", str(config), "--out", str(tmp_path / "a")])
        monkeypatch.setenv("ADAPTSURV_SEED", "5")
        main(["simulate", "--config", str(config), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "trial.csv").read_text() != (tmp_path / "b" / "trial.csv").read_text()

    def test_boundaries_stdout(self, capsys):
        assert main(["boundaries", "--alpha", "0.05", "--looks", "1", "--nodes", "401"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "k,v,alpha_spent,c_k"
        assert abs(float(lines[1].split(",")[3]) - 1.959964) < 1e-5

    def test_bad_threads(self, tmp_path, config):
        assert main(["validate", "--config", str(config), "--out", str(tmp_path), "--threads", "0"]) == 2
