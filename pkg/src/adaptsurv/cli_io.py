"""Configuration files, trial serialization and the ``adaptsurv`` command line.

Config grammar (TOML subset, one table per section; ``#`` starts a comment)::

    [design]      n, beta0, planned_information, v_bar, seed, covariate_bound,
                  switch_time, entry_process, entry_rate, entry_times
    [hazard]      cut_points, rates (required), censor_rate,
                  admin_horizon (required, finite)
    [allocation]  kind, p, initial_balls, balls_added, response_window,
                  success_rule
    [monitoring]  looks or v_grid, alpha, spending, sidedness, nodes
    [validation]  replicates, v_grid, t_grid, theta_grid, estimate_fractions,
                  final_estimate, monitor, oracle_checks

Unknown sections or keys are rejected. ``ADAPTSURV_SEED`` overrides
``design.seed``.

Floats are written with ``repr`` (shortest round-trip), so files read back to
the same doubles. Manifest timestamps honour ``SOURCE_DATE_EPOCH``, which makes
repeated runs byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import cox_engine, mc_validate
from .errors import AdaptSurvError, ParseError, ValidationError
from .estimator import solve_mple, solve_mple_at_fraction
from .info_time import bhat_path
from .seq_monitor import MonitoringPlan, compute_boundaries, monitor_trial, spending_value
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

SEED_ENV = "ADAPTSURV_SEED"

_KEYS = {
    "design": {"n", "beta0", "planned_information", "v_bar", "seed", "covariate_bound", "switch_time",
               "entry_process", "entry_rate", "entry_times"},
    "hazard": {"cut_points", "rates", "censor_rate", "admin_horizon"},
    "allocation": {"kind", "p", "initial_balls", "balls_added", "response_window", "success_rule"},
    "monitoring": {"looks", "v_grid", "alpha", "spending", "sidedness", "nodes"},
    "validation": {"replicates", "v_grid", "t_grid", "theta_grid", "estimate_fractions", "final_estimate",
                   "monitor", "oracle_checks"},
}


@dataclass(frozen=True)
class ValidationSettings:
    replicates: int = 500
    options: mc_validate.ValidationOptions = field(default_factory=mc_validate.ValidationOptions)
    monitor: bool = False


@dataclass(frozen=True)
class RunConfig:
    design: DesignConfig
    plan: MonitoringPlan
    validation: ValidationSettings
    text_hash: str


def _floats(key, value):
    vals = value if isinstance(value, list) else [value]
    try:
        return tuple(float(v) for v in vals)
    except (TypeError, ValueError):
        raise ValidationError(key, "must be a number or a list of numbers") from None


def _get(table, key, kind, default=None, required=False):
    if key not in table:
        if required:
            raise ValidationError(key, "required")
        return default
    v = table[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(key, "must be an integer")
    elif kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(key, "must be a number")
        v = float(v)
    elif kind is bool:
        if not isinstance(v, bool):
            raise ValidationError(key, "must be true or false")
    elif kind is str:
        if not isinstance(v, str):
            raise ValidationError(key, "must be a string")
    elif kind is tuple:
        v = _floats(key, v)
    return v


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    """Parse and validate a config document.

    Raises:
        ParseError: malformed document (carries the line number).
        ValidationError: unknown or missing keys and out-of-range values,
            reported by key name.
    """
    env = os.environ if env is None else env
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(int(m.group(1)) if m else 0, str(exc).split(" (at")[0]) from None
    for section, table in doc.items():
        if section not in _KEYS or not isinstance(table, dict):
            raise ValidationError(section, "unknown section")
        for key in table:
            if key not in _KEYS[section]:
                raise ValidationError(key, f"unknown key in [{section}]")
    des, haz = doc.get("design", {}), doc.get("hazard", {})
    alloc, mon, val = doc.get("allocation", {}), doc.get("monitoring", {}), doc.get("validation", {})

    horizon = _get(haz, "admin_horizon", float, required=True)
    if not math.isfinite(horizon):
        raise ValidationError("admin_horizon", "must be finite")
    hazard = HazardSpec(cut_points=_get(haz, "cut_points", tuple, (0.0,)),
                        rates=_get(haz, "rates", tuple, required=True),
                        censor_rate=_get(haz, "censor_rate", float, 0.0), admin_horizon=horizon)
    kind = _get(des, "entry_process", str, "poisson")
    entry = EntryProcess(kind=kind, rate=_get(des, "entry_rate", float, 1.0),
                         times=_get(des, "entry_times", tuple, ()))
    allocation = AllocationSpec(kind=_get(alloc, "kind", str, "randomized_play_the_winner"),
                                p=_get(alloc, "p", float, 0.5),
                                initial_balls=_get(alloc, "initial_balls", int, 1),
                                balls_added=_get(alloc, "balls_added", int, 1),
                                response_window=_get(alloc, "response_window", float, 1.0),
                                success_rule=_get(alloc, "success_rule", str, "survival"))
    seed = _get(des, "seed", int, 0)
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ValidationError(SEED_ENV, "must be an integer") from None
    n = _get(des, "n", int, required=True)
    planned = _get(des, "planned_information", float, None)
    if planned is not None and not planned > 0:
        raise ValidationError("planned_information", "must be > 0")
    design = DesignConfig(n=n, hazard=hazard, beta0=_get(des, "beta0", tuple, (0.0,)), entry_process=entry,
                          allocation=allocation, planned_information=planned,
                          v_bar=_get(des, "v_bar", float, 1.0), seed=seed,
                          covariate_bound=_get(des, "covariate_bound", float, 10.0),
                          switch_time=_get(des, "switch_time", float, None))

    if "v_grid" in mon:
        v_grid = _get(mon, "v_grid", tuple)
    else:
        looks = _get(mon, "looks", int, 3)
        if looks < 1:
            raise ValidationError("looks", "must be >= 1")
        v_grid = tuple(design.v_bar * (k + 1) / looks for k in range(looks))
    if any(v > design.v_bar for v in v_grid):
        raise ValidationError("v_grid", "fractions must not exceed v_bar")
    try:
        plan = MonitoringPlan(v_grid, alpha=_get(mon, "alpha", float, 0.05),
                              spending=_get(mon, "spending", str, "obrien_fleming_type"),
                              sidedness=_get(mon, "sidedness", str, "two"),
                              nodes=_get(mon, "nodes", int, 4001))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError("monitoring", str(exc)) from None

    monitor = _get(val, "monitor", bool, False)
    options = mc_validate.ValidationOptions(
        v_grid=_get(val, "v_grid", tuple, (0.25, 0.5, 0.75, 1.0)) if design.dim == 1 else (),
        t_grid=_get(val, "t_grid", tuple, ()), theta_grid=_get(val, "theta_grid", tuple, ()),
        estimate_fractions=_get(val, "estimate_fractions", tuple, ()),
        final_estimate=_get(val, "final_estimate", bool, False),
        plan=plan if monitor else None, oracle_checks=_get(val, "oracle_checks", int, 0))
    replicates = _get(val, "replicates", int, 500)
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    settings = ValidationSettings(replicates, options, monitor)
    return RunConfig(design, plan, settings, hashlib.sha256(text.encode()).hexdigest())


# trial CSV ----------------------------------------------------------------

def _path_text(path: CovariatePath, k: int) -> str:
    return ";".join(f"{float(w)!r}:{float(v)!r}" for w, v in zip(path.jump_times, path.values[:, k]))


def trial_to_csv(data: TrialData) -> str:
    """One row per subject; covariate ``k`` is written as ``w:value;w:value``."""
    buf = io.StringIO()
    buf.write(f"# horizon={float(data.horizon)!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "entry_time", "observed_time", "event_indicator", "arm",
                *[f"z{k}" for k in range(data.dim)]])
    for i, s in enumerate(data.subjects):
        w.writerow([i, repr(float(s.entry_time)), repr(float(s.observed_time)), int(s.event_indicator),
                    int(s.arm), *[_path_text(s.covariates, k) for k in range(data.dim)]])
    return buf.getvalue()


def trial_from_csv(text: str) -> TrialData:
    """Inverse of :func:`trial_to_csv`.

    Raises:
        ParseError: malformed line (1-based line number).
    """
    lines = text.splitlines()
    horizon = math.inf
    start = 0
    if lines and lines[0].startswith("#"):
        m = re.fullmatch(r"#\s*horizon=(\S+)", lines[0].strip())
        try:
            horizon = float(m.group(1)) if m else None
        except ValueError:
            horizon = None
        if horizon is None:
            raise ParseError(1, "expected '# horizon=<float>'")
        start = 1
    rows = list(csv.reader(lines[start:]))
    if not rows:
        raise ParseError(start + 1, "missing header")
    header = rows[0]
    fixed = ["subject_id", "entry_time", "observed_time", "event_indicator", "arm"]
    if header[:5] != fixed or len(header) < 6:
        raise ParseError(start + 1, f"header must start with {','.join(fixed)} and list z0..")
    subjects = []
    for ln, row in enumerate(rows[1:], start=start + 2):
        if len(row) != len(header):
            raise ParseError(ln, f"expected {len(header)} fields, got {len(row)}")
        try:
            cols = []
            for cell in row[5:]:
                pairs = [p.split(":") for p in cell.split(";")]
                cols.append(([float(a) for a, _ in pairs], [float(b) for _, b in pairs]))
            jumps = cols[0][0]
            if any(c[0] != jumps for c in cols):
                raise ValueError("covariate columns disagree on jump times")
            path = CovariatePath(jumps, np.array([c[1] for c in cols]).T)
            subjects.append(Subject(float(row[1]), path, float(row[2]), int(row[3]), int(row[4])))
        except ValidationError as exc:
            raise ParseError(ln, str(exc)) from None
        except ValueError as exc:
            raise ParseError(ln, str(exc)) from None
    try:
        return TrialData(tuple(subjects), horizon=horizon)
    except ValidationError as exc:
        raise ParseError(0, str(exc)) from None


def allocation_log_to_csv(log) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "entry_time", "urn_arm0", "urn_arm1", "arm", "uniform", "responses_used",
                "last_info_time"])
    for r in log:
        w.writerow([r.subject_id, repr(r.entry_time), r.urn[0], r.urn[1], r.arm, repr(r.uniform),
                    r.responses_used, repr(float(r.last_info_time))])
    return buf.getvalue()


# run manifest --------------------------------------------------------------

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


class RunManifest:
    """``manifest.json`` in the output directory; rewritten atomically on every update."""

    def __init__(self, out: Path, command: str, seed, config_hash: str):
        self.out = out
        self.data = {"tool": "adaptsurv", "version": __version__, "command": command, "root_seed": seed,
                     "config_hash": config_hash, "started": _timestamp(), "finished": None,
                     "status": "running", "outputs": []}
        self._flush()

    def _flush(self):
        write_atomic(self.out / "manifest.json", json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def add(self, name: str, text: str):
        write_atomic(self.out / name, text)
        self.data["outputs"].append({"file": name, "bytes": len(text.encode()),
                                     "sha256": hashlib.sha256(text.encode()).hexdigest()})

    def finish(self, status: str = "ok"):
        self.data["finished"] = _timestamp()
        self.data["status"] = status
        self._flush()


# subcommands -------------------------------------------------------------

def _read_config(path):
    text = Path(path).read_text()
    return parse_config(text), text


def _cmd_simulate(args):
    cfg, _ = _read_config(args.config)
    man = RunManifest(Path(args.out), "simulate", cfg.design.seed, cfg.text_hash)
    out = simulate_trial(cfg.design, args.replicate)
    man.add("trial.csv", trial_to_csv(out.trial))
    man.add("allocation_log.csv", allocation_log_to_csv(out.allocation_log))
    man.finish()


def _load_trial(path):
    return trial_from_csv(Path(path).read_text())


def _dump(obj) -> str:
    return json.dumps(mc_validate._clean(obj), indent=2, sort_keys=True) + "\n"


def _cmd_score(args):
    data = _load_trial(args.trial)
    t = args.t if args.t is not None else data.horizon
    man = RunManifest(Path(args.out), "score", None, hashlib.sha256(Path(args.trial).read_bytes()).hexdigest())
    beta = args.beta if args.beta else [0.0] * data.dim
    ev = cox_engine.score(data, beta, t, args.theta, args.variant)
    man.add("score.json", _dump(ev.to_dict()))
    man.finish()


def _cmd_estimate(args):
    data = _load_trial(args.trial)
    man = RunManifest(Path(args.out), "estimate", None, hashlib.sha256(Path(args.trial).read_bytes()).hexdigest())
    if args.fraction is not None:
        res = solve_mple_at_fraction(data, args.fraction, args.planned_information, variant=args.variant)
    else:
        res = solve_mple(data, args.t, args.theta, variant=args.variant)
    man.add("estimate.json", _dump(res.to_dict()))
    man.finish()


def _cmd_monitor(args):
    cfg, _ = _read_config(args.config)
    data = _load_trial(args.trial)
    man = RunManifest(Path(args.out), "monitor", cfg.design.seed, cfg.text_hash)
    Vn = cfg.design.planned_information
    null = cfg.design.beta0[0] if args.null_beta is None else args.null_beta
    decisions = monitor_trial(data, cfg.plan, null, Vn)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["look", "v", "sigma_hat", "z", "boundary", "action"])
    for d in decisions:
        w.writerow([d.look_index, repr(d.v), repr(d.sigma_hat), repr(d.z_statistic), repr(d.boundary), d.action])
    man.add("monitoring.csv", buf.getvalue())
    man.add("bhat.csv", bhat_path(data, null, cfg.plan.v_grid, Vn).to_csv())
    man.finish()


def boundaries_csv(alpha: float, looks: int, spending: str, sided: str, nodes: int = 4001) -> str:
    v = [(k + 1) / looks for k in range(looks)]
    c = compute_boundaries(v, alpha, spending, sided, nodes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "v", "alpha_spent", "c_k"])
    for k, (vk, ck) in enumerate(zip(v, c)):
        w.writerow([k + 1, repr(vk), repr(spending_value(spending, alpha, vk)), repr(float(ck))])
    return buf.getvalue()


def _cmd_boundaries(args):
    text = boundaries_csv(args.alpha, args.looks, args.spending, args.sided, args.nodes)
    if args.out:
        key = f"{args.alpha!r}|{args.looks}|{args.spending}|{args.sided}|{args.nodes}"
        man = RunManifest(Path(args.out), "boundaries", None, hashlib.sha256(key.encode()).hexdigest())
        man.add("boundaries.csv", text)
        man.finish()
    else:
        sys.stdout.write(text)


def _cmd_validate(args):
    cfg, _ = _read_config(args.config)
    R = args.replicates if args.replicates is not None else cfg.validation.replicates
    man = RunManifest(Path(args.out), "validate", cfg.design.seed, cfg.text_hash)
    opts = cfg.validation.options
    rs = mc_validate.run_replicates(cfg.design, R, opts, args.threads)
    rep = mc_validate.DiagnosticsReport(R=R, oracle_max_error=mc_validate._oracle_max(rs))
    if R < mc_validate.MIN_DIAGNOSTIC_REPLICATES:
        rep.notes.append(f"Brownian and field diagnostics skipped: {R} < "
                         f"{mc_validate.MIN_DIAGNOSTIC_REPLICATES} replicates")
    else:
        if opts.v_grid and cfg.design.dim == 1:
            rep.merge(mc_validate.brownian_diagnostics(rs))
        if opts.grid_points():
            rep.merge(mc_validate.field_diagnostics(rs))
    if opts.final_estimate or opts.estimate_fractions:
        rep.merge(mc_validate.estimation_diagnostics(rs))
    if opts.plan is not None:
        rej = [r.rejected for r in rs.per_replicate if r.rejected is not None]
        rep.type1_rate = float(np.mean(rej)) if rej else None
    rep.failure_rate = rs.failure_rate()
    man.add("diagnostics.json", rep.to_json() + "\n")
    man.add("replicates.csv", mc_validate.replicates_to_csv(rs))
    failed = rep.failure_rate > mc_validate.MAX_FAILURE_RATE
    man.finish("failed" if failed else "ok")
    if failed:
        raise RunFailed(f"failure rate {rep.failure_rate:.3f} exceeds {mc_validate.MAX_FAILURE_RATE}")


class RunFailed(AdaptSurvError):
    code = "E_RUN_FAILED"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptsurv", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one trial")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--replicate", type=int, default=0)
    s.set_defaults(func=_cmd_simulate)

    for name, func in (("score", _cmd_score), ("estimate", _cmd_estimate)):
        s = sub.add_parser(name)
        s.add_argument("--trial", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--t", type=float)
        s.add_argument("--theta", type=float)
        s.add_argument("--variant", choices=cox_engine.VARIANTS,
                       default=cox_engine.FULL if name == "score" else cox_engine.SUBSAMPLE)
        if name == "score":
            s.add_argument("--beta", type=float, nargs="+")
        else:
            s.add_argument("--fraction", type=float, help="estimate at this information fraction")
            s.add_argument("--planned-information", type=float)
        s.set_defaults(func=func)

    s = sub.add_parser("monitor", help="run the planned looks on a trial CSV")
    s.add_argument("--trial", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--null-beta", type=float)
    s.set_defaults(func=_cmd_monitor)

    s = sub.add_parser("boundaries", help="alpha-spending critical values as CSV")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--looks", type=int, default=3)
    s.add_argument("--spending", choices=("obrien_fleming_type", "pocock_type", "linear"),
                   default="obrien_fleming_type")
    s.add_argument("--sided", choices=("one", "two"), default="two")
    s.add_argument("--nodes", type=int, default=4001)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_boundaries)

    s = sub.add_parser("validate", help="Monte Carlo diagnostics")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--replicates", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", 1) < 1:
        print("error[E_USAGE]: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except AdaptSurvError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        code = "E_IO" if isinstance(exc, OSError) else "E_VALUE"
        print(f"error[{code}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
