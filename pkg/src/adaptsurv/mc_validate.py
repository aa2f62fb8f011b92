"""Monte Carlo harness: oracles, compensated scores and distributional diagnostics.

``oracle_score`` is a deliberately naive double loop over events and subjects
that shares no code with :mod:`adaptsurv.cox_engine`. ``compensated_score``
subtracts the known-hazard compensator from the event sum so that its
replicate mean is zero under the true ``beta``; it is only available in
simulation. The remaining functions run replicates and reduce them to the
moment, KS and covariance diagnostics reported in :class:`DiagnosticsReport`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import cox_engine
from .cox_engine import FULL, SUBSAMPLE
from .errors import AdaptSurvError, InsufficientReplicates
from .estimator import solve_mple, solve_mple_at_fraction
from .info_time import bhat_path, information_path
from .seq_monitor import MonitoringPlan, monitor_trial
from .sim_engine import simulate_trial
from .trial_core import DesignConfig, HazardSpec, TrialData, covariate_at

MIN_DIAGNOSTIC_REPLICATES = 500
MAX_FAILURE_RATE = 0.02


def oracle_score(data: TrialData, beta, t: float, theta=None, variant: str = FULL) -> np.ndarray:
    """Score by direct enumeration; same contract as ``cox_engine.score``."""
    if variant not in (FULL, SUBSAMPLE):
        raise ValueError(f"unknown variant {variant!r}")
    theta = t if theta is None else theta
    if theta > t:
        raise ValueError("theta must not exceed t")
    if t > data.horizon:
        raise ValueError("t must not exceed the horizon")
    beta = [float(b) for b in np.atleast_1d(beta)]
    d = data.dim
    total = [0.0] * d
    for s_i in data.subjects:
        if s_i.event_indicator != 1 or s_i.entry_time > theta:
            continue
        if s_i.entry_time + s_i.observed_time > t:
            continue
        w = s_i.observed_time
        den = 0.0
        num = [0.0] * d
        for s_j in data.subjects:
            if s_j.entry_time + w > t or s_j.observed_time < w:
                continue
            if variant == SUBSAMPLE and s_j.entry_time > theta:
                continue
            z = [float(x) for x in covariate_at(s_j.covariates, w)]
            r = math.exp(sum(b * x for b, x in zip(beta, z)))
            den += r
            num = [a + r * x for a, x in zip(num, z)]
        z_i = covariate_at(s_i.covariates, w)
        total = [tot + float(z_i[a]) - num[a] / den for a, tot in enumerate(total)]
    return np.array(total)


def _full_riskset_means(data: TrialData, beta, t: float, ws: np.ndarray):
    """Covariates, risk mask and risk-weighted means at each time-on-study in ``ws``."""
    z = data.covariates_at(ws)  # (m, n, d)
    risk = (data.entry[None, :] + ws[:, None] <= t) & (data.observed[None, :] >= ws[:, None])
    lin = z @ beta
    shift = np.where(risk, lin, -np.inf).max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    wt = np.where(risk, np.exp(lin - shift[:, None]), 0.0)
    g0 = wt.sum(axis=1)
    mean = np.einsum("mj,mja->ma", wt, z) / np.where(g0 > 0, g0, 1.0)[:, None]
    return z, risk, mean


@dataclass(frozen=True)
class CompensatedParts:
    """Pieces of ``U~(beta; t, theta)`` at a fixed ``t``, reusable across ``theta``.

    ``event_resid[k]`` is ``Z_i - Zbar(t, T~_i)`` for the ``k``-th event completed
    by ``t``; ``compensator[j]`` is subject ``j``'s integrated
    ``(Z_j - Zbar) exp(beta'Z_j) lambda0`` over its at-risk time seen by ``t``.
    """

    event_entry: np.ndarray
    event_resid: np.ndarray
    entry: np.ndarray
    compensator: np.ndarray

    def at(self, theta: float) -> np.ndarray:
        return (self.event_resid[self.event_entry <= theta].sum(axis=0)
                - self.compensator[self.entry <= theta].sum(axis=0))


def compensated_parts(data: TrialData, beta, t: float, hazard: HazardSpec) -> CompensatedParts:
    d = data.dim
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    n = data.n
    if n == 0:
        return CompensatedParts(np.zeros(0), np.zeros((0, d)), np.zeros(0), np.zeros((0, d)))
    idx = np.flatnonzero(data.event & (data.completion <= t))
    if len(idx):
        ws = data.observed[idx]
        z, _, mean = _full_riskset_means(data, beta, t, ws)
        resid = z[np.arange(len(idx)), idx] - mean
    else:
        resid = np.zeros((0, d))

    entered = data.entry <= t
    comp = np.zeros((n, d))
    if entered.any():
        reach = np.minimum(data.observed, t - data.entry)[entered]
        w_max = float(reach.max())
        jumps = np.concatenate([s.covariates.jump_times for s in data.subjects])
        bps = np.concatenate([[0.0, w_max], reach, data.observed, jumps, hazard.cut_points])
        bps = np.unique(bps[(bps >= 0) & (bps <= w_max)])
        if len(bps) > 1:
            mids = (bps[:-1] + bps[1:]) / 2
            lens = np.diff(bps)
            z, risk, mean = _full_riskset_means(data, beta, t, mids)
            rate = np.where(risk, np.exp(z @ beta), 0.0) * (lens * hazard.rate_at(mids))[:, None]
            comp = np.einsum("mj,mja->ja", rate, z - mean[:, None, :])
    return CompensatedParts(data.entry[idx], resid, data.entry, comp)


def compensated_score(data: TrialData, beta, t: float, theta=None, lambda0: Optional[HazardSpec] = None):
    """Full-risk-set score minus its compensator under the known baseline hazard.

    The compensator is integrated exactly: between consecutive breakpoints
    (entries crossing ``t - w``, exits at ``T~_j``, covariate jumps and hazard
    cuts) every integrand is constant, so it is evaluated at segment midpoints.
    At ``theta = t`` the compensator sums to zero and the ordinary score
    remains.
    """
    theta = t if theta is None else theta
    hazard = lambda0 if lambda0 is not None else data.baseline_hazard
    if hazard is None:
        raise ValueError("compensated_score needs the baseline hazard")
    return compensated_parts(data, beta, t, hazard).at(theta)


@dataclass(frozen=True)
class ValidationOptions:
    """What each replicate computes. Empty grids switch a statistic off."""

    v_grid: tuple = (0.25, 0.5, 0.75, 1.0)
    t_grid: tuple = ()
    theta_grid: tuple = ()
    estimate_fractions: tuple = ()
    final_estimate: bool = False
    plan: Optional[MonitoringPlan] = None
    oracle_checks: int = 0

    def grid_points(self) -> list:
        return [(t, th) for t in self.t_grid for th in self.theta_grid if th <= t]


@dataclass(frozen=True)
class ReplicateRecord:
    index: int
    seed: tuple  # (root seed, replicate)
    bhat: np.ndarray
    sigma_hat: np.ndarray
    field: np.ndarray  # (P, d): U~ / sqrt(n) at the (t, theta) grid points
    beta_v: np.ndarray  # sqrt(V_n) v (beta^(v) - beta0) per estimate fraction
    beta_hat: np.ndarray
    ci_95: np.ndarray
    covered: Optional[bool]
    actions: tuple
    rejected: Optional[bool]
    oracle_error: float = math.nan
    failures: tuple = ()  # (stage, error code)

    @property
    def failed(self) -> bool:
        return bool(self.failures)


@dataclass
class ReplicateSet:
    config: DesignConfig
    R: int
    options: ValidationOptions
    per_replicate: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.per_replicate) != self.R:
            raise ValueError("R must equal the number of records")

    def failure_rate(self, stage: Optional[str] = None) -> float:
        bad = sum(any(stage is None or s == stage for s, _ in r.failures) for r in self.per_replicate)
        return bad / self.R

    def stacked(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.per_replicate])


def _replicate(config: DesignConfig, options: ValidationOptions, r: int) -> ReplicateRecord:
    failures = []
    beta0 = np.asarray(config.beta0)
    V = len(options.v_grid)
    bhat = np.full(V, np.nan)
    sig = np.full(V, np.nan)
    points = options.grid_points()
    fld = np.full((len(points), config.dim), np.nan)
    beta_v = np.full(len(options.estimate_fractions), np.nan)
    beta_hat = np.full(config.dim, np.nan)
    ci = np.full(2, np.nan)
    covered, actions, rejected, oracle_err = None, (), None, math.nan
    try:
        data = simulate_trial(config, r).trial
    except AdaptSurvError as exc:
        return ReplicateRecord(r, (config.seed, r), bhat, sig, fld, beta_v, beta_hat, ci, None, (), None,
                               math.nan, (("simulate", exc.code),))
    Vn = float(config.planned_information)
    path = None
    if config.dim == 1 and (V or options.plan is not None):
        path = information_path(data, beta0, Vn)
    if V and path is not None:
        rp = bhat_path(data, beta0, options.v_grid, Vn, path)
        bhat, sig = rp.bhat, rp.sigma_hat
    if points:
        parts = {t: compensated_parts(data, beta0, t, config.hazard) for t in options.t_grid}
        fld = np.array([parts[t].at(th) for t, th in points]) / math.sqrt(config.n)
    for k, v in enumerate(options.estimate_fractions):
        try:
            res = solve_mple_at_fraction(data, v, Vn, init=beta0, reference_beta=beta0)
            beta_v[k] = math.sqrt(Vn) * v * (res.beta_hat[0] - beta0[0])
        except AdaptSurvError as exc:
            failures.append((f"estimate_v{v}", exc.code))
    if options.final_estimate:
        try:
            res = solve_mple(data, init_beta=beta0)
            beta_hat = res.beta_hat
            ci = res.ci_95[0]
            covered = bool(ci[0] <= beta0[0] <= ci[1])
        except AdaptSurvError as exc:
            failures.append(("final_estimate", exc.code))
    if options.plan is not None and path is not None:
        dec = monitor_trial(data, options.plan, float(beta0[0]), Vn)
        actions = tuple(x.action for x in dec)
        rejected = "reject" in actions
    if r < options.oracle_checks:
        oracle_err = _oracle_error(data, beta0, options)
    return ReplicateRecord(r, (config.seed, r), bhat, sig, fld, beta_v, beta_hat, ci, covered, actions,
                           rejected, oracle_err, tuple(failures))


def _oracle_error(data, beta, options):
    pts = options.grid_points() or [(data.horizon, data.horizon)]
    t, th = pts[-1]
    worst = 0.0
    for variant in (FULL, SUBSAMPLE):
        fast = cox_engine.score(data, beta, t, th, variant).score
        worst = max(worst, float(np.max(np.abs(fast - oracle_score(data, beta, t, th, variant)))))
    return worst


def _run_chunk(args):
    config, options, indices = args
    return [_replicate(config, options, r) for r in indices]


def run_replicates(config: DesignConfig, R: int, options: ValidationOptions = ValidationOptions(),
                   threads: int = 1) -> ReplicateSet:
    """Simulate and summarize ``R`` replicates at ``beta = beta0``.

    Replicate ``r`` draws only from streams keyed by ``(seed, r)``, so results
    do not depend on ``threads`` or on execution order. Domain errors inside a
    replicate are recorded on its record instead of aborting the run.
    """
    if int(R) != R or R < 2:
        raise ValueError("R must be an integer >= 2")
    if threads > 1:
        chunks = [(config, options, range(a, R, threads)) for a in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = [rec for part in pool.map(_run_chunk, chunks) for rec in part]
        records.sort(key=lambda rec: rec.index)
    else:
        records = _run_chunk((config, options, range(R)))
    return ReplicateSet(config, int(R), options, records)


@dataclass
class DiagnosticsReport:
    """Summary statistics of a replicate set; every field is JSON-serializable."""

    R: int = 0
    v_grid: list = field(default_factory=list)
    reached: list = field(default_factory=list)
    bhat_means: list = field(default_factory=list)
    bhat_mean_tolerance: list = field(default_factory=list)
    bhat_vars: list = field(default_factory=list)
    bhat_var_se: list = field(default_factory=list)
    increment_covariances: list = field(default_factory=list)  # [k, l, cov, se]
    ks_statistics: list = field(default_factory=list)
    grid_points: list = field(default_factory=list)
    field_means: list = field(default_factory=list)
    field_mean_se: list = field(default_factory=list)
    field_covariance_matrix: list = field(default_factory=list)
    minmatch_errors: list = field(default_factory=list)  # [a, b, discrepancy, jackknife se]
    type1_rate: Optional[float] = None
    coverage_rate: Optional[float] = None
    failure_rate: Optional[float] = None
    beta_v_vars: list = field(default_factory=list)
    beta_v_var_se: list = field(default_factory=list)
    oracle_max_error: Optional[float] = None
    notes: list = field(default_factory=list)

    def merge(self, other: "DiagnosticsReport") -> "DiagnosticsReport":
        blank = DiagnosticsReport()
        for k, v in asdict(other).items():
            if k == "notes":
                self.notes.extend(n for n in v if n not in self.notes)
            elif v != getattr(blank, k):
                setattr(self, k, v)
        return self

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), indent=2, sort_keys=True, allow_nan=False)


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _var_se(x: np.ndarray) -> float:
    """Standard error of the sample variance from the fourth central moment."""
    c = x - x.mean()
    return float(math.sqrt(max(np.mean(c**4) - np.mean(c**2) ** 2, 0.0) / len(x)))


def _require_replicates(rs: ReplicateSet):
    if rs.R < MIN_DIAGNOSTIC_REPLICATES:
        raise InsufficientReplicates(f"{rs.R} replicates; diagnostics need at least {MIN_DIAGNOSTIC_REPLICATES}")


def _oracle_max(rs: ReplicateSet):
    errs = [r.oracle_error for r in rs.per_replicate if not math.isnan(r.oracle_error)]
    return max(errs) if errs else None


def brownian_diagnostics(rs: ReplicateSet, v_grid=None) -> DiagnosticsReport:
    """Moments, disjoint-increment covariances and KS statistics of ``B^(v)``.

    Replicates where a fraction was not reached are dropped from that
    fraction's statistics; increment covariances use only replicates that
    reached both ends.
    """
    _require_replicates(rs)
    if rs.config.dim != 1:
        raise ValueError("Brownian diagnostics need a one-dimensional covariate")
    grid = list(rs.options.v_grid)
    cols = list(range(len(grid))) if v_grid is None else [grid.index(v) for v in v_grid]
    B = rs.stacked("bhat")[:, cols]
    vs = [grid[c] for c in cols]
    rep = DiagnosticsReport(R=rs.R, v_grid=vs, oracle_max_error=_oracle_max(rs))
    for k, v in enumerate(vs):
        x = B[~np.isnan(B[:, k]), k]
        rep.reached.append(int(len(x)))
        if len(x) < 2:
            rep.bhat_means.append(math.nan)
            rep.bhat_mean_tolerance.append(math.nan)
            rep.bhat_vars.append(math.nan)
            rep.bhat_var_se.append(math.nan)
            rep.ks_statistics.append(math.nan)
            continue
        rep.bhat_means.append(float(x.mean()))
        rep.bhat_mean_tolerance.append(3 * math.sqrt(v / len(x)))
        rep.bhat_vars.append(float(x.var(ddof=1)))
        rep.bhat_var_se.append(_var_se(x))
        rep.ks_statistics.append(float(stats.kstest(x / math.sqrt(v), "norm").statistic))
    # increments over (0, v_1], (v_1, v_2], ...
    inc = np.diff(np.column_stack([np.zeros(len(B)), B]), axis=1)
    for k in range(len(vs)):
        for m in range(k + 1, len(vs)):
            ok = ~np.isnan(inc[:, k]) & ~np.isnan(inc[:, m])
            if ok.sum() < 2:
                continue
            a = inc[ok, k] - inc[ok, k].mean()
            b = inc[ok, m] - inc[ok, m].mean()
            prod = a * b
            rep.increment_covariances.append([k, m, float(prod.sum() / (len(a) - 1)),
                                              float(prod.std(ddof=1) / math.sqrt(len(a)))])
    if any(r == 0 for r in rep.reached):
        rep.notes.append("some information fractions were never reached")
    return rep


def _loo_covariances(X: np.ndarray) -> np.ndarray:
    """Leave-one-out sample covariance matrices, shape (R, P, P)."""
    R = len(X)
    S = X.sum(axis=0)
    SS = X.T @ X
    rest = S[None, :] - X  # (R, P)
    cross = SS[None] - X[:, :, None] * X[:, None, :]
    return (cross - rest[:, :, None] * rest[:, None, :] / (R - 1)) / (R - 2)


def field_diagnostics(rs: ReplicateSet, t_grid=None, theta_grid=None) -> DiagnosticsReport:
    """Martingale means and the min-match covariance property of ``U~ / sqrt(n)``.

    For grid points ``a, b`` the discrepancy is
    ``Cov(a, b) - Var(a ^ b)`` where ``a ^ b`` is the componentwise minimum
    ``(t_a ^ t_b, theta_a ^ theta_b)``; its standard error is the jackknife
    over replicates. Pairs whose minimum is off the grid are skipped.
    """
    _require_replicates(rs)
    pts = rs.options.grid_points()
    if t_grid is not None or theta_grid is not None:
        keep = [i for i, (t, th) in enumerate(pts)
                if (t_grid is None or t in t_grid) and (theta_grid is None or th in theta_grid)]
    else:
        keep = list(range(len(pts)))
    F = rs.stacked("field")[:, keep, 0]
    F = F[~np.isnan(F).any(axis=1)]
    pts = [pts[i] for i in keep]
    rep = DiagnosticsReport(R=rs.R, grid_points=[list(p) for p in pts], oracle_max_error=_oracle_max(rs))
    if rs.config.planned_information != rs.config.n:
        rep.notes.append("field normalized by sqrt(n) while planned information differs from n")
    R = len(F)
    rep.field_means = F.mean(axis=0).tolist()
    rep.field_mean_se = (F.std(axis=0, ddof=1) / math.sqrt(R)).tolist()
    C = np.cov(F, rowvar=False, ddof=1).reshape(len(pts), len(pts))
    rep.field_covariance_matrix = C.tolist()
    loo = _loo_covariances(F)
    where = {p: i for i, p in enumerate(pts)}
    for a in range(len(pts)):
        for b in range(a, len(pts)):
            m = where.get((min(pts[a][0], pts[b][0]), min(pts[a][1], pts[b][1])))
            if m is None:
                continue
            disc = C[a, b] - C[m, m]
            jk = loo[:, a, b] - loo[:, m, m]
            se = math.sqrt((R - 1) / R * np.sum((jk - jk.mean()) ** 2))
            rep.minmatch_errors.append([a, b, float(disc), float(se)])
    return rep


def estimation_diagnostics(rs: ReplicateSet) -> DiagnosticsReport:
    """Coverage of the end-of-trial 95% interval and variance of the information-time estimator."""
    rep = DiagnosticsReport(R=rs.R, oracle_max_error=_oracle_max(rs))
    rep.failure_rate = rs.failure_rate()
    if rs.options.final_estimate:
        cov = [r.covered for r in rs.per_replicate if r.covered is not None]
        rep.coverage_rate = float(np.mean(cov)) if cov else None
    if rs.options.estimate_fractions:
        X = rs.stacked("beta_v")
        rep.v_grid = list(rs.options.estimate_fractions)
        for k in range(X.shape[1]):
            x = X[~np.isnan(X[:, k]), k]
            rep.beta_v_vars.append(float(x.var(ddof=1)) if len(x) > 1 else math.nan)
            rep.beta_v_var_se.append(_var_se(x) if len(x) > 1 else math.nan)
    if rep.failure_rate > MAX_FAILURE_RATE:
        rep.notes.append(f"failure rate {rep.failure_rate:.3f} exceeds {MAX_FAILURE_RATE}: run fails")
    return rep


def type1_and_coverage(null_config: DesignConfig, plan: MonitoringPlan, R: int,
                       alt_config: Optional[DesignConfig] = None, R_alt: Optional[int] = None,
                       threads: int = 1) -> DiagnosticsReport:
    """Sequential rejection rate under the null and CI coverage under ``alt_config``."""
    R_alt = R if R_alt is None else R_alt
    if R < MIN_DIAGNOSTIC_REPLICATES or (alt_config is not None and R_alt < MIN_DIAGNOSTIC_REPLICATES):
        raise InsufficientReplicates(f"operating characteristics need at least {MIN_DIAGNOSTIC_REPLICATES} replicates")
    null = run_replicates(null_config, R, ValidationOptions(v_grid=(), plan=plan), threads)
    rej = [r.rejected for r in null.per_replicate if r.rejected is not None]
    rep = DiagnosticsReport(R=R, type1_rate=float(np.mean(rej)) if rej else None)
    rep.failure_rate = null.failure_rate()
    if alt_config is not None:
        alt = run_replicates(alt_config, R_alt, ValidationOptions(v_grid=(), final_estimate=True), threads)
        est = estimation_diagnostics(alt)
        rep.coverage_rate = est.coverage_rate
        rep.failure_rate = max(rep.failure_rate, est.failure_rate)
    if rep.failure_rate > MAX_FAILURE_RATE:
        rep.notes.append(f"failure rate {rep.failure_rate:.3f} exceeds {MAX_FAILURE_RATE}: run fails")
    return rep


def replicates_to_csv(rs: ReplicateSet) -> str:
    """Long form: one row per replicate and grid point (statistic, coordinates, value)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "statistic", "t", "theta_or_v", "value"])
    pts = rs.options.grid_points()
    for r in rs.per_replicate:
        for v, b in zip(rs.options.v_grid, r.bhat):
            w.writerow([r.index, "bhat", "", repr(float(v)), repr(float(b))])
        for (t, th), u in zip(pts, r.field[:, 0] if r.field.size else []):
            w.writerow([r.index, "field", repr(float(t)), repr(float(th)), repr(float(u))])
        for v, b in zip(rs.options.estimate_fractions, r.beta_v):
            w.writerow([r.index, "beta_v", "", repr(float(v)), repr(float(b))])
        if r.covered is not None:
            w.writerow([r.index, "covered", "", "", int(r.covered)])
        if r.rejected is not None:
            w.writerow([r.index, "rejected", "", "", int(r.rejected)])
        for stage, code in r.failures:
            w.writerow([r.index, "failure", "", stage, code])
    return buf.getvalue()


__all__ = [
    "CompensatedParts", "DiagnosticsReport", "ReplicateRecord", "ReplicateSet", "ValidationOptions",
    "brownian_diagnostics", "compensated_parts", "compensated_score", "estimation_diagnostics",
    "field_diagnostics", "oracle_score", "replicates_to_csv", "run_replicates", "type1_and_coverage",
]
