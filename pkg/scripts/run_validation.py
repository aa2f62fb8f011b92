"""Monte Carlo experiments behind the acceptance criteria, written as JSON reports.

Runs the null design (martingale means, Brownian and field diagnostics), the
look-ahead negative control, the coverage design and the sequential type-I
error design. ``--scale`` shrinks every replicate count for quick looks.

    python scripts/run_validation.py --out results/ --threads 4
"""

import argparse
import math
import time
from pathlib import Path

import numpy as np

from adaptsurv.mc_validate import (
    DiagnosticsReport,
    ValidationOptions,
    brownian_diagnostics,
    estimation_diagnostics,
    field_diagnostics,
    replicates_to_csv,
    run_replicates,
)
from adaptsurv.seq_monitor import MonitoringPlan
from adaptsurv.trial_core import AllocationSpec, DesignConfig, EntryProcess, HazardSpec

HAZARD = HazardSpec(rates=(0.1,), censor_rate=0.01, admin_horizon=150.0)
RPW = AllocationSpec(response_window=5.0)
GRID = dict(t_grid=(60.0, 100.0, 140.0), theta_grid=(20.0, 40.0, 60.0))


def designs(seed):
    null = DesignConfig(n=200, hazard=HAZARD, entry_process=EntryProcess(rate=2.0), allocation=RPW,
                        planned_information=30.0, seed=seed)
    peek = DesignConfig(n=200, hazard=HAZARD, entry_process=EntryProcess(rate=2.0),
                        allocation=AllocationSpec(kind="peek_own_outcome"), planned_information=30.0, seed=seed + 1)
    alt = DesignConfig(n=400, beta0=(math.log(2),), hazard=HAZARD, entry_process=EntryProcess(rate=4.0),
                       allocation=RPW, planned_information=64.0, seed=seed + 2)
    return null, peek, alt


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--scale", type=float, default=1.0, help="multiply every replicate count")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    null, peek, alt = designs(args.seed)

    def R(base):
        return max(500, int(base * args.scale))

    def save(name, rep, rs=None):
        (args.out / f"{name}.json").write_text(rep.to_json() + "\n")
        if rs is not None:
            (args.out / f"{name}_replicates.csv").write_text(replicates_to_csv(rs))

    start = time.perf_counter()
    rs = run_replicates(null, R(2000), ValidationOptions(estimate_fractions=(0.5, 1.0), oracle_checks=2, **GRID),
                        args.threads)
    rep = brownian_diagnostics(rs).merge(field_diagnostics(rs)).merge(estimation_diagnostics(rs))
    save("null", rep, rs)
    ratio = np.abs(rep.field_means) / np.array(rep.field_mean_se)
    print(f"null: max |mean|/SE {ratio.max():.2f}, KS(v=1) {rep.ks_statistics[-1]:.4f}, "
          f"vars {np.round(rep.bhat_vars, 3).tolist()} [{time.perf_counter() - start:.0f}s]")

    start = time.perf_counter()
    rs = run_replicates(peek, R(5000), ValidationOptions(v_grid=(), **GRID), args.threads)
    rep = field_diagnostics(rs)
    save("negative_control", rep)
    ratio = np.abs(rep.field_means) / np.array(rep.field_mean_se)
    print(f"negative control: max |mean|/SE {ratio.max():.1f} [{time.perf_counter() - start:.0f}s]")

    start = time.perf_counter()
    rs = run_replicates(alt, R(2000), ValidationOptions(v_grid=(), final_estimate=True, estimate_fractions=(0.5, 1.0)),
                        args.threads)
    rep = estimation_diagnostics(rs)
    save("coverage", rep, rs)
    print(f"coverage: {rep.coverage_rate:.4f}, var at v=(0.5, 1): {np.round(rep.beta_v_vars, 4).tolist()} "
          f"[{time.perf_counter() - start:.0f}s]")

    start = time.perf_counter()
    plan = MonitoringPlan.equally_spaced(3, nodes=401)
    rs = run_replicates(null, R(5000), ValidationOptions(v_grid=(), plan=plan), args.threads)
    rate = float(np.mean([r.rejected for r in rs.per_replicate]))
    save("type1", DiagnosticsReport(R=rs.R, type1_rate=rate, failure_rate=rs.failure_rate()))
    print(f"type I error (3 OBF looks): {rate:.4f} [{time.perf_counter() - start:.0f}s]")


if __name__ == "__main__":
    main()
