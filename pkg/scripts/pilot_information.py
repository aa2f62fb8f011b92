"""Distribution of the final observed information V^ for a design.

Used to pick ``planned_information`` so that every planned fraction is
reachable: choose V_n below the lower tail of the final V^.

    python scripts/pilot_information.py --n 200 --entry-rate 2 --replicates 300
"""

import argparse
import math

import numpy as np

from adaptsurv.info_time import information_path
from adaptsurv.sim_engine import simulate_trial
from adaptsurv.trial_core import AllocationSpec, DesignConfig, EntryProcess, HazardSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--beta0", type=float, default=0.0)
    ap.add_argument("--entry-rate", type=float, default=2.0)
    ap.add_argument("--hazard", type=float, default=0.1)
    ap.add_argument("--censor-rate", type=float, default=0.01)
    ap.add_argument("--horizon", type=float, default=150.0)
    ap.add_argument("--window", type=float, default=5.0)
    ap.add_argument("--replicates", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = DesignConfig(n=args.n, beta0=(args.beta0,),
                       hazard=HazardSpec(rates=(args.hazard,), censor_rate=args.censor_rate,
                                         admin_horizon=args.horizon),
                       entry_process=EntryProcess(rate=args.entry_rate),
                       allocation=AllocationSpec(response_window=args.window), seed=args.seed)
    finals, events = [], []
    for r in range(args.replicates):
        tr = simulate_trial(cfg, r).trial
        p = information_path(tr, args.beta0, 1.0)
        finals.append(p.vhat_at_events.max() if len(p.event_times) else 0.0)
        events.append(int(tr.event.sum()))
    finals = np.array(finals)
    print(f"mean events {np.mean(events):.1f}")
    for q in (0.1, 1, 5, 50):
        print(f"final V^ {q:>4}% quantile {np.percentile(finals, q):8.2f}")
    print(f"minimum {finals.min():.2f}; suggested planned_information <= {math.floor(0.9 * finals.min())}")


if __name__ == "__main__":
    main()
