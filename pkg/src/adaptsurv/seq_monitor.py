"""Alpha-spending boundaries and sequential monitoring of the rescaled score.

Boundaries come from the usual first-passage recursion for a Brownian motion
observed at information fractions ``v_1 < ... < v_K``: the sub-density of
``B(v_k)`` on the continuation region is carried forward on a Simpson grid and
each ``c_k`` is solved so that the crossing probability at look ``k`` equals
that look's share of the spending function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import QuadratureFailure
from .info_time import information_path
from .trial_core import TrialData

SPENDING_FUNCTIONS = ("obrien_fleming_type", "pocock_type", "linear")
GRID_NODES = 4001
GRID_SPAN = 8.0
MASS_TOLERANCE = 1e-6


def spending_value(spending: str, alpha: float, v: float) -> float:
    """Cumulative type-I error spent by information fraction ``v`` (clipped to [0, 1])."""
    v = min(max(float(v), 0.0), 1.0)
    if spending == "linear":
        return alpha * v
    if spending == "pocock_type":
        return alpha * math.log(1.0 + (math.e - 1.0) * v)
    if spending == "obrien_fleming_type":
        if v == 0.0:
            return 0.0
        return float(2.0 * norm.sf(norm.isf(alpha / 2.0) / math.sqrt(v)))
    raise ValueError(f"unknown spending function {spending!r}")


def _simpson_weights(n: int, h: float) -> np.ndarray:
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _grid(lo: float, hi: float, nodes: int):
    x = np.linspace(lo, hi, nodes)
    return x, _simpson_weights(nodes, (hi - lo) / (nodes - 1))


def _crossing(mass, x, c_scaled, sd, two_sided):
    p = norm.sf((c_scaled - x) / sd) @ mass
    if two_sided:
        p += norm.cdf((-c_scaled - x) / sd) @ mass
    return float(p)


def _convolve(mass, x, s, sd, block=512):
    out = np.empty(len(s))
    for a in range(0, len(s), block):
        diff = (s[a:a + block, None] - x[None, :]) / sd
        out[a:a + block] = np.exp(-0.5 * diff * diff) @ mass
    return out / (sd * math.sqrt(2.0 * math.pi))


def compute_boundaries(v_grid, alpha: float, spending: str = "obrien_fleming_type", sided: str = "two",
                       nodes: int = GRID_NODES, span: float = GRID_SPAN,
                       spend_at=None) -> np.ndarray:
    """Critical values ``c_k`` on the standardized scale ``B(v_k) / sqrt(v_k)``.

    ``spend_at`` overrides the fractions at which the spending function is
    evaluated (defaults to ``v_grid``). A look whose spending increment is zero
    gets ``inf``.

    Raises:
        QuadratureFailure: carried mass plus spent alpha drifts from 1 by more
            than ``1e-6``.
    """
    v = np.asarray(v_grid, dtype=float)
    if v.ndim != 1 or len(v) == 0 or v[0] <= 0 or np.any(np.diff(v) <= 0):
        raise ValueError("v_grid must be positive and strictly increasing")
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    if nodes % 2 == 0 or nodes < 3:
        raise ValueError("nodes must be odd for Simpson's rule")
    spend_at = v if spend_at is None else np.asarray(spend_at, dtype=float)
    two = sided == "two"
    cum = np.array([spending_value(spending, alpha, s) for s in spend_at])
    inc = np.diff(np.concatenate([[0.0], cum]))
    bounds = np.empty(len(v))

    # look 1 is analytic
    share = inc[0] / 2 if two else inc[0]
    bounds[0] = norm.isf(share) if share > 0 else math.inf
    spent = 2 * norm.sf(bounds[0]) if two else norm.sf(bounds[0])
    sd1 = math.sqrt(v[0])
    hi = min(bounds[0], span) * sd1
    x, wts = _grid(-hi if two else -span * sd1, hi, nodes)
    mass = wts * norm.pdf(x / sd1) / sd1

    for k in range(1, len(v)):
        sd = math.sqrt(v[k] - v[k - 1])
        root_v = math.sqrt(v[k])
        if inc[k] <= 0:
            bounds[k] = math.inf
        else:
            total = _crossing(mass, x, 0.0, sd, two) if two else float(mass.sum())
            if inc[k] >= total:
                bounds[k] = 0.0 if two else -math.inf
            else:
                f = lambda c: _crossing(mass, x, c * root_v, sd, two) - inc[k]  # noqa: E731
                lo_c = 0.0 if two else -span
                bounds[k] = brentq(f, lo_c, 2 * span + 10, xtol=1e-12, rtol=1e-14, maxiter=200)
        c = bounds[k]
        spent += _crossing(mass, x, c * root_v, sd, two) if np.isfinite(c) else 0.0
        if k == len(v) - 1:
            break
        hi = min(c, span) * root_v
        s, wts = _grid(-hi if two else -span * root_v, hi, nodes)
        mass = wts * _convolve(mass, x, s, sd)
        x = s
        if abs(mass.sum() + spent - 1.0) > MASS_TOLERANCE:
            raise QuadratureFailure(f"probability mass off by {abs(mass.sum() + spent - 1.0):.2e} at look {k + 1}")
    if abs(spent - cum[-1]) > MASS_TOLERANCE:
        raise QuadratureFailure(f"spent {spent!r}, expected {cum[-1]!r}")
    return bounds


@dataclass(frozen=True)
class MonitoringPlan:
    v_grid: tuple
    alpha: float = 0.05
    spending: str = "obrien_fleming_type"
    sidedness: str = "two"
    nodes: int = GRID_NODES
    boundaries: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = tuple(float(x) for x in self.v_grid)
        object.__setattr__(self, "v_grid", v)
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.spending not in SPENDING_FUNCTIONS:
            raise ValueError(f"unknown spending function {self.spending!r}")
        if any(not 0 < x <= 1 for x in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("v_grid must be strictly increasing inside (0, 1]")
        if not self.boundaries:
            object.__setattr__(self, "boundaries", tuple(
                compute_boundaries(v, self.alpha, self.spending, self.sidedness, self.nodes)))

    @classmethod
    def equally_spaced(cls, looks: int, **kwargs) -> "MonitoringPlan":
        return cls(tuple((k + 1) / looks for k in range(looks)), **kwargs)


@dataclass(frozen=True)
class MonitoringDecision:
    look_index: int
    v: float  # attained fraction (nan when not reached)
    sigma_hat: float
    z_statistic: float
    boundary: float
    action: str  # continue | reject | accept_fail_to_reach


def monitor_trial(data: TrialData, plan: MonitoringPlan, null_beta: float = 0.0, Vn: float | None = None,
                  access_log: list | None = None) -> list:
    """Run the planned looks on one trial under the null ``beta = null_beta``.

    Look ``k`` happens at the first event time where the information fraction
    reaches ``v_k``. The boundary is recomputed at the attained fractions; the
    statistic is ``B^(v) / sqrt(v)`` at the attained ``v``. Monitoring stops at
    the first rejection. Fractions never reached yield ``accept_fail_to_reach``.

    ``access_log``, when given, receives every calendar time at which the data
    were evaluated.
    """
    Vn = float(data.n) if Vn is None else float(Vn)
    path = information_path(data, null_beta, Vn) if data.n else None
    times = path.event_times if path is not None else np.array([])
    frac = path.vhat_at_events / Vn if path is not None else np.array([])
    decisions = []
    attained, spend_at = [], []
    pos = 0
    two = plan.sidedness == "two"
    for k, v_plan in enumerate(plan.v_grid):
        # scan forward through event times only as far as this look needs
        while pos < len(times) and frac[pos] < v_plan:
            if access_log is not None:
                access_log.append(float(times[pos]))
            pos += 1
        if pos == len(times):
            for j in range(k, len(plan.v_grid)):
                decisions.append(MonitoringDecision(j + 1, math.nan, math.nan, math.nan, math.nan,
                                                    "accept_fail_to_reach"))
            break
        if access_log is not None:
            access_log.append(float(times[pos]))
        v_att = float(frac[pos])
        if attained and v_att <= attained[-1]:
            # two planned fractions crossed by the same event: one look, not two
            decisions.append(MonitoringDecision(k + 1, v_att, float(times[pos]), decisions[-1].z_statistic,
                                                decisions[-1].boundary, "continue"))
            continue
        attained.append(v_att)
        spend_at.append(min(v_att, 1.0))
        c = compute_boundaries(attained, plan.alpha, plan.spending, plan.sidedness, plan.nodes,
                               spend_at=_monotone(spend_at))[-1]
        z = float(path.score_at_events[pos] / math.sqrt(Vn) / math.sqrt(v_att))
        reject = abs(z) >= c if two else z >= c
        decisions.append(MonitoringDecision(k + 1, v_att, float(times[pos]), z, float(c),
                                            "reject" if reject else "continue"))
        if reject:
            break
    return decisions


def _monotone(xs):
    return np.maximum.accumulate(np.asarray(xs, dtype=float))
