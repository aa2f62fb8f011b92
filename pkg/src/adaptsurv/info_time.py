"""Information-time rescaling of the one-parameter score.

``V^_t`` is re-evaluated in full at every event time because the risk-set
means move with ``t`` even for events already seen. ``sigma_hat`` takes the
first crossing of ``v * V_n``; later dips are reported, not used.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .cox_engine import ScoreScanner
from .errors import InformationNotReached
from .trial_core import TrialData


@dataclass(frozen=True)
class InformationPath:
    event_times: np.ndarray
    vhat_at_events: np.ndarray
    planned: float
    score_at_events: np.ndarray | None = None

    def fractions(self) -> np.ndarray:
        return self.vhat_at_events / self.planned


@dataclass(frozen=True)
class RescaledPath:
    v_grid: np.ndarray
    sigma_hat: np.ndarray  # nan where not reached
    bhat: np.ndarray  # nan where not reached
    reached: np.ndarray
    dips: np.ndarray  # per grid point: later event times with V^ back below v V_n

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["v", "sigma_hat", "bhat", "reached"])
        for v, s, b, r in zip(self.v_grid, self.sigma_hat, self.bhat, self.reached):
            w.writerow([repr(float(v)), repr(float(s)), repr(float(b)), int(r)])
        return buf.getvalue()


def _require_scalar(data: TrialData):
    if data.dim != 1:
        raise ValueError("information-time rescaling needs a one-dimensional covariate")


def information_path(data: TrialData, beta, planned: float | None = None) -> InformationPath:
    _require_scalar(data)
    planned = float(data.n) if planned is None else float(planned)
    scanner = ScoreScanner(data, beta)
    us, vs = scanner.path()
    return InformationPath(scanner.event_times, vs[:, 0, 0], planned, us[:, 0])


def sigma_hat(path: InformationPath, v: float) -> float:
    """Earliest event time at which ``V^_t / V_n >= v``."""
    if not v > 0:
        raise ValueError("v must be > 0")
    hit = np.flatnonzero(path.fractions() >= v)
    if len(hit) == 0:
        raise InformationNotReached(f"information fraction {v!r} not reached")
    return float(path.event_times[hit[0]])


def information_dips(path: InformationPath, v: float) -> np.ndarray:
    """Event times after the first crossing of ``v`` where the fraction is back below ``v``."""
    frac = path.fractions()
    hit = np.flatnonzero(frac >= v)
    if len(hit) == 0:
        return np.array([])
    later = np.arange(len(frac)) > hit[0]
    return path.event_times[later & (frac < v)]


def bhat_path(data: TrialData, beta, v_grid, Vn: float | None = None,
              path: InformationPath | None = None) -> RescaledPath:
    """``B^(v) = U(beta; sigma^_v) / sqrt(V_n)`` on a grid of information fractions.

    The score at ``sigma^_v`` uses risk-set means frozen at ``t = sigma^_v``.
    """
    _require_scalar(data)
    Vn = float(data.n) if Vn is None else float(Vn)
    if path is None:
        path = information_path(data, beta, Vn)
    v_grid = np.asarray(v_grid, dtype=float)
    frac = path.vhat_at_events / Vn
    sig = np.full(len(v_grid), np.nan)
    bh = np.full(len(v_grid), np.nan)
    reached = np.zeros(len(v_grid), dtype=bool)
    dips = []
    for k, v in enumerate(v_grid):
        hit = np.flatnonzero(frac >= v)
        if len(hit) == 0:
            dips.append(0)
            continue
        j = hit[0]
        reached[k] = True
        sig[k] = path.event_times[j]
        bh[k] = path.score_at_events[j] / math.sqrt(Vn)
        dips.append(int(np.sum(frac[j + 1:] < v)))
    return RescaledPath(v_grid, sig, bh, reached, np.array(dips))
