"""Cox partial-likelihood quantities on the calendar-time / entry-time plane.

For an event of subject ``i`` at time-on-study ``w = T~_i`` the risk set seen at
calendar time ``t`` is every subject ``j`` with ``U_j + w <= t`` (entered early
enough to have been followed for ``w``) and ``T~_j >= w``. The two-parameter
score additionally restricts the events to ``U_i <= theta``; the
``subsample_riskset`` variant restricts the risk set in the same way.

``score`` is the reference implementation: a direct scan over events x
subjects. ``ScoreScanner`` evaluates the one-parameter score and information
along calendar time from prefix sums; tests pin it to ``score``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyRiskSet, TiedEventTimesWarning
from .trial_core import TrialData

FULL = "full_riskset"
SUBSAMPLE = "subsample_riskset"
VARIANTS = (FULL, SUBSAMPLE)


@dataclass(frozen=True)
class ScoreEvaluation:
    beta: np.ndarray
    t: float
    theta: float
    variant: str
    score: np.ndarray
    loglik: float
    information: np.ndarray
    vhat: np.ndarray
    n_events_used: int

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("beta", "score", "information", "vhat"):
            d[k] = np.asarray(d[k]).tolist()
        return d


def _beta(beta, d):
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    if b.shape != (d,):
        raise ValueError(f"beta must have dimension {d}, got {b.shape}")
    return b


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")


def gamma_k(data: TrialData, beta, theta: float, w: float, k: int):
    """Sum over ``U_i <= theta``, ``T~_i >= w`` of ``Z_i(w)^{(x)k} exp(beta'Z_i(w))``."""
    if theta < 0 or w < 0:
        raise ValueError("theta and w must be >= 0")
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    d = data.dim
    beta = _beta(beta, d)
    if data.n == 0:
        return (0.0, np.zeros(d), np.zeros((d, d)))[k]
    z = data.covariates_at([w])[0]
    mask = (data.entry <= theta) & (data.observed >= w)
    wt = np.where(mask, np.exp(z @ beta), 0.0)
    if k == 0:
        return float(wt.sum())
    if k == 1:
        return wt @ z
    return np.einsum("j,ja,jb->ab", wt, z, z)


def zbar(data: TrialData, beta, t: float, w: float, variant: str = FULL, theta=None) -> np.ndarray:
    """Risk-weighted covariate mean at time-on-study ``w`` as seen at calendar ``t``."""
    _check_variant(variant)
    theta = t if theta is None else theta
    d = data.dim
    beta = _beta(beta, d)
    if data.n == 0:
        raise EmptyRiskSet(f"no subject at risk at w={w!r}")
    z = data.covariates_at([w])[0]
    mask = (data.entry + w <= t) & (data.observed >= w)
    if variant == SUBSAMPLE:
        mask &= data.entry <= theta
    if not mask.any():
        raise EmptyRiskSet(f"no subject at risk at w={w!r}, t={t!r}")
    lin = z[mask] @ beta
    wt = np.exp(lin - lin.max())
    return wt @ z[mask] / wt.sum()


def _events(data: TrialData, t: float, theta: float) -> np.ndarray:
    return np.flatnonzero(data.event & (data.entry <= theta) & (data.completion <= t))


def _warn_ties(data, idx):
    if len(idx) > 1:
        w = data.observed[idx]
        c = data.completion[idx]
        if len(np.unique(w)) < len(w) or len(np.unique(c)) < len(c):
            warnings.warn("tied event times; Breslow risk sets used", TiedEventTimesWarning, stacklevel=3)


def score(data: TrialData, beta, t: float, theta=None, variant: str = FULL) -> ScoreEvaluation:
    """Score, log partial likelihood, observed information and ``V^`` at ``(beta, t, theta)``.

    Events counted: ``Delta_i = 1``, ``U_i <= theta`` and ``U_i + T~_i <= t``.
    ``information`` is ``-dU/dbeta`` and ``vhat`` the sum of squared residuals
    ``(Z_i - Zbar)^{(x)2}``.
    """
    _check_variant(variant)
    theta = t if theta is None else theta
    if theta > t:
        raise ValueError("theta must not exceed t")
    if t > data.horizon:
        raise ValueError("t must not exceed the horizon")
    d = data.dim
    beta = _beta(beta, d)
    idx = _events(data, t, theta)
    if len(idx) == 0:
        z0 = np.zeros(d)
        return ScoreEvaluation(beta, float(t), float(theta), variant, z0, 0.0,
                               np.zeros((d, d)), np.zeros((d, d)), 0)
    _warn_ties(data, idx)
    w = data.observed[idx]
    risk = (data.entry[None, :] + w[:, None] <= t) & (data.observed[None, :] >= w[:, None])
    if variant == SUBSAMPLE:
        risk &= (data.entry <= theta)[None, :]
    if data.time_constant:
        z0 = data.baseline_covariates  # (n, d)
        lin = np.broadcast_to(z0 @ beta, risk.shape)
    else:
        z = data.covariates_at(w)  # (E, n, d)
        lin = z @ beta
    shift = np.where(risk, lin, -np.inf).max(axis=1)
    if not np.all(np.isfinite(shift)):
        raise EmptyRiskSet("an event has an empty risk set")
    wt = np.where(risk, np.exp(lin - shift[:, None]), 0.0)
    g0 = wt.sum(axis=1)
    if data.time_constant:
        g1 = wt @ z0
        g2 = (wt @ np.einsum("ja,jb->jab", z0, z0).reshape(data.n, d * d)).reshape(-1, d, d)
        z_event = z0[idx]
    else:
        g1 = np.einsum("ej,eja->ea", wt, z)
        g2 = np.einsum("ej,eja,ejb->eab", wt, z, z)
        z_event = z[np.arange(len(idx)), idx]
    mean = g1 / g0[:, None]
    resid = z_event - mean
    u = resid.sum(axis=0)
    loglik = float(np.sum(z_event @ beta - shift - np.log(g0)))
    info = np.sum(g2 / g0[:, None, None] - np.einsum("ea,eb->eab", mean, mean), axis=0)
    vhat = np.einsum("ea,eb->ab", resid, resid)
    info = (info + info.T) / 2
    return ScoreEvaluation(beta, float(t), float(theta), variant, u, loglik, info, vhat, len(idx))


def score_gradient_check(data: TrialData, beta, t: float, theta=None, variant: str = FULL,
                         h: float = 1e-5) -> float:
    """Worst relative error of central differences against score and information.

    Checks ``U = dl/dbeta`` and ``information = -dU/dbeta``; errors are scaled
    by ``max(1, |analytic|)``.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    beta = _beta(beta, data.dim)
    base = score(data, beta, t, theta, variant)
    worst = 0.0
    for k in range(len(beta)):
        e = np.zeros_like(beta)
        e[k] = h
        plus = score(data, beta + e, t, theta, variant)
        minus = score(data, beta - e, t, theta, variant)
        num_u = (plus.loglik - minus.loglik) / (2 * h)
        worst = max(worst, abs(num_u - base.score[k]) / max(1.0, abs(base.score[k])))
        num_i = -(plus.score - minus.score) / (2 * h)
        err = np.abs(num_i - base.information[:, k]) / np.maximum(1.0, np.abs(base.information[:, k]))
        worst = max(worst, float(err.max()))
    return float(worst)


class ScoreScanner:
    """One-parameter score ``U(beta; t)`` and ``V^_{t,t}(beta)`` at many calendar times.

    Each event row holds prefix sums, in entry order, of the risk weights at
    that event's time-on-study. The risk set at calendar ``t`` is a prefix
    (subjects with ``U_j + w <= t``), so a query costs one lookup per event.
    Only events completed by ``t`` and subjects entered by ``t - w`` are read.
    """

    def __init__(self, data: TrialData, beta):
        self.data = data
        self.beta = _beta(beta, data.dim)
        idx = np.flatnonzero(data.event)
        order = np.argsort(data.completion[idx], kind="stable")
        self.idx = idx[order]
        self.calendar = data.completion[self.idx]
        self.w = data.observed[self.idx]
        self.event_times = np.unique(self.calendar)
        if len(self.idx) == 0:
            return
        z = data.covariates_at(self.w)
        risk = data.observed[None, :] >= self.w[:, None]
        lin = z @ self.beta
        shift = np.where(risk, lin, -np.inf).max(axis=1)
        wt = np.where(risk, np.exp(lin - shift[:, None]), 0.0)
        self.c0 = np.cumsum(wt, axis=1)
        self.c1 = np.cumsum(wt[:, :, None] * z, axis=1)
        self.z_event = z[np.arange(len(self.idx)), self.idx]
        self.reach = data.entry[None, :] + self.w[:, None]  # calendar time j reaches w_i

    def _prefix(self, t):
        m = int(np.searchsorted(self.calendar, t, side="right"))
        pos = np.array([np.searchsorted(self.reach[e], t, side="right") - 1 for e in range(m)], dtype=int)
        return m, pos

    def at(self, t: float):
        """``(U, V^)`` at calendar time ``t``."""
        d = self.data.dim
        if len(self.idx) == 0:
            return np.zeros(d), np.zeros((d, d))
        m, pos = self._prefix(t)
        if m == 0:
            return np.zeros(d), np.zeros((d, d))
        rows = np.arange(m)
        mean = self.c1[rows, pos] / self.c0[rows, pos][:, None]
        resid = self.z_event[:m] - mean
        return resid.sum(axis=0), resid.T @ resid

    def path(self, times=None):
        """``U`` and ``V^`` at each of ``times`` (default: every distinct event time)."""
        times = self.event_times if times is None else np.asarray(times, dtype=float)
        d = self.data.dim
        us = np.zeros((len(times), d))
        vs = np.zeros((len(times), d, d))
        if len(self.idx) == 0 or len(times) == 0:
            return us, vs
        # pos[e, q]: last subject counted for event e at query time q
        pos = np.empty((len(self.idx), len(times)), dtype=int)
        for e in range(len(self.idx)):
            pos[e] = np.searchsorted(self.reach[e], times, side="right") - 1
        included = self.calendar[:, None] <= times[None, :]
        safe = np.where(included, pos, 0)
        rows = np.arange(len(self.idx))[:, None]
        denom = np.where(included, self.c0[rows, safe], 1.0)
        mean = self.c1[rows, safe] / denom[:, :, None]  # (E, Q, d)
        resid = np.where(included[:, :, None], self.z_event[:, None, :] - mean, 0.0)
        us = resid.sum(axis=0)
        vs = np.einsum("eqa,eqb->qab", resid, resid)
        return us, vs
