"""Maximum partial likelihood estimation on the (t, theta) plane and in information time."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from . import cox_engine
from .cox_engine import SUBSAMPLE
from .errors import MinimumInformation, NoEvents, NotConverged, SingularInformation
from .info_time import information_path, sigma_hat
from .trial_core import TrialData

MAX_HALVINGS = 30
DIVERGENCE_BOUND = 50.0
CONDITION_LIMIT = 1e12
COLLAPSE_RATIO = 1e-6


@dataclass(frozen=True)
class MpleResult:
    beta_hat: np.ndarray
    iterations: int
    converged: bool
    final_score_norm: float
    information_at_hat: np.ndarray
    vhat_at_hat: np.ndarray
    covariance: np.ndarray  # of sqrt(n) (beta_hat - beta0): n I^{-1}
    ci_95: np.ndarray  # (d, 2)
    sandwich: np.ndarray  # n I^{-1} V^ I^{-1}, diagnostic only
    t: float
    theta: float
    boundary: bool = False

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(np.linalg.inv(self.information_at_hat)))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d


def _check_information(info, n, floor):
    eig = np.linalg.eigvalsh(info)
    if eig[-1] <= 0 or eig[0] <= eig[-1] / CONDITION_LIMIT:
        raise SingularInformation(f"information matrix is singular (eigenvalues {eig.tolist()})")
    if eig[0] / n < floor:
        raise MinimumInformation(f"smallest eigenvalue of information/n is {eig[0] / n:.3g} < {floor}")


def solve_mple(data: TrialData, t: float | None = None, theta: float | None = None, init_beta=None,
               tol: float = 1e-10, max_iter: int = 50, min_information: float = 1e-3,
               variant: str = SUBSAMPLE) -> MpleResult:
    """Root of ``U(beta; t, theta)`` by Newton's method with step-halving.

    A step is halved until the log partial likelihood does not decrease (up to
    rounding). ``|beta| > 50`` in any coordinate, or an information matrix that
    has collapsed below ``1e-6`` of its starting size, is treated as divergence
    to the boundary (monotone likelihood) and raises ``NotConverged`` with the
    partial result attached.

    Raises:
        NoEvents: no event is admitted by ``(t, theta)``.
        SingularInformation: the information at ``init_beta`` is singular.
        MinimumInformation: smallest eigenvalue of information/n is below
            ``min_information``.
        NotConverged: iteration budget exhausted or divergence.
    """
    t = data.horizon if t is None else t
    if not np.isfinite(t):
        t = float(np.max(data.completion)) if data.n else 0.0
    theta = t if theta is None else theta
    d = data.dim
    beta = np.zeros(d) if init_beta is None else np.atleast_1d(np.asarray(init_beta, dtype=float)).copy()
    n = max(data.n, 1)

    def ev(b):
        return cox_engine.score(data, b, t, theta, variant)

    cur = ev(beta)
    if cur.n_events_used == 0:
        raise NoEvents(f"no events with entry <= {theta!r} observed by {t!r}")
    _check_information(cur.information, n, min_information)
    info0 = np.linalg.eigvalsh(cur.information)[-1]

    it = 0
    boundary = False
    while np.max(np.abs(cur.score)) >= tol and it < max_iter:
        it += 1
        try:
            step = np.linalg.solve(cur.information, cur.score)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation(str(exc)) from exc
        new = ev(beta + step)
        halvings = 0
        slack = 1e-12 * (1.0 + abs(cur.loglik))
        while not (new.loglik >= cur.loglik - slack) and halvings < MAX_HALVINGS:
            step = step / 2
            halvings += 1
            new = ev(beta + step)
        if halvings == MAX_HALVINGS and not new.loglik >= cur.loglik - slack:
            break
        beta = beta + step
        cur = new
        if np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            boundary = True
            break

    # monotone likelihood: the score can fall below tol only because the
    # information has collapsed along the way
    if not boundary and np.linalg.eigvalsh(cur.information)[0] < COLLAPSE_RATIO * info0:
        boundary = True
    result = _result(data, beta, it, cur, tol, t, theta, boundary)
    if not result.converged:
        why = "diverged to the boundary" if boundary else f"no convergence after {it} iterations"
        raise NotConverged(why, result)
    return result


def _result(data, beta, it, cur, tol, t, theta, boundary):
    d = data.dim
    n = max(data.n, 1)
    norm_u = float(np.max(np.abs(cur.score)))
    converged = norm_u < tol and not boundary
    info = cur.information
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        inv = np.full((d, d), np.nan)
    cov = n * inv
    cov = (cov + cov.T) / 2
    sand = n * inv @ cur.vhat @ inv
    se = np.sqrt(np.clip(np.diag(inv), 0, None))
    z = norm.ppf(0.975)
    ci = np.column_stack([beta - z * se, beta + z * se])
    return MpleResult(beta.copy(), it, converged, norm_u, info, cur.vhat, cov, ci, (sand + sand.T) / 2,
                      float(t), float(theta), boundary)


def solve_mple_at_fraction(data: TrialData, v: float, Vn: float | None = None, init=None,
                           tol: float = 1e-10, reference_beta=0.0, **kwargs) -> MpleResult:
    """``beta^(v)``: root of ``U(beta; sigma^_v) = 0``.

    ``sigma^_v`` is computed once from the information path at
    ``reference_beta`` (the monitoring null by default) and held fixed while
    solving.
    """
    if data.dim != 1:
        raise ValueError("information-time estimation needs a one-dimensional covariate")
    if not np.any(data.event):
        raise NoEvents("no events")
    path = information_path(data, reference_beta, Vn)
    s = sigma_hat(path, v)
    return solve_mple(data, s, s, init, tol, **kwargs)
