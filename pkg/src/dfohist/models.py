"""Linear element models, the composite master model, the stationarity
measure and a Cauchy-decrease trust-region step."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import L2, LINF, Bounds, NormKind

__all__ = [
    "ElementModels",
    "MasterModel",
    "StationarityResult",
    "CauchyDecreaseError",
    "fit_linear_elements",
    "master_model",
    "stationarity",
    "curvature_bound",
    "cauchy_bound",
    "solve_tr_subproblem",
]

log = logging.getLogger(__name__)


class CauchyDecreaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElementModels:
    """``q_i(x_k + s) = values[i] + gradients[:, i] @ s``."""

    values: np.ndarray
    gradients: np.ndarray

    def __call__(self, s) -> np.ndarray:
        return self.values + np.asarray(s, dtype=float) @ self.gradients


@dataclass(frozen=True)
class MasterModel:
    f0: float
    g: np.ndarray
    H: np.ndarray

    def value(self, s) -> float:
        s = np.asarray(s, dtype=float)
        return self.f0 + float(self.g @ s) + 0.5 * float(s @ self.H @ s)

    def gradient(self, s) -> np.ndarray:
        return self.g + self.H @ np.asarray(s, dtype=float)

    def decrease(self, s) -> float:
        """m(x_k) - m(x_k + s), computed without cancellation against f0."""
        s = np.asarray(s, dtype=float)
        return -(float(self.g @ s) + 0.5 * float(s @ self.H @ s))


@dataclass(frozen=True)
class StationarityResult:
    pi: float
    direction: np.ndarray


def fit_linear_elements(directions, values) -> ElementModels:
    """Interpolate each element on ``{0} + directions``.

    ``directions`` is ``n_x x n_x`` with directions as columns; ``values`` is
    ``p x (n_x + 1)`` with column 0 taken at the base point.
    """
    D = np.asarray(directions, dtype=float)
    F = np.atleast_2d(np.asarray(values, dtype=float))
    n = D.shape[0]
    if D.shape != (n, n) or F.shape[1] != n + 1:
        raise ValueError("need n_x nonzero directions and n_x + 1 values per element")
    rhs = (F[:, 1:] - F[:, :1]).T  # n_x x p
    with np.errstate(all="raise"), warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu, piv = scipy.linalg.lu_factor(D.T, check_finite=True)
        except (ValueError, FloatingPointError, scipy.linalg.LinAlgWarning) as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc
    if np.any(np.diag(lu) == 0):
        raise np.linalg.LinAlgError("singular interpolation matrix")
    if log.isEnabledFor(logging.DEBUG):
        log.debug("interpolation condition number %.3e", np.linalg.cond(D))
    G = scipy.linalg.lu_solve((lu, piv), rhs)
    return ElementModels(F[:, 0].copy(), G)


def master_model(elem: ElementModels, outer) -> MasterModel:
    c = elem.values
    G = elem.gradients
    g = G @ np.asarray(outer.gradient(c), dtype=float)
    H = G @ np.asarray(outer.hessian(c), dtype=float) @ G.T
    H = 0.5 * (H + H.T)
    return MasterModel(float(outer.value(c)), g, H)


def _step_box(x_k, bounds: Bounds):
    x_k = np.asarray(x_k, dtype=float)
    if not bounds.contains(x_k):
        raise ValueError("stationarity requires a feasible point")
    return bounds.lower - x_k, bounds.upper - x_k


def stationarity(g, x_k, bounds: Bounds, tr_norm=L2) -> StationarityResult:
    """Exact minimiser of ``g @ d`` over the unit trust region intersected with the box."""
    g = np.asarray(g, dtype=float)
    lo, hi = _step_box(x_k, bounds)
    lo1 = np.maximum(lo, -1.0)
    hi1 = np.minimum(hi, 1.0)
    d = np.where(g > 0, lo1, np.where(g < 0, hi1, 0.0))
    if tr_norm == LINF:
        return StationarityResult(abs(float(g @ d)), d)
    if tr_norm != L2:
        raise ValueError(f"unsupported norm {tr_norm!r}")
    if float(d @ d) <= 1.0:
        return StationarityResult(abs(float(g @ d)), d)

    def at(mu):
        return np.where(g == 0, 0.0, np.clip(-g / (2.0 * mu), lo, hi))

    hi_mu = 0.5 * float(np.linalg.norm(g))  # unclipped solution has unit norm here
    lo_mu = hi_mu
    while np.linalg.norm(at(lo_mu)) < 1.0:
        lo_mu *= 0.5
    for _ in range(400):
        mid = math.sqrt(lo_mu * hi_mu)
        r = np.linalg.norm(at(mid))
        if abs(r - 1.0) <= 1e-10:
            break
        if r > 1.0:
            lo_mu = mid
        else:
            hi_mu = mid
    d = at(mid)
    r = np.linalg.norm(d)
    if r > 1.0:
        d = d / r
    return StationarityResult(abs(float(g @ d)), d)


def curvature_bound(M: MasterModel, tr_norm=L2, steps: int = 50) -> float:
    """Computable stand-in for the model-Hessian bound, floored at one.

    Power iteration, refined by Rayleigh-Ritz on the span of the iterates,
    estimates the spectral norm. For the infinity norm the estimate is scaled
    by ``n`` so that it bounds ``d @ H @ d`` over the unit infinity ball.
    """
    H = np.asarray(M.H, dtype=float)
    n = H.shape[0]
    if n == 0 or not np.any(H):
        return 1.0
    v = np.ones(n) / math.sqrt(n) + 1e-3 * np.arange(1, n + 1) / n
    v /= np.linalg.norm(v)
    iterates = [v]
    est = 0.0
    for _ in range(steps):
        w = H @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        est = nw
        iterates.append(v)
    U, S, _ = np.linalg.svd(np.column_stack(iterates), full_matrices=False)
    U = U[:, S > S[0] * 1e-10]
    ritz = np.linalg.eigvalsh(U.T @ H @ U)
    est = max(est, float(np.max(np.abs(ritz))))
    kappa2 = NormKind(tr_norm).kappa_tr0(n) ** 2
    return max(1.0, kappa2 * est)


def cauchy_bound(pi, kappa_bhm, delta, kappa_fcd) -> float:
    return kappa_fcd * pi * min(pi / (kappa_bhm + 1.0), delta, 1.0)


def _project(y, lo, hi, delta, tr_norm):
    """Euclidean projection onto the box ``[lo, hi]`` (which contains 0)
    intersected with the trust region."""
    d = np.clip(y, lo, hi)
    if tr_norm == LINF:
        return np.clip(d, -delta, delta)
    if float(d @ d) <= delta * delta:
        return d
    # The projection is clip(c * y) for the c in (0, 1) with unit ratio to
    # delta; ||clip(c * y)||^2 is piecewise quadratic in c with a kink where
    # each coordinate saturates.
    cap = np.where(y > 0, hi, np.where(y < 0, lo, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        sat_at = np.where(y != 0, cap / y, np.inf)
    kinks = sorted(set(sat_at[(sat_at > 0) & (sat_at < 1)].tolist()))
    kinks.append(1.0)
    target = delta * delta
    prev = 0.0
    c = 1.0
    for right in kinks:
        free = sat_at > prev
        quad = float(np.sum(y[free] ** 2))
        const = float(np.sum(cap[~free] ** 2))
        if const + quad * right * right >= target:
            c = math.sqrt(max(target - const, 0.0) / quad) if quad > 0 else prev
            c = min(max(c, prev), right)
            break
        prev = right
    d = np.clip(c * y, lo, hi)
    r = np.linalg.norm(d)
    return d * (delta / r) if r > delta else d


_MEMORY = 8


def _free_newton(M, s, cur, grad, lo, hi, delta, tr_norm):
    """Newton step in the coordinates away from their bounds, searched along
    the projected arc; returns the first point that lowers the model."""
    tol = 1e-12 * max(delta, 1.0)
    free = (s > lo + tol) & (s < hi - tol)
    if tr_norm == LINF:
        free &= np.abs(s) < delta - tol
    if not free.any():
        return None, cur
    p = np.zeros_like(s)
    p[free] = np.linalg.lstsq(M.H[np.ix_(free, free)], -grad[free], rcond=1e-12)[0]
    if not float(grad @ p) < 0:  # indefinite curvature can point uphill
        return None, cur
    t = 1.0
    floor = 1e-12 * delta
    for _ in range(20):
        if t * float(np.max(np.abs(p))) <= floor:
            break
        y = _project(s + t * p, lo, hi, delta, tr_norm)
        dec = M.decrease(y)
        if dec > cur:
            return y, dec
        t *= 0.5
    return None, cur


def solve_tr_subproblem(M: MasterModel, x_k, delta, bounds: Bounds, kappa_fcd,
                        stat: StationarityResult, tr_norm=L2, refine_steps: int = 25):
    """Cauchy step along the stationarity direction, then projected-gradient refinement.

    Refinement steps start from a Barzilai-Borwein length (``1/kappa`` on the
    first step) and halve until the model beats the worst of the last few
    iterates. After each step a Newton step on the coordinates that are off
    their bounds is tried and kept if it lowers the model. The best iterate
    is returned.
    """
    if stat.pi <= 0:
        raise ValueError("a Cauchy step needs a positive stationarity measure")
    lo, hi = _step_box(x_k, bounds)
    d = stat.direction
    t_max = min(delta, 1.0)
    slope = float(M.g @ d)
    curv = float(d @ M.H @ d)
    if curv > 0:
        t = min(-slope / curv, t_max)
    else:
        t = t_max
    t = max(t, 0.0)
    s = _project(t * d, lo, hi, delta, tr_norm)
    best = M.decrease(s)

    kappa = curvature_bound(M, tr_norm)
    s_best = s
    alpha = 1.0 / kappa
    grad = M.gradient(s)
    recent = [best]
    cur = best
    for _ in range(refine_steps):
        if not np.any(grad):
            break
        # nonmonotone acceptance against the worst of the last few iterates
        ref = min(recent[-_MEMORY:])
        step = alpha
        for _ in range(30):
            trial = _project(s - step * grad, lo, hi, delta, tr_norm)
            dec = M.decrease(trial)
            if dec > ref + 1e-4 * float(grad @ (s - trial)) and dec > ref:
                break
            step *= 0.5
        else:
            break
        ds = trial - s
        if float(np.max(np.abs(ds))) <= 1e-13 * delta and dec - cur <= 1e-15 * max(abs(best), 1e-300):
            break  # stalled at a stationary point of the projected problem
        new_grad = M.gradient(trial)
        dg = new_grad - grad
        s, cur, grad = trial, dec, new_grad
        recent.append(cur)
        if cur > best:
            s_best, best = s, cur
        newton, dec = _free_newton(M, s, cur, grad, lo, hi, delta, tr_norm)
        if newton is not None:
            s, cur, grad = newton, dec, M.gradient(newton)
            recent.append(cur)
            if cur > best:
                s_best, best = s, cur
        sy = float(ds @ dg)
        alpha = float(ds @ ds) / sy if sy > 0 else 1.0 / kappa
    s = s_best

    required = cauchy_bound(stat.pi, kappa, delta, kappa_fcd)
    if best < required * (1 - 1e-10) - 1e-300:
        raise CauchyDecreaseError(
            f"model decrease {best:.6e} below the Cauchy requirement {required:.6e}"
        )
    return s
