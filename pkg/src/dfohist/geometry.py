"""Well-poised interpolation directions inside the trust region and the box.

Directions are accepted greedily from a preference-ordered candidate list
when their projection onto the current null space is large enough, and the
remaining slots are filled by searching along +/- null-space columns for the
projected step that maximises that projection while staying feasible.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import L2, Bounds, norm

__all__ = [
    "InterpolationSet",
    "null_basis",
    "pivot_magnitude",
    "upsilon",
    "breakpoints",
    "truncated_direction",
    "opt_step",
    "build_from_candidates",
    "next_direction",
    "complete_set",
    "xi_max",
    "lambda_bound",
]

log = logging.getLogger(__name__)

_RANK_TOL = 1e-13


@dataclass(frozen=True)
class InterpolationSet:
    """Directions from ``x_k`` (first one is always zero) plus null-space basis."""

    directions: tuple
    Z: np.ndarray
    delta: float
    xi: float

    @property
    def n_x(self) -> int:
        return self.Z.shape[0]

    @property
    def n_z(self) -> int:
        return self.Z.shape[1]

    @property
    def size(self) -> int:
        return len(self.directions)

    @property
    def complete(self) -> bool:
        return self.size == self.n_x + 1

    def matrix(self) -> np.ndarray:
        """Nonzero directions as columns."""
        if self.size == 1:
            return np.zeros((self.n_x, 0))
        return np.column_stack(self.directions[1:])

    @classmethod
    def empty(cls, n_x: int, delta: float, xi: float) -> "InterpolationSet":
        return cls((np.zeros(n_x),), np.eye(n_x), float(delta), float(xi))

    def with_direction(self, d) -> "InterpolationSet":
        dirs = self.directions + (np.array(d, dtype=float),)
        Z = null_basis(np.column_stack(dirs[1:]))
        return InterpolationSet(dirs, Z, self.delta, self.xi)


def null_basis(D) -> np.ndarray:
    """Orthonormal basis of the null space of ``D.T`` (columns of D are directions)."""
    D = np.asarray(D, dtype=float)
    n, m = D.shape
    if m == 0:
        return np.eye(n)
    if m > n:
        raise np.linalg.LinAlgError("more directions than dimensions")
    Q, R = np.linalg.qr(D, mode="complete")
    diag = np.abs(np.diag(R))
    scale = max(float(np.max(np.abs(D))), np.finfo(float).tiny)
    if diag.size < m or np.any(diag <= _RANK_TOL * scale):
        raise np.linalg.LinAlgError("direction matrix is rank deficient")
    return Q[:, m:].copy()


def pivot_magnitude(Z, d, delta) -> float:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(Z.T @ np.asarray(d, dtype=float))) / delta


def upsilon(Z, d) -> float:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[1] == 0:
        return 0.0
    r = Z.T @ np.asarray(d, dtype=float)
    return float(r @ r)


def breakpoints(v, x_k, bounds: Bounds) -> np.ndarray:
    """Step lengths at which each coordinate of ``x_k + tau*v`` reaches its bound."""
    v = np.asarray(v, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    if not bounds.contains(x_k):
        raise ValueError("breakpoints require a feasible base point")
    tau = np.full(v.shape, np.inf)
    up = (v > 0) & np.isfinite(bounds.upper)
    lo = (v < 0) & np.isfinite(bounds.lower)
    tau[up] = (bounds.upper[up] - x_k[up]) / v[up]
    tau[lo] = (bounds.lower[lo] - x_k[lo]) / v[lo]
    return tau


def truncated_direction(v, tau, tau_bar) -> np.ndarray:
    """``d_j = min(tau, tau_bar_j) * v_j`` with ``0 * inf = 0``."""
    v = np.asarray(v, dtype=float)
    steps = np.minimum(float(tau), np.asarray(tau_bar, dtype=float))
    d = np.zeros_like(v)
    nz = v != 0
    d[nz] = steps[nz] * v[nz]
    return d


def _segment_root(v, tau_bar, lo, hi, delta, tr_norm):
    """tau in [lo, hi] with ||d(v, tau)||_tr = delta; norm is nondecreasing in tau."""
    free = (tau_bar > lo) & (v != 0)
    sat = ~free & (v != 0)
    if tr_norm == L2:
        fixed = float(np.sum((tau_bar[sat] * v[sat]) ** 2))
        slope = float(np.sum(v[free] ** 2))
        if slope > 0:
            tau = math.sqrt(max(delta * delta - fixed, 0.0) / slope)
            if lo - 1e-12 * max(1.0, lo) <= tau <= hi * (1 + 1e-12) or hi == math.inf:
                return min(max(tau, lo), hi)
    else:
        slope = float(np.max(np.abs(v[free]))) if free.any() else 0.0
        if slope > 0:
            tau = delta / slope
            if lo - 1e-12 * max(1.0, lo) <= tau <= hi * (1 + 1e-12) or hi == math.inf:
                return min(max(tau, lo), hi)
    # bisection fallback
    a, b = lo, hi
    if not math.isfinite(b):
        b = max(1.0, 2 * a)
        while norm(truncated_direction(v, b, tau_bar), tr_norm) < delta:
            b *= 2
    for _ in range(200):
        mid = 0.5 * (a + b)
        if norm(truncated_direction(v, mid, tau_bar), tr_norm) < delta:
            a = mid
        else:
            b = mid
        if b - a <= 1e-12 * max(b, 1e-300):
            break
    return 0.5 * (a + b)


def opt_step(Z, v, tau_bar, delta, tr_norm=L2) -> float:
    """Step length along ``v`` maximising ``upsilon`` inside the trust region."""
    tau_bar = np.asarray(tau_bar, dtype=float)
    v = np.asarray(v, dtype=float)
    vals = np.unique(tau_bar[tau_bar > 0])  # sorted, exact duplicates removed
    if vals.size == 0:
        return 0.0

    def score(t):
        return upsilon(Z, truncated_direction(v, t, tau_bar))

    if norm(truncated_direction(v, vals[-1], tau_bar), tr_norm) <= delta:
        cands = vals
    else:
        prev = 0.0
        j_hat = vals.size - 1
        for j, t in enumerate(vals):
            if norm(truncated_direction(v, t, tau_bar), tr_norm) >= delta:
                j_hat = j
                break
            prev = t
        tau_hat = _segment_root(v, tau_bar, prev, vals[j_hat], delta, tr_norm)
        cands = np.append(vals[:j_hat], tau_hat)
    scores = [score(t) for t in cands]
    return float(cands[int(np.argmax(scores))])


def build_from_candidates(x_k, delta, candidates, xi, bounds: Bounds | None = None,
                          tr_norm=L2) -> InterpolationSet:
    """Greedy scan of preference-ordered candidate points."""
    x_k = np.asarray(x_k, dtype=float)
    iset = InterpolationSet.empty(x_k.size, delta, xi)
    for cand in candidates:
        if iset.complete:
            break
        cand = np.asarray(cand, dtype=float)
        d = cand - x_k
        if norm(d, tr_norm) > delta * (1 + 1e-12) or (
            bounds is not None and not bounds.contains(cand)
        ):
            log.warning("rejecting candidate outside the trust region or box: %s", cand)
            continue
        if pivot_magnitude(iset.Z, d, delta) >= xi:
            iset = iset.with_direction(d)
    return iset


def _inside(x, d, bounds):
    # tau_bar_j * v_j can overshoot a bound by an ulp; pull such entries back
    d = d.copy()
    for _ in range(4):
        y = x + d
        bad = (y < bounds.lower) | (y > bounds.upper)
        if not bad.any():
            break
        d[bad] = np.nextafter(d[bad], 0.0)
    return d


def next_direction(iset: InterpolationSet, x_k, delta, bounds: Bounds, tr_norm=L2) -> InterpolationSet:
    """Add one direction by probing +z_i then -z_i for each null-space column."""
    if iset.n_z < 1:
        raise ValueError("interpolation set is already complete")
    Z = iset.Z
    best = np.zeros(iset.n_x)
    best_score = upsilon(Z, best)
    for i in range(iset.n_z):
        for sign in (1.0, -1.0):
            v = sign * Z[:, i]
            tb = breakpoints(v, x_k, bounds)
            tau = opt_step(Z, v, tb, delta, tr_norm)
            d = _inside(x_k, truncated_direction(v, tau, tb), bounds)
            s = upsilon(Z, d)
            if s > best_score:
                best, best_score = d, s
    return iset.with_direction(best)


def complete_set(x_k, delta, candidates, xi, bounds: Bounds, tr_norm=L2) -> InterpolationSet:
    iset = build_from_candidates(x_k, delta, candidates, xi, bounds, tr_norm)
    while not iset.complete:
        iset = next_direction(iset, x_k, delta, bounds, tr_norm)
    return iset


def xi_max(n_x, bounds: Bounds, delta_max, kappa_tr1=1.0) -> float:
    widths = bounds.widths
    finite = widths[np.isfinite(widths)]
    box_term = float(np.min(finite)) / (2.0 * delta_max) if finite.size else math.inf
    return min(1.0 / kappa_tr1, box_term) / n_x


def lambda_bound(n_x, xi, kappa_tr0=1.0) -> float:
    return n_x ** ((n_x - 1) / 2.0) * kappa_tr0 ** (n_x - 1) / xi ** n_x

