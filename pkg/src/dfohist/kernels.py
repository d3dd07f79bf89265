"""Hot inner loops: methanol RK4 integration and ball-occupancy scans.

Each kernel has a numba implementation and a vectorised numpy
implementation with the same arithmetic order. The public names resolve
to the numba version unless ``DFOHIST_DISABLE_NUMBA`` is set.
"""
import math

import numpy as np

from ._accel import HAS_NUMBA, njit

__all__ = [
    "BACKEND",
    "methanol_rk4",
    "methanol_rk4_numpy",
    "ball_any",
    "ball_any_numpy",
    "step_plan",
]


def step_plan(tau_end, h):
    """Number of full steps and the length of the final partial step."""
    ratio = tau_end / h
    n = round(ratio)
    if abs(ratio - n) <= 1e-9 * max(1.0, ratio):
        return int(n), 0.0
    n = math.floor(ratio)
    return int(n), tau_end - n * h


_step_plan_jit = njit(step_plan)


def _rhs_py(x1, x2, x3, x4, x5, v1, v2):
    den = (x2 + x5) * v1 + v2
    if den == 0.0:
        raise ValueError("methanol rhs: zero denominator")
    d1 = -(2.0 * x2 - x1 * v2 / den + x3 + x4) * v1
    d2 = x1 * v1 * (x2 * v1 - v2) / den + x3 * v1
    d3 = x1 * v1 * (v2 + x5 * v1) / den + x4 * v1
    return d1, d2, d3


_rhs_jit = njit(_rhs_py)


def _methanol_rk4_loop(x, v0, tau_end, h):
    m = v0.shape[0]
    out = np.empty((m, 3))
    x1, x2, x3, x4, x5 = x[0], x[1], x[2], x[3], x[4]
    for r in range(m):
        a = v0[r, 0]
        b = v0[r, 1]
        c = v0[r, 2]
        n, rem = _step_plan_jit(tau_end[r], h)
        total = n + (1 if rem > 0.0 else 0)
        for k in range(total):
            hk = h if k < n else rem
            half = 0.5 * hk
            k1a, k1b, k1c = _rhs_jit(x1, x2, x3, x4, x5, a, b)
            k2a, k2b, k2c = _rhs_jit(x1, x2, x3, x4, x5, a + half * k1a, b + half * k1b)
            k3a, k3b, k3c = _rhs_jit(x1, x2, x3, x4, x5, a + half * k2a, b + half * k2b)
            k4a, k4b, k4c = _rhs_jit(x1, x2, x3, x4, x5, a + hk * k3a, b + hk * k3b)
            sixth = hk / 6.0
            a = a + sixth * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
            b = b + sixth * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            c = c + sixth * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
            if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(c)):
                raise ValueError("methanol integration: non-finite state")
        out[r, 0] = a
        out[r, 1] = b
        out[r, 2] = c
    return out


_methanol_rk4_jit = njit(_methanol_rk4_loop)


def _rhs_vec(x, a, b):
    den = (x[1] + x[4]) * a + b
    if np.any(den == 0.0):
        raise ValueError("methanol rhs: zero denominator")
    d1 = -(2.0 * x[1] - x[0] * b / den + x[2] + x[3]) * a
    d2 = x[0] * a * (x[1] * a - b) / den + x[2] * a
    d3 = x[0] * a * (b + x[4] * a) / den + x[3] * a
    return d1, d2, d3


def methanol_rk4_numpy(x, v0, tau_end, h):
    """Integrate all trajectories at once; finished rows take zero-length steps."""
    x = np.asarray(x, dtype=float)
    v0 = np.asarray(v0, dtype=float).reshape(-1, 3)
    tau_end = np.asarray(tau_end, dtype=float).reshape(-1)
    plans = [step_plan(float(t), h) for t in tau_end]
    n_full = np.array([p[0] for p in plans], dtype=np.int64)
    rem = np.array([p[1] for p in plans])
    total = n_full + (rem > 0.0)
    a = v0[:, 0].copy()
    b = v0[:, 1].copy()
    c = v0[:, 2].copy()
    steps = int(total.max()) if total.size else 0
    for k in range(steps):
        live = k < total
        hk = np.where(k < n_full, h, rem)
        if not live.all():
            idx = np.nonzero(live)[0]
        else:
            idx = slice(None)
        aa, bb, hh = a[idx], b[idx], hk[idx]
        half = 0.5 * hh
        k1a, k1b, k1c = _rhs_vec(x, aa, bb)
        k2a, k2b, k2c = _rhs_vec(x, aa + half * k1a, bb + half * k1b)
        k3a, k3b, k3c = _rhs_vec(x, aa + half * k2a, bb + half * k2b)
        k4a, k4b, k4c = _rhs_vec(x, aa + hh * k3a, bb + hh * k3b)
        sixth = hh / 6.0
        a[idx] = aa + sixth * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        b[idx] = bb + sixth * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        c[idx] = c[idx] + sixth * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
        if not (np.isfinite(a).all() and np.isfinite(b).all() and np.isfinite(c).all()):
            raise ValueError("methanol integration: non-finite state")
    return np.stack([a, b, c], axis=1)


def _ball_any_loop(qx, qw, rx, rw, radius):
    n_q = qx.shape[0]
    n_w = qw.shape[0]
    n_r = rx.shape[0]
    r2 = radius * radius
    out = np.zeros((n_q, n_w), dtype=np.bool_)
    dx2 = np.empty(n_r)
    for c in range(n_q):
        for j in range(n_r):
            s = 0.0
            for k in range(qx.shape[1]):
                t = rx[j, k] - qx[c, k]
                s += t * t
            dx2[j] = s
        for i in range(n_w):
            for j in range(n_r):
                if dx2[j] > r2:
                    continue
                sw = 0.0
                for k in range(qw.shape[1]):
                    t = rw[j, k] - qw[i, k]
                    sw += t * t
                if dx2[j] + sw <= r2:
                    out[c, i] = True
                    break
    return out


_ball_any_jit = njit(_ball_any_loop)


def ball_any_numpy(qx, qw, rx, rw, radius):
    """out[c, i] is True when some record lies in the closed ball around (qx[c], qw[i])."""
    qx = np.atleast_2d(np.asarray(qx, dtype=float))
    qw = np.asarray(qw, dtype=float).reshape(-1, rw.shape[1])
    out = np.zeros((qx.shape[0], qw.shape[0]), dtype=bool)
    if rx.shape[0] == 0:
        return out
    r2 = radius * radius
    dw2 = ((rw[None, :, :] - qw[:, None, :]) ** 2).sum(axis=2)
    for c in range(qx.shape[0]):
        dx2 = ((rx - qx[c]) ** 2).sum(axis=1)
        near = dx2 <= r2
        if not near.any():
            continue
        out[c] = ((dx2[near][None, :] + dw2[:, near]) <= r2).any(axis=1)
    return out


if HAS_NUMBA:
    BACKEND = "numba"

    def methanol_rk4(x, v0, tau_end, h):
        """Integrate the methanol ODE for each row of ``v0`` up to ``tau_end``."""
        return _methanol_rk4_jit(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(np.asarray(v0, dtype=np.float64).reshape(-1, 3)),
            np.ascontiguousarray(np.asarray(tau_end, dtype=np.float64).reshape(-1)),
            float(h),
        )

    def ball_any(qx, qw, rx, rw, radius):
        qx = np.atleast_2d(np.asarray(qx, dtype=np.float64))
        qw = np.asarray(qw, dtype=np.float64).reshape(-1, rw.shape[1])
        return _ball_any_jit(
            np.ascontiguousarray(qx),
            np.ascontiguousarray(qw),
            np.ascontiguousarray(rx, dtype=np.float64),
            np.ascontiguousarray(rw, dtype=np.float64),
            float(radius),
        )

else:
    BACKEND = "numpy"
    methanol_rk4 = methanol_rk4_numpy
    ball_any = ball_any_numpy
