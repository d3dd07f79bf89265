"""Least-squares front end and the methanol-to-hydrocarbons benchmark."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .core import Bounds, CompositeProblem, OuterFunction

__all__ = [
    "X_BAR",
    "BASE_INITIAL_CONDITIONS",
    "TIME_POINTS",
    "STEP",
    "LeastSquaresOuter",
    "LeastSquaresData",
    "InstanceFormatError",
    "ls_outer",
    "least_squares_problem",
    "methanol_rhs",
    "integrate",
    "phi",
    "phi_many",
    "simplex_project",
    "ball_sample",
    "generate_instance",
    "methanol_problem",
    "save_instance",
    "load_instance",
]

X_BAR = np.array([1.78, 2.17, 1.86, 1.80, 0.0])
BASE_INITIAL_CONDITIONS = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.75, 0.25, 0.0],
        [0.75, 0.0, 0.25],
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.25, 0.75, 0.0],
        [0.25, 0.0, 0.75],
    ]
)
TIME_POINTS = np.array([0.1, 0.4, 0.8])
STEP = 1e-3
PERTURB_RADIUS = 0.1
NOISE = 0.1


class LeastSquaresOuter(OuterFunction):
    """``h(v) = 0.5 * ||v - y||^2``."""

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float).reshape(-1)

    def value(self, v):
        r = np.asarray(v, dtype=float) - self.y
        return 0.5 * float(r @ r)

    def gradient(self, v):
        return np.asarray(v, dtype=float) - self.y

    def hessian(self, v):
        return np.eye(self.y.size)


def ls_outer(v, y):
    h = LeastSquaresOuter(y)
    return h.value(v), h.gradient(v), h.hessian(v)


@dataclass(frozen=True)
class LeastSquaresData:
    W: np.ndarray  # p x n_w
    y: np.ndarray  # p

    @property
    def p(self):
        return self.y.size

    @property
    def n_w(self):
        return self.W.shape[1]


def least_squares_problem(phi_fn, data: LeastSquaresData, bounds: Bounds, phi_batch=None,
                          name="least_squares") -> CompositeProblem:
    """``min 0.5 * sum_i (phi(x, w_i) - y_i)^2``; every element shares one history."""
    W = np.asarray(data.W, dtype=float)

    def element(i, x):
        return float(phi_fn(x, W[i]))

    def many(x, indices):
        return phi_batch(x, W[list(indices)])

    return CompositeProblem(
        n_x=bounds.n,
        p=data.p,
        element=element,
        outer=LeastSquaresOuter(data.y),
        bounds=bounds,
        features=W,
        shared_history=True,
        evaluate_many=many if phi_batch is not None else None,
        name=name,
    )


def methanol_rhs(x, v):
    x = np.asarray(x, dtype=float)
    v1, v2, _ = np.asarray(v, dtype=float)
    den = (x[1] + x[4]) * v1 + v2
    if den == 0.0:
        raise ValueError("methanol rhs: zero denominator")
    return np.array(
        [
            -(2.0 * x[1] - x[0] * v2 / den + x[2] + x[3]) * v1,
            x[0] * v1 * (x[1] * v1 - v2) / den + x[2] * v1,
            x[0] * v1 * (v2 + x[4] * v1) / den + x[3] * v1,
        ]
    )


def integrate(x, v0, tau_end, h=STEP):
    """Classical RK4 with fixed step ``h``; the last step is shortened to hit ``tau_end``."""
    if tau_end < 0:
        raise ValueError("tau_end must be nonnegative")
    v0 = np.asarray(v0, dtype=float)
    if not np.all(np.isfinite(v0)):
        raise ValueError("initial state must be finite")
    return kernels.methanol_rk4(x, v0.reshape(1, 3), np.array([float(tau_end)]), h)[0]


def phi(x, w, h=STEP):
    """Third state component at time ``w[0]`` from initial state ``w[1:4]``."""
    w = np.asarray(w, dtype=float)
    return float(integrate(x, w[1:4], w[0], h)[2])


def phi_many(x, W, h=STEP):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return kernels.methanol_rk4(x, W[:, 1:4], W[:, 0], h)[:, 2].copy()


def simplex_project(v):
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def ball_sample(rng, radius, dim):
    """Uniform draw from the closed 2-norm ball."""
    g = rng.standard_normal(dim)
    u = rng.random()
    if radius == 0:
        return np.zeros(dim)
    return radius * u ** (1.0 / dim) * g / np.linalg.norm(g)


def generate_instance(rng, x_bar=X_BAR):
    """One benchmark instance; returns ``(data, x_true)``.

    Draw order: seven ball perturbations (3 normals + 1 uniform each), five
    uniforms for the true parameters, then 21 uniforms for the noise.
    """
    v0s = np.array([simplex_project(b + ball_sample(rng, PERTURB_RADIUS, 3)) for b in BASE_INITIAL_CONDITIONS])
    x_true = np.asarray(x_bar, dtype=float) + rng.random(5)
    W = np.array([np.concatenate([[tau], v0]) for tau in TIME_POINTS for v0 in v0s])
    clean = phi_many(x_true, W)
    u = rng.uniform(-NOISE, NOISE, size=W.shape[0])
    y = clean + np.abs(clean) * u
    return LeastSquaresData(W, y), x_true


def methanol_problem(data: LeastSquaresData) -> CompositeProblem:
    return least_squares_problem(phi, data, Bounds.nonnegative(5), phi_batch=phi_many, name="methanol")


class InstanceFormatError(ValueError):
    pass


_INST_HEADER = "DFOINST v1"


def save_instance(path, data: LeastSquaresData, model="methanol"):
    lines = [f"{_INST_HEADER} model={model} p={data.p} n_w={data.n_w}"]
    for w, y in zip(data.W, data.y):
        lines.append(" ".join(f"{v:.17g}" for v in (*w, y)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_instance(path):
    """Returns ``(data, model_name)``."""
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").split("\n")]
    if not lines or not lines[0].startswith(_INST_HEADER):
        raise InstanceFormatError(f"{path}:1: expected header {_INST_HEADER!r}")
    fields = dict(tok.partition("=")[::2] for tok in lines[0][len(_INST_HEADER):].split())
    try:
        p = int(fields["p"])
        n_w = int(fields["n_w"])
    except (KeyError, ValueError) as exc:
        raise InstanceFormatError(f"{path}:1: bad header") from exc
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != n_w + 1:
            raise InstanceFormatError(f"{path}:{lineno}: expected {n_w + 1} fields")
        try:
            rows.append([float(s) for s in parts])
        except ValueError as exc:
            raise InstanceFormatError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) != p:
        raise InstanceFormatError(f"{path}: expected {p} rows, found {len(rows)}")
    arr = np.array(rows).reshape(p, n_w + 1)
    return LeastSquaresData(arr[:, :n_w], arr[:, n_w]), fields.get("model", "methanol")
