"""Evaluation history, radius queries, ridge-regression surrogate values and
candidate scoring for interpolation points."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .core import L2, Bounds, BudgetExhausted, CountingOracle, norm

__all__ = [
    "HistoryStore",
    "HistoryFormatError",
    "NeighborSet",
    "RegressionResult",
    "regress",
    "kappa_app",
    "approximate_or_evaluate",
    "point_values",
    "score_candidates",
    "EXACT",
    "APPROX",
    "CACHED",
]

EXACT = "exact"
APPROX = "approx"
CACHED = "cached"

GRID_CELL = 0.25
LINEAR_SCAN_BELOW = 512
_HEADER = "DFOHIST v1"


class HistoryFormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _key(x, w, group):
    return (int(group), np.asarray(x, dtype=float).tobytes(), np.asarray(w, dtype=float).tobytes())


class _Grid:
    """Fixed-cell bucketing of concatenated (x, w) coordinates."""

    def __init__(self, theta, cell):
        self.cell = cell
        cells = np.floor(theta / cell).astype(np.int64)
        keys, inverse = np.unique(cells, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(keys.shape[0] + 1))
        self.keys = keys
        self.rows = [order[bounds[k]:bounds[k + 1]] for k in range(keys.shape[0])]
        self.size = theta.shape[0]

    def candidates(self, q, radius):
        lo = self.keys * self.cell
        hi = lo + self.cell
        gap = np.maximum(0.0, np.maximum(lo - q, q - hi))
        d2 = (gap * gap).sum(axis=1)
        hit = np.nonzero(d2 <= radius * radius * (1 + 1e-9) + 1e-300)[0]
        if hit.size == 0:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([self.rows[k] for k in hit]))


class HistoryStore:
    """Exact black-box values keyed by ``(x, w)`` with closed-ball queries.

    Records with bitwise-identical ``(x, w, group)`` overwrite in place, so
    row indices are stable and a prefix of rows is a well-defined snapshot.
    """

    def __init__(self, n_x: int, n_w: int, partitioned: bool = False):
        self.n_x = int(n_x)
        self.n_w = int(n_w)
        self.partitioned = bool(partitioned)
        self._cap = 64
        self._x = np.empty((self._cap, self.n_x))
        self._w = np.empty((self._cap, self.n_w))
        self._v = np.empty(self._cap)
        self._g = np.zeros(self._cap, dtype=np.int64)
        self._n = 0
        self._index = {}
        self._grid = None

    def __len__(self):
        return self._n

    @property
    def x(self):
        return self._x[: self._n]

    @property
    def w(self):
        return self._w[: self._n]

    @property
    def values(self):
        return self._v[: self._n]

    @property
    def groups(self):
        return self._g[: self._n]

    def records(self):
        for j in range(self._n):
            yield self._x[j].copy(), self._w[j].copy(), float(self._v[j]), int(self._g[j])

    def record(self, x, w, value, group: int = 0) -> int:
        x = np.asarray(x, dtype=float).reshape(-1)
        w = np.asarray(w, dtype=float).reshape(-1)
        value = float(value)
        if x.size != self.n_x or w.size != self.n_w:
            raise ValueError(
                f"record dimensions ({x.size}, {w.size}) differ from store ({self.n_x}, {self.n_w})"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w)) and math.isfinite(value)):
            raise ValueError("history records must be finite")
        if not self.partitioned:
            group = 0
        key = _key(x, w, group)
        row = self._index.get(key)
        if row is not None:
            self._v[row] = value
            return row
        if self._n == self._cap:
            self._grow()
        row = self._n
        self._x[row] = x
        self._w[row] = w
        self._v[row] = value
        self._g[row] = group
        self._n += 1
        self._index[key] = row
        self._grid = None
        return row

    def _grow(self):
        self._cap *= 2
        for name in ("_x", "_w"):
            old = getattr(self, name)
            new = np.empty((self._cap, old.shape[1]))
            new[: self._n] = old[: self._n]
            setattr(self, name, new)
        v = np.empty(self._cap)
        v[: self._n] = self._v[: self._n]
        self._v = v
        g = np.zeros(self._cap, dtype=np.int64)
        g[: self._n] = self._g[: self._n]
        self._g = g

    def exact(self, x, w, group: int = 0) -> Optional[float]:
        row = self._index.get(_key(x, w, group if self.partitioned else 0))
        return None if row is None else float(self._v[row])

    def _in_ball(self, rows, x, w, delta):
        if delta == 0:
            return np.all(self._x[rows] == x, axis=1) & np.all(self._w[rows] == w, axis=1)
        d2 = ((self._x[rows] - x) ** 2).sum(axis=1) + ((self._w[rows] - w) ** 2).sum(axis=1)
        return d2 <= delta * delta

    def _rows_in_ball(self, x, w, delta, group, limit):
        n = self._n if limit is None else min(limit, self._n)
        if n == 0:
            return np.empty(0, dtype=np.int64)
        if self._n < LINEAR_SCAN_BELOW:
            rows = np.arange(n)
        else:
            if self._grid is None or self._grid.size != self._n:
                self._grid = _Grid(np.hstack([self.x, self.w]), GRID_CELL)
            rows = self._grid.candidates(np.concatenate([x, w]), delta)
            rows = rows[rows < n]
        if self.partitioned:
            rows = rows[self._g[rows] == group]
        if rows.size == 0:
            return rows
        return rows[self._in_ball(rows, x, w, delta)]

    def query_neighbors(self, x, w, delta, group: int = 0, limit: Optional[int] = None) -> "NeighborSet":
        """Records in the closed 2-norm ball of radius ``delta`` around ``(x, w)``.

        ``limit`` restricts the search to the first ``limit`` rows.
        """
        if delta < 0:
            raise ValueError("radius must be nonnegative")
        x = np.asarray(x, dtype=float).reshape(-1)
        w = np.asarray(w, dtype=float).reshape(-1)
        rows = self._rows_in_ball(x, w, float(delta), group, limit)
        theta = np.hstack([self._x[rows], self._w[rows]])
        return NeighborSet(theta, self._v[rows].copy(), np.concatenate([x, w]), float(delta), rows)

    def linear_scan(self, x, w, delta, group: int = 0, limit: Optional[int] = None) -> np.ndarray:
        """Reference query without the grid; returns row indices."""
        n = self._n if limit is None else min(limit, self._n)
        rows = np.arange(n)
        if self.partitioned:
            rows = rows[self._g[rows] == group]
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return rows[self._in_ball(rows, x, w, delta)]

    def distinct_x(self) -> np.ndarray:
        if self._n == 0:
            return np.empty((0, self.n_x))
        return np.unique(self.x, axis=0)

    def save(self, path) -> None:
        path = Path(path)
        head = f"{_HEADER} n_x={self.n_x} n_w={self.n_w}"
        if self.partitioned:
            head += " partitioned=1"
        lines = [head]
        for j in range(self._n):
            parts = []
            if self.partitioned:
                parts.append(str(int(self._g[j])))
            parts.extend(f"{v:.17g}" for v in self._x[j])
            parts.extend(f"{v:.17g}" for v in self._w[j])
            parts.append(f"{self._v[j]:.17g}")
            lines.append(" ".join(parts))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "HistoryStore":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        lines = text.split("\n")
        if not lines or not lines[0].startswith(_HEADER):
            raise HistoryFormatError(path, 1, f"expected header starting with {_HEADER!r}")
        fields = {}
        for tok in lines[0][len(_HEADER):].split():
            name, sep, val = tok.partition("=")
            if not sep:
                raise HistoryFormatError(path, 1, f"malformed header token {tok!r}")
            fields[name] = val
        try:
            n_x = int(fields["n_x"])
            n_w = int(fields["n_w"])
            partitioned = fields.get("partitioned", "0") == "1"
        except (KeyError, ValueError) as exc:
            raise HistoryFormatError(path, 1, f"bad header: {exc}") from exc
        store = cls(n_x, n_w, partitioned)
        width = n_x + n_w + 1 + (1 if partitioned else 0)
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != width:
                raise HistoryFormatError(path, lineno, f"expected {width} fields, got {len(parts)}")
            try:
                group = int(parts[0]) if partitioned else 0
                nums = [float(p) for p in parts[1 if partitioned else 0:]]
                store.record(nums[:n_x], nums[n_x:n_x + n_w], nums[-1], group)
            except ValueError as exc:
                raise HistoryFormatError(path, lineno, str(exc)) from exc
        return store


@dataclass(frozen=True)
class NeighborSet:
    theta: np.ndarray
    phi: np.ndarray
    center: np.ndarray
    radius: float
    rows: np.ndarray

    def __len__(self):
        return self.phi.size


@dataclass(frozen=True)
class RegressionResult:
    value: float
    beta: np.ndarray
    kappa_app_cert: Optional[float] = None


def regress(neighbors: NeighborSet, theta, ridge: float) -> RegressionResult:
    """Ridge-regularised affine fit through the neighbours, evaluated at ``theta``.

    The intercept is not penalised, so the weights sum to one and the fit is
    translation invariant; it is computed in centred coordinates.
    """
    T = np.asarray(neighbors.theta, dtype=float)
    phi = np.asarray(neighbors.phi, dtype=float)
    N = phi.size
    if N < 1:
        raise ValueError("regression needs at least one neighbour")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    center = T.mean(axis=0)
    Md = T - center
    # SVD form of Md (Md'Md + ridge I)^-1 (theta - center); avoids squaring
    # the conditioning of the cloud
    U, sv, Vt = np.linalg.svd(Md, full_matrices=False)
    if ridge == 0 and (sv.size < T.shape[1] or not sv[-1] > 1e-7 * sv[0]):
        raise np.linalg.LinAlgError("singular regression system; use a positive ridge")
    u = U @ ((sv / (sv * sv + ridge)) * (Vt @ (theta - center)))
    u -= u.mean()  # zero in exact arithmetic; removes rounding that leaks into sum(beta)
    beta = np.full(N, 1.0 / N) + u
    return RegressionResult(float(beta @ phi), beta)


def kappa_app(neighbors: NeighborSet, ridge: float, lipschitz: float, delta: float) -> float:
    """Error factor ``L (1 + 2 N delta / (sigma_min + ridge))`` for the fit."""
    T = np.asarray(neighbors.theta, dtype=float)
    N = T.shape[0]
    Md = T - T.mean(axis=0)
    sigma_min = float(np.linalg.eigvalsh(Md.T @ Md)[0]) if N else 0.0
    sigma_min = max(sigma_min, 0.0)
    return lipschitz * (1.0 + 2.0 * N * delta / (sigma_min + ridge))


def approximate_or_evaluate(oracle: CountingOracle, i: int, x, delta: float, store: HistoryStore,
                            config, allow_approx: bool = True, limit: Optional[int] = None):
    """Value of element ``i`` at ``x``: reused, regressed from history, or evaluated.

    Returns ``(value, source)`` with source in ``{"cached", "approx", "exact"}``.
    """
    problem = oracle.problem
    x = np.asarray(x, dtype=float)
    if not problem.bounds.contains(x):
        raise ValueError("element values are only taken at feasible points")
    w = problem.features[i]
    group = problem.group(i)
    hit = store.exact(x, w, group)
    if hit is not None:
        return hit, CACHED
    if allow_approx:
        nb = store.query_neighbors(x, w, delta, group, limit)
        if len(nb) >= config.n_min:
            return regress(nb, np.concatenate([x, w]), config.ridge).value, APPROX
    value = float(oracle.evaluate(x, [i])[0])
    store.record(x, w, value, group)
    return value, EXACT


def point_values(oracle: CountingOracle, x, delta: float, store: HistoryStore, config,
                 allow_approx: bool = True, limit: Optional[int] = None, exact_only: bool = False):
    """All element values at ``x``; exact evaluations are batched.

    Raises ``BudgetExhausted`` before evaluating anything if the point cannot
    be completed within the remaining budget.
    """
    problem = oracle.problem
    x = np.asarray(x, dtype=float)
    p = problem.p
    vals = np.empty(p)
    sources = [None] * p
    need = []
    for i in range(p):
        w = problem.features[i]
        group = problem.group(i)
        hit = store.exact(x, w, group)
        if hit is not None:
            vals[i], sources[i] = hit, CACHED
            continue
        if allow_approx and not exact_only:
            nb = store.query_neighbors(x, w, delta, group, limit)
            if len(nb) >= config.n_min:
                vals[i] = regress(nb, np.concatenate([x, w]), config.ridge).value
                sources[i] = APPROX
                continue
        need.append(i)
    if need:
        if len(need) > oracle.remaining:
            raise BudgetExhausted(f"{len(need)} evaluations needed, {oracle.remaining} left")
        out = oracle.evaluate(x, need)
        for i, v in zip(need, out):
            vals[i], sources[i] = v, EXACT
            store.record(x, problem.features[i], v, problem.group(i))
    return vals, sources


def score_candidates(store: HistoryStore, x_k, delta_tr: float, delta_app: float, bounds: Bounds,
                     features, u_thr: int, groups=None, limit: Optional[int] = None,
                     allow_approx: bool = True, tr_norm=L2):
    """History points in the trust region ordered by distance, filtered by score.

    The score of a point counts the elements whose value there is either
    stored exactly or has at least one history neighbour within
    ``delta_app``. Returns ``(points, scores)``.
    """
    x_k = np.asarray(x_k, dtype=float)
    features = np.asarray(features, dtype=float)
    features = features.reshape(features.shape[0] if features.ndim else 0, store.n_w)
    p = features.shape[0]
    groups = np.zeros(p, dtype=np.int64) if groups is None else np.asarray(groups)
    pts = store.distinct_x()
    if pts.shape[0] == 0:
        return np.empty((0, x_k.size)), np.empty(0, dtype=np.int64)
    keep = []
    for j, xc in enumerate(pts):
        if np.array_equal(xc, x_k):
            continue
        if norm(xc - x_k, tr_norm) <= delta_tr and bounds.contains(xc):
            keep.append(j)
    pts = pts[keep]
    if pts.shape[0] == 0:
        return pts, np.empty(0, dtype=np.int64)
    avail = np.zeros((pts.shape[0], p), dtype=bool)
    for c, xc in enumerate(pts):
        for i in range(p):
            avail[c, i] = store.exact(xc, features[i], int(groups[i])) is not None
    if allow_approx:
        n = len(store) if limit is None else min(limit, len(store))
        if n > 0:
            for g in np.unique(groups):
                cols = np.nonzero(groups == g)[0]
                rows = np.arange(n)
                if store.partitioned:
                    rows = rows[store.groups[:n] == g]
                if rows.size == 0:
                    continue
                hit = kernels.ball_any(pts, features[cols], store.x[rows], store.w[rows], float(delta_app))
                avail[:, cols] |= hit
    scores = avail.sum(axis=1)
    sel = np.nonzero(scores >= u_thr)[0]
    dist = np.linalg.norm(pts[sel] - x_k, axis=1)
    order = sel[np.argsort(dist, kind="stable")]
    return pts[order], scores[order]

