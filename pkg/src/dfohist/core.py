"""Shared types: box bounds, trust-region norms, solver configuration,
composite problems and the counting oracle."""
from __future__ import annotations

import configparser
import dataclasses
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "L2",
    "LINF",
    "Bounds",
    "NormKind",
    "norm",
    "project_box",
    "SolverConfig",
    "ConfigError",
    "OuterFunction",
    "CompositeProblem",
    "CountingOracle",
    "BudgetExhausted",
    "InfeasiblePointError",
    "make_rng",
]

L2 = "l2"
LINF = "linf"
_NORMS = (L2, LINF)


class ConfigError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    """Raised before an exact evaluation that would exceed the budget."""


class InfeasiblePointError(ValueError):
    pass


@dataclass(frozen=True)
class Bounds:
    """Box ``[lower, upper]``; infinite entries allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise ValueError("bounds contain NaN")
        if not np.all(lo < hi):
            raise ValueError("bounds require lower < upper componentwise")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, n: int) -> "Bounds":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def nonnegative(cls, n: int) -> "Bounds":
        return cls(np.zeros(n), np.full(n, np.inf))

    @property
    def n(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True)
class NormKind:
    """Trust-region norm with its equivalence constants against the 2-norm.

    ``||v||_2 <= kappa_tr0 * ||v||_tr`` and ``||v||_tr <= kappa_tr1 * ||v||_2``.
    The approximation norm is always the 2-norm.
    """

    tr: str = L2

    def __post_init__(self):
        if self.tr not in _NORMS:
            raise ValueError(f"unsupported trust-region norm {self.tr!r}")

    def kappa_tr0(self, n: int) -> float:
        return 1.0 if self.tr == L2 else math.sqrt(n)

    @property
    def kappa_tr1(self) -> float:
        return 1.0

    def __call__(self, v) -> float:
        return norm(v, self.tr)


def norm(v, kind=L2) -> float:
    if isinstance(kind, NormKind):
        kind = kind.tr
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    if kind == L2:
        return float(np.linalg.norm(v))
    if kind == LINF:
        return float(np.max(np.abs(v)))
    raise ValueError(f"unsupported norm {kind!r}")


def project_box(x, bounds: Bounds) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != bounds.lower.shape:
        raise ValueError("dimension mismatch between point and bounds")
    return np.minimum(np.maximum(x, bounds.lower), bounds.upper)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class SolverConfig:
    delta0: float = 1.0
    delta_max: float = 1e3
    gamma_dec: float = 0.5
    gamma_inc: float = 2.0
    eta: float = 0.1
    mu: float = 10.0
    eps_c: float = 1e-2
    c_app: float = 1.0
    kappa_fcd: float = 0.5
    xi: float = 1e-3
    ridge: float = 1e-6
    u_thr: Optional[int] = None  # None -> p
    n_min: int = 1
    budget: int = 1000
    seed: int = 0
    tr_norm: str = L2
    max_iters: int = 10_000
    radius_floor: float = 1e-12
    refine_steps: int = 25

    def __post_init__(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(0 < self.delta0 < math.inf, "delta0 must be in (0, inf)")
        need(0 < self.delta_max < math.inf, "delta_max must be in (0, inf)")
        need(self.delta0 <= self.delta_max, "delta0 must not exceed delta_max")
        need(0 < self.gamma_dec < 1, "gamma_dec must be in (0, 1)")
        need(1 < self.gamma_inc < math.inf, "gamma_inc must be in (1, inf)")
        need(0 < self.eta < math.inf, "eta must be positive")
        need(0 < self.mu < math.inf, "mu must be positive")
        need(0 < self.eps_c < math.inf, "eps_c must be positive")
        need(0 <= self.c_app < math.inf, "c_app must be nonnegative")
        need(0 < self.kappa_fcd <= 1, "kappa_fcd must be in (0, 1]")
        need(self.xi > 0, "xi must be positive")
        need(self.ridge >= 0, "ridge must be nonnegative")
        need(self.u_thr is None or self.u_thr >= 0, "u_thr must be nonnegative")
        need(self.n_min >= 1, "n_min must be at least 1")
        need(self.budget >= 1, "budget must be positive")
        need(self.tr_norm in _NORMS, f"tr_norm must be one of {_NORMS}")
        need(self.max_iters >= 1, "max_iters must be positive")
        need(self.radius_floor >= 0, "radius_floor must be nonnegative")
        need(self.refine_steps >= 0, "refine_steps must be nonnegative")

    @property
    def norm_kind(self) -> NormKind:
        return NormKind(self.tr_norm)

    def check_poisedness(self, bounds: Bounds) -> None:
        """Reject ``xi`` above the threshold that guarantees poised fills."""
        from .geometry import xi_max

        limit = xi_max(bounds.n, bounds, self.delta_max, self.norm_kind.kappa_tr1)
        if self.xi > limit:
            raise ConfigError(f"xi={self.xi:g} exceeds the admissible maximum {limit:g}")

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, mapping) -> "SolverConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            name = key.strip().lower()
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(name, raw, known[name].default)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "SolverConfig":
        """Load a flat ``key = value`` file; ``#`` starts a comment."""
        text = Path(path).read_text(encoding="utf-8")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        try:
            parser.read_string("[solver]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(dict(parser["solver"]))

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"


def _coerce(name, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if name == "tr_norm":
            return text.lower()
        if name == "u_thr":
            return None if text.lower() in ("", "none", "p") else int(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


class OuterFunction:
    """Glass-box outer function ``h``; subclasses supply value/gradient/hessian."""

    def value(self, v) -> float:
        raise NotImplementedError

    def gradient(self, v) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, v) -> np.ndarray:
        raise NotImplementedError


@dataclass
class CompositeProblem:
    """``f(x) = h(F(x))`` over a box.

    ``element(i, x)`` evaluates one black-box element. ``features`` holds the
    exogenous vector attached to each element (one row per element, possibly
    zero columns). With ``shared_history`` every element draws on the same
    history (least-squares setting), which requires distinct feature rows;
    otherwise, and always when ``features`` is omitted, records are kept per
    element.
    ``evaluate_many(x, indices)`` is an optional batched oracle.
    """

    n_x: int
    p: int
    element: Callable[[int, np.ndarray], float]
    outer: OuterFunction
    bounds: Bounds
    features: Optional[np.ndarray] = None
    shared_history: bool = True
    evaluate_many: Optional[Callable[[np.ndarray, Sequence[int]], np.ndarray]] = None
    name: str = "composite"

    def __post_init__(self):
        if self.bounds.n != self.n_x:
            raise ValueError("bounds dimension differs from n_x")
        if self.features is None:
            # nothing tells the elements apart, so each keeps its own records
            self.features = np.zeros((self.p, 0))
            self.shared_history = False
        self.features = np.asarray(self.features, dtype=float).reshape(self.p, -1)
        if self.shared_history and np.unique(self.features, axis=0).shape[0] < self.p:
            raise ValueError("shared history needs a distinct feature row for every element")

    @property
    def n_w(self) -> int:
        return self.features.shape[1]

    def group(self, i: int) -> int:
        return 0 if self.shared_history else int(i)

    def objective(self, x) -> float:
        """Exact f(x); bypasses any counting."""
        x = np.asarray(x, dtype=float)
        vals = np.array([self.element(i, x) for i in range(self.p)])
        return float(self.outer.value(vals))


@dataclass
class CountingOracle:
    """Counts exact element evaluations and refuses infeasible points.

    Every call goes through ``evaluate``; the counter is guarded by a lock.
    """

    problem: CompositeProblem
    budget: Optional[int] = None
    count: int = 0
    log_points: bool = False
    calls: list = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def remaining(self) -> float:
        return math.inf if self.budget is None else self.budget - self.count

    def evaluate(self, x, indices) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        indices = [int(i) for i in indices]
        if not indices:
            return np.empty(0)
        if not self.problem.bounds.contains(x):
            raise InfeasiblePointError(f"oracle call outside the feasible box at {x!r}")
        with self._lock:
            if self.budget is not None and self.count + len(indices) > self.budget:
                raise BudgetExhausted(
                    f"{len(indices)} evaluations requested with {self.budget - self.count} left"
                )
            self.count += len(indices)
            if self.log_points:
                self.calls.append((x.copy(), tuple(indices)))
        if self.problem.evaluate_many is not None:
            out = np.asarray(self.problem.evaluate_many(x, indices), dtype=float).reshape(-1)
        else:
            out = np.array([self.problem.element(i, x) for i in indices], dtype=float)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("oracle returned a non-finite value")
        return out
