"""Trust-region main loop with history-based approximations at interpolation points."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BudgetExhausted, CompositeProblem, ConfigError, CountingOracle, SolverConfig, project_box
from .geometry import build_from_candidates, next_direction
from .models import fit_linear_elements, master_model, solve_tr_subproblem, stationarity
from .surrogate import APPROX, HistoryStore, point_values, score_candidates

__all__ = [
    "WITH_HISTORY",
    "NO_HISTORY",
    "CRITICALITY",
    "SUCCESSFUL",
    "UNSUCCESSFUL",
    "TraceRow",
    "SolverState",
    "SolverReport",
    "ratio",
    "solve",
    "run_mode",
    "write_report",
    "TRACE_COLUMNS",
]

log = logging.getLogger(__name__)

WITH_HISTORY = "with_history"
NO_HISTORY = "no_history"
_MODES = (WITH_HISTORY, NO_HISTORY)

CRITICALITY = "criticality"
SUCCESSFUL = "successful"
UNSUCCESSFUL = "unsuccessful"

TRACE_COLUMNS = ("k", "delta", "delta_app", "pi_m", "rho", "step", "exact_evals", "approx_uses", "f")


@dataclass(frozen=True)
class TraceRow:
    """One iteration. ``delta``/``delta_app`` are the values used in the
    iteration; counters are cumulative at its end; ``f`` is ``f(x_{k+1})``."""

    k: int
    delta: float
    delta_app: float
    pi_m: float
    rho: float
    step: str
    exact_evals: int
    approx_uses: int
    f: float

    def astuple(self):
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass
class SolverState:
    k: int
    x: np.ndarray
    delta: float
    delta_app: float
    f: float
    values: np.ndarray
    exact_evals: int = 0
    approx_uses: int = 0


@dataclass
class SolverReport:
    x: np.ndarray
    f: float
    trace: list = field(default_factory=list)
    termination: str = ""
    exact_evals: int = 0
    approx_uses: int = 0
    budget: int = 0
    mode: str = WITH_HISTORY
    x0: Optional[np.ndarray] = None
    f0: float = float("nan")


def ratio(f_k, f_trial, m_k_at_xk, m_k_at_trial) -> float:
    """Actual over predicted reduction."""
    pred = m_k_at_xk - m_k_at_trial
    if not pred > 0:
        raise ValueError(f"predicted reduction must be positive, got {pred!r}")
    return (f_k - f_trial) / pred


def _candidate_lookup(cands, x_k):
    return {(c - x_k).tobytes(): c for c in cands}


def _interpolation_points(problem, config, store, state, allow_approx, limit, u_thr):
    bounds = problem.bounds
    cands, _ = score_candidates(
        store, state.x, state.delta, state.delta_app, bounds, problem.features, u_thr,
        groups=[problem.group(i) for i in range(problem.p)], limit=limit,
        allow_approx=allow_approx, tr_norm=config.tr_norm,
    )
    iset = build_from_candidates(state.x, state.delta, cands, config.xi, bounds, config.tr_norm)
    while not iset.complete:
        iset = next_direction(iset, state.x, state.delta, bounds, config.tr_norm)
    lookup = _candidate_lookup(cands, state.x)
    points = []
    for d in iset.directions[1:]:
        pt = lookup.get(d.tobytes())
        if pt is None:
            pt = project_box(state.x + d, bounds)
        points.append(pt)
    return points


def solve(problem: CompositeProblem, x0, config: SolverConfig, store: Optional[HistoryStore] = None,
          mode: str = WITH_HISTORY, oracle: Optional[CountingOracle] = None) -> SolverReport:
    """Minimise ``h(F(x))`` over the box of ``problem`` within the exact-evaluation budget.

    Only records present in ``store`` when the solve starts are used for
    regression; records produced by this solve are reused as exact values.
    New exact values are appended to ``store``.
    """
    if mode not in _MODES:
        raise ConfigError(f"mode must be one of {_MODES}")
    bounds = problem.bounds
    n, p = problem.n_x, problem.p
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.size != n or not bounds.contains(x0):
        raise ValueError("x0 must be a feasible point of the right dimension")
    config.check_poisedness(bounds)
    if config.budget < p * (n + 1):
        raise ConfigError(f"budget {config.budget} cannot pay for one model ({p * (n + 1)} evaluations)")
    if store is None:
        store = HistoryStore(n, problem.n_w, partitioned=not problem.shared_history)
    if oracle is None:
        oracle = CountingOracle(problem, budget=config.budget)
    limit = len(store)
    allow_approx = mode == WITH_HISTORY
    u_thr = p if config.u_thr is None else config.u_thr
    outer = problem.outer

    report = SolverReport(x0.copy(), float("nan"), budget=config.budget, mode=mode, x0=x0.copy())
    try:
        c0, _ = point_values(oracle, x0, 0.0, store, config, exact_only=True)
    except BudgetExhausted:
        report.termination = "budget"
        return report
    f0 = float(outer.value(c0))
    report.f0 = f0
    state = SolverState(0, x0, config.delta0, config.c_app * config.delta0 ** 2, f0, c0)
    approx_uses = 0

    def finish(reason):
        report.x = state.x.copy()
        report.f = state.f
        report.termination = reason
        report.exact_evals = oracle.count
        report.approx_uses = approx_uses
        return report

    while True:
        if state.k >= config.max_iters:
            return finish("max_iters")
        if state.delta < config.radius_floor:
            return finish("radius_floor")
        state.delta_app = config.c_app * state.delta ** 2
        x_k = state.x

        points = _interpolation_points(problem, config, store, state, allow_approx, limit, u_thr)
        cols = [state.values]
        used = 0
        try:
            for pt in points:
                vals, src = point_values(oracle, pt, state.delta_app, store, config,
                                         allow_approx=allow_approx, limit=limit)
                used += sum(s == APPROX for s in src)
                cols.append(vals)
        except BudgetExhausted:
            return finish("budget")
        approx_uses += used
        D = np.column_stack([pt - x_k for pt in points])
        elem = fit_linear_elements(D, np.column_stack(cols))
        model = master_model(elem, outer)
        stat = stationarity(model.g, x_k, bounds, config.tr_norm)
        delta_k, delta_app_k = state.delta, state.delta_app

        if stat.pi <= config.eps_c and state.delta > config.mu * stat.pi:
            state.delta = config.gamma_dec * state.delta
            step, rho = CRITICALITY, 0.0
        else:
            s = solve_tr_subproblem(model, x_k, state.delta, bounds, config.kappa_fcd, stat,
                                    config.tr_norm, config.refine_steps)
            trial = project_box(x_k + s, bounds)
            try:
                ct, src = point_values(oracle, trial, 0.0, store, config, exact_only=True)
            except BudgetExhausted:
                return finish("budget")
            f_trial = float(outer.value(ct))
            rho = ratio(state.f, f_trial, 0.0, -model.decrease(trial - x_k))
            if rho >= config.eta:
                state.x, state.f, state.values = trial, f_trial, ct
                state.delta = min(config.gamma_inc * state.delta, config.delta_max)
                step = SUCCESSFUL
            else:
                state.delta = config.gamma_dec * state.delta
                step = UNSUCCESSFUL
        report.trace.append(TraceRow(state.k, delta_k, delta_app_k, stat.pi, rho, step,
                                     oracle.count, approx_uses, state.f))
        log.debug("k=%d delta=%.3e pi=%.3e rho=%.3f %s f=%.6e", state.k, delta_k, stat.pi, rho, step, state.f)
        state.k += 1


def run_mode(problem: CompositeProblem, x0, config: SolverConfig, mode: str,
             store: Optional[HistoryStore] = None, oracle: Optional[CountingOracle] = None) -> SolverReport:
    """``with_history`` regresses from prior records; ``no_history`` only ever evaluates."""
    return solve(problem, x0, config, store=store, mode=mode, oracle=oracle)


def write_report(report: SolverReport, path) -> None:
    """Tab-separated trace preceded by ``#`` summary lines and a header row."""
    lines = [
        f"# termination\t{report.termination}",
        f"# mode\t{report.mode}",
        f"# final_f\t{report.f:.17g}",
        "# final_x\t" + "\t".join(f"{v:.17g}" for v in report.x),
        f"# exact_evals\t{report.exact_evals}",
        f"# approx_uses\t{report.approx_uses}",
        "\t".join(TRACE_COLUMNS),
    ]
    for row in report.trace:
        vals = [f"{v:.17g}" if isinstance(v, float) else str(v) for v in row.astuple()]
        lines.append("\t".join(vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
