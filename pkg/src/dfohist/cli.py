"""Command-line entry point: ``dfohist solve``, ``dfohist bench``, ``dfohist instance``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .bench import METHANOL_CONFIG, BenchPlan, run_compare, run_single_mode
from .core import ConfigError, SolverConfig, make_rng
from .driver import NO_HISTORY, WITH_HISTORY, run_mode, write_report
from .plotting import emit_plot
from .problems import X_BAR, InstanceFormatError, generate_instance, load_instance, methanol_problem, save_instance
from .surrogate import HistoryFormatError, HistoryStore

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2


def _parser():
    ap = argparse.ArgumentParser(prog="dfohist", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="solve one least-squares instance")
    s.add_argument("--problem", required=True, help="instance file (DFOINST format)")
    s.add_argument("--config", help="solver config file (key = value lines)")
    s.add_argument("--history", help="history file; read if present, rewritten after the solve")
    s.add_argument("--out", required=True, help="report file (tab-separated trace)")
    s.add_argument("--x0", help="comma-separated start point (default: reference parameters)")
    s.add_argument("--mode", choices=("history", "nohistory"), default="history")

    b = sub.add_parser("bench", help="sequential-instance benchmark")
    b.add_argument("problem", choices=("methanol",))
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--instances", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--budget-mult", type=int, default=2)
    b.add_argument("--mode", choices=("history", "nohistory", "compare"), default="compare")
    b.add_argument("--out-csv", required=True)
    b.add_argument("--plot", metavar="DIR")
    b.add_argument("--config", help="solver config overriding the benchmark preset")
    b.add_argument("--workers", type=int, default=1)

    g = sub.add_parser("instance", help="write one generated benchmark instance")
    g.add_argument("problem", choices=("methanol",))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--t", type=int, default=0)
    g.add_argument("--out", required=True)
    return ap


def _config(path, base):
    return base if path is None else SolverConfig.from_file(path)


def _cmd_solve(args):
    data, model = load_instance(args.problem)
    if model != "methanol":
        raise ConfigError(f"unsupported model {model!r}")
    problem = methanol_problem(data)
    cfg = _config(args.config, SolverConfig())
    cfg.check_poisedness(problem.bounds)
    try:
        x0 = X_BAR if args.x0 is None else np.array([float(v) for v in args.x0.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad --x0: {exc}") from exc
    if x0.size != problem.n_x or not problem.bounds.contains(x0):
        raise ConfigError("--x0 must be a feasible point with 5 components")
    store = None
    if args.history:
        try:
            store = HistoryStore.load(args.history)
        except FileNotFoundError:
            store = HistoryStore(problem.n_x, problem.n_w)
        if (store.n_x, store.n_w) != (problem.n_x, problem.n_w):
            raise ConfigError("history dimensions do not match the problem")
    mode = WITH_HISTORY if args.mode == "history" else NO_HISTORY
    report = run_mode(problem, x0, cfg, mode, store)
    write_report(report, args.out)
    if args.history and mode == WITH_HISTORY:
        store.save(args.history)
    print(f"{report.termination}: f={report.f:.10g} exact={report.exact_evals} approx={report.approx_uses}")


def _cmd_bench(args):
    cfg = _config(args.config, METHANOL_CONFIG)
    plan = BenchPlan(reps=args.reps, instances=args.instances, seed=args.seed, budget_mult=args.budget_mult,
                     mode=args.mode, out_csv=args.out_csv, plot_dir=args.plot, workers=args.workers, config=cfg)
    res = run_compare(plan) if plan.mode == "compare" else run_single_mode(plan)
    if args.plot:
        for p in emit_plot(args.out_csv, args.plot):
            print(p)
    last = res.aggregates[-1]
    print(f"t={last['t']} cum_improvement={last['cum_improvement']:.6g} Mbar={last['Mbar']:.6g}")


def _cmd_instance(args):
    data, _ = generate_instance(make_rng(args.seed, args.t))
    save_instance(args.out, data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handler = {"solve": _cmd_solve, "bench": _cmd_bench, "instance": _cmd_instance}[args.cmd]
    try:
        handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, HistoryFormatError, InstanceFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
