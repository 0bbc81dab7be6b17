"""Command-line entry point.

Exit codes: 0 success, 2 convergence failure, 3 validation or oracle
failure, 4 I/O or schema error.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .baselines import Schedule, perfect_transfer_schedule, simulate_schedule, stepwise_schedule
from .chain import ChainSpec, WaveState
from .dynamics import conservation_report, integrate, qbe_rhs
from .errors import BrachistochroneError, ConvergenceError, SchemaError
from .oracle import OracleReport, closure_report, rhs_equivalence
from .solver import (
    SHOOTING_MAX_SITES, ShootingParams, Solution, fit_scaling, initial_control, solve, sweep,
)

log = logging.getLogger("brachistochrone")

EXIT_OK, EXIT_CONVERGENCE, EXIT_VALIDATION, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Validated options shared by the solving commands."""

    n_sites: int = 3
    j0: float = 1.0
    method: str = "auto"
    tol: float = None
    int_tol: float = 1e-12
    samples: int = 201
    seed_store: Path = None
    out: Path = None
    jobs: int = 1

    def __post_init__(self):
        if self.n_sites < 2:
            raise UsageError("--n must be at least 2")
        if not self.j0 > 0:
            raise UsageError("--j0 must be positive")
        if self.method not in ("auto", "shooting", "gradient"):
            raise UsageError(f"unknown method {self.method!r}")
        if self.tol is not None and not 0 < self.tol <= 1e-3:
            raise UsageError("--tol must lie in (0, 1e-3]")
        if not 1e-14 <= self.int_tol <= 1e-6:
            raise UsageError("--int-tol must lie in [1e-14, 1e-6]")
        if self.samples < 2:
            raise UsageError("--samples must be at least 2")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")

    @property
    def spec(self):
        return ChainSpec(self.n_sites, self.j0)

    @property
    def resolved_method(self):
        if self.method != "auto":
            return self.method
        return "shooting" if self.n_sites <= SHOOTING_MAX_SITES else "gradient"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _emit(obj):
    print(json.dumps(io._jsonable(obj)), flush=True)


def _open_store(path, writable=True):
    """Store at ``path`` (or the environment default), else the bundled one."""
    path = path or io.default_seed_store_path()
    if path is not None:
        store = io.SeedStore.load(path)
        if not len(store):
            store.entries.update(io.bundled_seed_store().entries)
        return store, writable
    return io.bundled_seed_store(), False


def _solve_with_store(cfg, store):
    """Solve ``cfg.n_sites``, continuing from the longest stored chain below it."""
    N, spec = cfg.n_sites, cfg.spec
    kw = {"int_tol": cfg.int_tol}
    if N in store:
        guess = store.get(N).params
        return solve(spec, cfg.method, guess, cfg.tol, expected_tau=guess.j1_initial / cfg.j0,
                     **kw)
    below = [n for n in store.entries if n < N]
    if not below:
        return solve(spec, cfg.method, None, cfg.tol, **kw)
    start = max(below)
    seeds = {start: store.get(start).params}
    sols = sweep(range(start, N + 1), cfg.j0, cfg.method, seeds, cfg.tol, **kw)
    for s in sols[:-1]:
        store.put(s)
    final = sols[-1]
    if not final.converged:
        raise ConvergenceError(f"continuation to N={N} failed", best=final)
    return final


def cmd_solve(args):
    cfg = RunConfig(args.n, args.j0, args.method, args.tol, args.int_tol,
                    seed_store=args.seed_store, out=args.out)
    store, writable = _open_store(cfg.seed_store)
    out = cfg.out or Path(f"solution_N{cfg.n_sites}.json")
    status = EXIT_OK
    try:
        sol = _solve_with_store(cfg, store)
    except ConvergenceError as exc:
        log.error("%s", exc)
        sol = exc.best
        status = EXIT_CONVERGENCE
    if sol is None:
        return EXIT_CONVERGENCE
    io.write_json(out, sol)
    if writable and status == EXIT_OK:
        store.put(sol)
        store.merge_save()
    _emit({"n_sites": cfg.n_sites, "j0": cfg.j0, "tau": sol.tau, "fidelity": sol.fidelity,
           "residual_norm": sol.residual_norm, "converged": sol.converged,
           "method": sol.method, "out": str(out)})
    return status


def _solve_seeded(job):
    N, j0, method, tol, int_tol, vec = job
    guess = ShootingParams.from_vector(vec)
    try:
        return solve(ChainSpec(N, j0), method, guess, tol, int_tol=int_tol,
                     expected_tau=guess.j1_initial / j0)
    except ConvergenceError as exc:
        return exc.best


def cmd_sweep(args):
    if not 2 <= args.n_min < args.n_max:
        raise UsageError("need 2 <= --n-min < --n-max")
    cfg = RunConfig(args.n_max, args.j0, args.method, args.tol, args.int_tol,
                    seed_store=args.seed_store, out=args.out, jobs=args.jobs)
    store, writable = _open_store(cfg.seed_store)
    seeds = store.seeds()
    n_values = list(range(args.n_min, args.n_max + 1))
    if cfg.jobs > 1 and all(n in seeds for n in n_values):
        # every chain has its own seed, so the solves are independent
        jobs = [(n, cfg.j0, cfg.method, cfg.tol, cfg.int_tol, seeds[n].to_vector())
                for n in n_values]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            sols = list(pool.map(_solve_seeded, jobs))
    else:
        sols = sweep(n_values, cfg.j0, cfg.method, {n: seeds[n] for n in n_values if n in seeds},
                     cfg.tol, int_tol=cfg.int_tol,
                     on_result=lambda s: log.info("N=%d tau=%.6f converged=%s",
                                                  s.spec.n_sites, s.tau, s.converged))
    out = cfg.out or Path(f"sweep_N{args.n_min}-{args.n_max}.csv")
    io.write_sweep_csv(out, sols)
    if writable:
        for s in sols:
            store.put(s)
        store.merge_save()
    summary = {"out": str(out), "solved": sum(s.converged for s in sols), "total": len(sols)}
    points = [(s.spec.n_sites, s.params.j1_initial) for s in sols
              if s.converged and s.spec.n_sites >= 3]
    if len({n for n, _ in points}) >= 3:
        summary["fit"] = _fit_summary(fit_scaling(points))
    _emit(summary)
    return EXIT_OK if all(s.converged for s in sols) else EXIT_CONVERGENCE


def _fit_summary(fit):
    return {"slope": fit.slope, "intercept": fit.intercept,
            "residual_sum_squares": fit.residual_sum_squares,
            "max_abs_residual": fit.max_abs_residual, "n_range": list(fit.n_range)}


def cmd_fit(args):
    points = [(n, t) for n, t in io.read_sweep_points(args.input)
              if (args.n_min is None or n >= args.n_min) and (args.n_max is None or n <= args.n_max)]
    if len({n for n, _ in points}) < 3:
        raise UsageError("need at least three converged rows with distinct N")
    _emit(_fit_summary(fit_scaling(points)))
    return EXIT_OK


def cmd_baseline(args):
    spec = RunConfig(args.n, args.j0).spec
    kinds = ["stepwise", "perfect"] if args.kind == "both" else [args.kind]
    for kind in kinds:
        sched = stepwise_schedule(spec) if kind == "stepwise" else perfect_transfer_schedule(spec)
        run = simulate_schedule(sched, samples=2)
        if args.out is not None:
            out = Path(args.out)
            if len(kinds) > 1:
                out = out.with_name(f"{out.stem}_{kind}{out.suffix}")
            io.write_json(out, sched)
        _emit({"kind": kind, "n_sites": spec.n_sites, "j0": spec.j0, "tau": sched.duration,
               "fidelity": float(run.fidelity[-1])})
    return EXIT_OK


def trajectory_table(doc, samples, int_tol=1e-12):
    """``(times, couplings, probabilities)`` for a solution or a schedule."""
    if isinstance(doc, Solution):
        spec = doc.spec
        vec = doc.params.to_vector() * (spec.j0 / doc.params.j1_initial)
        traj = integrate(initial_control(ShootingParams.from_vector(vec), spec),
                         WaveState.site(spec), doc.tau, tol=int_tol, samples=samples)
        return traj.times, traj.couplings, traj.probabilities
    run = simulate_schedule(doc, samples=samples)
    return run.times, doc.couplings_at(run.times), run.probabilities


def cmd_simulate(args):
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    doc = io.read_json(args.input)
    if not isinstance(doc, (Solution, Schedule)):
        raise SchemaError("field 'kind': expected a solution or a schedule")
    t, J, P = trajectory_table(doc, args.samples)
    out = args.out or Path(Path(args.input).stem + "_trajectory.csv")
    io.write_trajectory_csv(out, t, J, P)
    x = P @ np.arange(1, P.shape[1] + 1)
    _emit({"out": str(out), "samples": int(t.size), "final_fidelity": float(P[-1, -1]),
           "final_position": float(x[-1])})
    return EXIT_OK


def verify_reports(n_conservation=15, int_tol=1e-10, n_max_baseline=40, seed=0, store=None):
    """Run the oracle, conservation and baseline checks; returns a list of reports."""
    reports = [rhs_equivalence(qbe_rhs, range(3, 9), 100, seed),
               closure_report(range(3, 9), 100, seed)]

    store = store or io.bundled_seed_store()
    cfg = RunConfig(n_conservation)
    sol = _solve_with_store(cfg, store)
    vec = sol.params.to_vector() * (sol.spec.j0 / sol.params.j1_initial)
    traj = integrate(initial_control(ShootingParams.from_vector(vec), sol.spec),
                     WaveState.site(sol.spec), sol.tau, tol=int_tol)
    cons = conservation_report(traj)
    drift = {k: float(v) for k, v in vars(cons).items()}
    worst = max(drift, key=drift.get)
    reports.append(OracleReport("conservation", drift[worst], 1, 1e-8,
                                {"n_sites": n_conservation, "tol": int_tol, "worst": worst,
                                 **drift}))

    for kind, build in (("stepwise", stepwise_schedule), ("perfect", perfect_transfer_schedule)):
        worst_dev, worst_n = -1.0, None
        for N in range(2, n_max_baseline + 1):
            run = simulate_schedule(build(ChainSpec(N)), samples=2)
            dev = 1.0 - float(run.fidelity[-1])
            if dev > worst_dev:
                worst_dev, worst_n = dev, N
        reports.append(OracleReport(f"{kind}_fidelity", max(worst_dev, 0.0),
                                    n_max_baseline - 1, 1e-10,
                                    {"n_sites": worst_n, "infidelity": worst_dev}))
    return reports


def cmd_verify(args):
    store, _ = _open_store(args.seed_store, writable=False)
    reports = verify_reports(args.n, store=store)
    out = Path(args.out or "verify")
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        io.write_json(out / f"{r.name}.json", r)
        _emit({"name": r.name, "max_abs_deviation": r.max_abs_deviation,
               "threshold": r.threshold, "passed": r.passed})
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VALIDATION


def cmd_export(args):
    """Seed store as a table: time and initial multipliers per chain length."""
    store, _ = _open_store(args.seed_store, writable=False)
    if not len(store):
        raise UsageError("seed store is empty")
    n_max = max(store.entries)
    header = (["N", "tau_j0", "fidelity", "method"]
              + [f"lambda_1_{q}" for q in range(3, n_max + 1)])
    rows = []
    for n, e in sorted(store.entries.items()):
        lam = list(e.multipliers) + [float("nan")] * (n_max - n)
        rows.append([n, e.tau_j0, e.fidelity, e.method] + lam)
    out = args.out or Path("seeds_table.csv")
    io._write_csv(out, header, rows)
    _emit({"out": str(out), "entries": len(rows)})
    return EXIT_OK


def build_parser():
    p = _Parser(prog="brachistochrone", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, n=True):
        if n:
            sp.add_argument("--n", type=int, required=True, help="number of sites")
        sp.add_argument("--j0", type=float, default=1.0, help="coupling budget")
        sp.add_argument("--method", default="auto", choices=["auto", "shooting", "gradient"])
        sp.add_argument("--tol", type=float, default=None,
                        help="residual (shooting) or infidelity (gradient) target")
        sp.add_argument("--int-tol", type=float, default=1e-12, help="integration tolerance")
        sp.add_argument("--seed-store", type=Path, default=None,
                        help=f"seed store path (default: ${io.SEED_STORE_ENV} or bundled)")
        sp.add_argument("--out", type=Path, default=None)

    sp = sub.add_parser("solve", help="solve one chain length")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="solve a range of chain lengths with continuation")
    common(sp, n=False)
    sp.add_argument("--n-min", type=int, required=True)
    sp.add_argument("--n-max", type=int, required=True)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("baseline", help="stepwise and perfect-transfer reference protocols")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--j0", type=float, default=1.0)
    sp.add_argument("--kind", default="both", choices=["stepwise", "perfect", "both"])
    sp.add_argument("--out", type=Path, default=None, help="schedule JSON path")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("simulate", help="trajectory CSV from a solution or schedule file")
    sp.add_argument("input", type=Path)
    sp.add_argument("--samples", type=int, default=201)
    sp.add_argument("--out", type=Path, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="linear time law from a sweep CSV")
    sp.add_argument("input", type=Path)
    sp.add_argument("--n-min", type=int, default=None)
    sp.add_argument("--n-max", type=int, default=None)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("verify", help="oracle, conservation and baseline reports")
    sp.add_argument("--n", type=int, default=15, help="chain length for the conservation check")
    sp.add_argument("--seed-store", type=Path, default=None)
    sp.add_argument("--out", type=Path, default=None, help="report directory")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("export", help="seed store as a CSV table")
    sp.add_argument("--seed-store", type=Path, default=None)
    sp.add_argument("--out", type=Path, default=None)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (BrachistochroneError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
