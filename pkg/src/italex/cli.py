"""Command-line front end: ``italex solve|bench|validate|path``.

Exit codes: 0 success, 2 bad input or configuration, 3 solver budget
exhausted, 4 unsupported method/geometry pairing. Every failure prints one
line starting with ``error:`` on stderr. ``ITALEX_LOG`` sets the log level.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import BudgetExhausted, InvalidArgument, ItalexError, UnsupportedConfiguration

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_UNSUPPORTED = 4

SOLVE_METHODS = ("italex-pg", "italex-gcg", "italex-smooth", "bigsam", "irpg")

log = logging.getLogger("italex")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: usage: {message} (see {self.prog} --help)", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _setup_logging(verbose):
    level = os.environ.get("ITALEX_LOG", "").upper()
    if verbose:
        level = "DEBUG" if verbose > 1 else "INFO"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write_json(path, text):
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def cmd_solve(args):
    from .baselines import BaselineConfig, run_baseline
    from .problem import load_instance
    from .solver import italex_ct

    inst = load_instance(args.instance)
    m = args.method
    if m.startswith("italex"):
        step = "gcg" if m == "italex-gcg" else "pg"
        rep = italex_ct(inst, args.eps, args.eps1, step=step, smooth=m == "italex-smooth",
                        max_total_steps=args.budget, snapshot_period=args.snapshot_period)
    else:
        cfg = BaselineConfig(method=m, delta=args.delta)
        rep = run_baseline(inst, cfg, args.budget or 10_000, args.snapshot_period)
    rep.config["seed"] = args.seed  # the solvers are deterministic; recorded for provenance
    f = rep.final
    alpha = "nan" if f["alpha"] is None else f"{f['alpha']:.10g}"
    print(f"phi={f['phi']:.10g} omega={f['omega']:.10g} alpha={alpha} N={f['N']} M={f['M']}")
    if args.out:
        _write_json(args.out, rep.to_json(timestamps=not args.no_timestamps))
    if rep.budget_exhausted and m.startswith("italex"):
        raise BudgetExhausted(f"step budget of {args.budget} exhausted before eps was reached")
    return EXIT_OK


def cmd_bench(args):
    from .bench import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.generator["seed"] = args.seed
    if args.iterations is not None:
        cfg.budget = {"iterations": args.iterations}
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    bundle = run_experiment(cfg, jobs=args.jobs)
    m = bundle["metrics"]
    for method in m.delta_phi:
        print(f"{method}: delta_phi={m.delta_phi[method][-1]:.6e} "
              f"delta_omega={m.delta_omega[method][-1]:.6e}")
    print(f"wrote {Path(cfg.output_dir) / 'results.json'} and metrics.csv")
    return EXIT_OK


def _shipped_geometries(dim):
    from .geometry import ElasticNet, EllipsoidNorm, L1Norm, SquaredQNorm

    rng = np.random.Generator(np.random.Philox(7))
    B = rng.standard_normal((dim, dim))
    Q = B @ B.T + 0.5 * np.eye(dim)
    return [L1Norm(), EllipsoidNorm(Q), ElasticNet(0.5, kappa=1), ElasticNet(0.5, kappa=2),
            SquaredQNorm(Q)]


def cmd_validate(args):
    from .geometry import validate_error_bound

    worst = 0.0
    ok = True
    rows = []
    for outer in _shipped_geometries(args.dim):
        rep = validate_error_bound(outer, args.samples, args.seed, args.dim, args.threshold)
        rows.append(rep)
        worst = max(worst, rep["max_violation"])
        ok &= rep["passed"]
        print(f"{rep['kind']}: kappa={rep['kappa']:g} gamma={rep['gamma']:.6g} "
              f"max_violation={rep['max_violation']:.3e} {'ok' if rep['passed'] else 'FAIL'}")
    if args.out:
        _write_json(args.out, json.dumps(rows, indent=1, sort_keys=True))
    if not ok:
        print(f"error: error-bound violation {worst:.3e} exceeds {args.threshold:g}",
              file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_path(args):
    from .bench import default_lambdas, regularization_path
    from .problem import load_instance

    inst = load_instance(args.instance)
    if args.lambdas:
        try:
            lambdas = [float(v) for v in args.lambdas.split(",")]
        except ValueError:
            raise InvalidArgument(f"--lambdas must be comma-separated numbers: {args.lambdas!r}")
    else:
        lambdas = default_lambdas(inst, args.levels)
    pts = regularization_path(inst, lambdas, tol=args.tol)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["lambda", "phi_gap", "omega"])
        for p in pts:
            w.writerow([repr(p["lam"]), repr(float(p["phi_gap"])), repr(float(p["omega"]))])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser():
    p = _Parser(prog="italex", description="Level-set expansion solver for simple bilevel problems.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one instance given as JSON")
    s.add_argument("instance")
    s.add_argument("--method", choices=SOLVE_METHODS, default="italex-pg")
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--eps1", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--budget", type=int, default=None, help="step/iteration budget")
    s.add_argument("--delta", type=float, default=None, help="Huber parameter for baselines")
    s.add_argument("--snapshot-period", type=int, default=50)
    s.add_argument("--no-timestamps", action="store_true")
    s.add_argument("--out", default=None, help="write the SolveReport JSON here")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run an experiment config")
    b.add_argument("config")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--iterations", type=int, default=None)
    b.add_argument("--out", default=None, help="output directory")
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="check error-bound constants of all geometries")
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--dim", type=int, default=3)
    v.add_argument("--threshold", type=float, default=1e-8)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("path", help="regularization path of an instance as CSV")
    r.add_argument("instance")
    r.add_argument("--lambdas", default=None, help="comma-separated weights")
    r.add_argument("--levels", type=int, default=25)
    r.add_argument("--tol", type=float, default=1e-10)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_path)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except UnsupportedConfiguration as exc:
        print(f"error: unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except BudgetExhausted as exc:
        print(f"error: budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (InvalidArgument, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ItalexError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
