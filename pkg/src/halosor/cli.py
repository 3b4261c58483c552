"""Command line interface: solve (one run), sweep (h x d grid), oracle
(direct-solve diff)."""

import argparse
import json
import sys

import numpy as np

from .comm import DelayModel
from .problems import BubbleSpec, bubble_instance, manufactured_instance
from .runner import (direct_solve, run, sweep_experiment, write_conv_log,
                     write_sweep_csv)
from .worker import Policy


def _parse_grid(text):
    try:
        nx, ny = text.lower().split("x")
        return int(nx), int(ny)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"grid must look like 64x32, got {text!r}")


def _make_instance(args):
    nx, ny = args.grid
    if args.problem == "manufactured":
        return manufactured_instance(nx, ny)
    # heavy phase inside the circle: a weakly-enclosed light region
    # carries a near-null mode that point-SOR drains extremely slowly
    spec = BubbleSpec(centers=[(0.5, 0.5)], radius=0.2,
                      rho_inside=args.density_ratio, rho_outside=1.0)
    return bubble_instance(nx, ny, spec, seed=args.seed)


def _make_policy(args):
    if args.policy == "sync":
        return Policy.synchronous()
    if args.policy == "async":
        return Policy.asynchronous()
    return Policy.event_triggered(h=args.horizon, d=args.decay,
                                  warmup=args.warmup)


def _make_delay_model(args, n_pes):
    slow = {}
    if args.slow_pe is not None:
        base = [1.0] * n_pes
        base[args.slow_pe] = args.slow_factor
        slow["compute_base"] = base
    return DelayModel(n_pes=n_pes, seed=args.seed,
                      compute_jitter=args.compute_jitter,
                      latency_base=args.latency,
                      latency_jitter=args.latency_jitter, **slow)


def _add_common(p):
    p.add_argument("--grid", type=_parse_grid, default=(64, 32),
                   help="grid as NXxNY (default 64x32)")
    p.add_argument("--pes", type=int, default=4)
    p.add_argument("--problem", choices=["manufactured", "bubble"],
                   default="bubble")
    p.add_argument("--density-ratio", type=float, default=1000.0)
    p.add_argument("--omega", type=float, default=1.5)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--window", type=int, default=50, metavar="W",
                   help="consecutive below-tol iterations for local "
                        "convergence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compute-jitter", type=float, default=0.05)
    p.add_argument("--latency", type=float, default=0.1)
    p.add_argument("--latency-jitter", type=float, default=0.5)
    p.add_argument("--slow-pe", type=int, default=None,
                   help="index of a PE to slow down")
    p.add_argument("--slow-factor", type=float, default=5.0)
    p.add_argument("--out", default=None, help="output file path")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="halosor",
        description="Pressure Poisson SOR solver with pluggable "
                    "communication policies")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("solve", help="one run, RunReport as JSON")
    _add_common(sp)
    sp.add_argument("--policy", choices=["sync", "async", "event"],
                    default="async")
    sp.add_argument("--backend", choices=["virtual", "threads"],
                    default="virtual")
    sp.add_argument("--horizon", type=float, default=200.0)
    sp.add_argument("--decay", type=float, default=0.8)
    sp.add_argument("--warmup", type=int, default=200)
    sp.add_argument("--conv-log", default=None,
                    help="write convergence events as JSON-lines")

    sw = sub.add_parser("sweep", help="event-triggered h x d grid, CSV")
    _add_common(sw)
    sw.add_argument("--horizons", type=float, nargs="+",
                    default=[100.0, 200.0, 400.0])
    sw.add_argument("--decays", type=float, nargs="+",
                    default=[0.5, 0.8, 0.9])
    sw.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sw.add_argument("--warmup", type=int, default=200)

    orc = sub.add_parser("oracle", help="direct solve and diff vs SOR")
    _add_common(orc)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "solve":
        inst = _make_instance(args)
        report = run(inst, args.pes, _make_policy(args),
                     backend=args.backend, omega=args.omega, tol=args.tol,
                     seed=args.seed,
                     delay_model=_make_delay_model(args, args.pes),
                     conv_window=args.window)
        if args.conv_log:
            write_conv_log(report, args.conv_log)
        text = report.to_json(indent=2)
        if args.out:
            with open(args.out, "w") as f:
                f.write(text)
        else:
            print(text)
        return 0

    if args.cmd == "sweep":
        inst = _make_instance(args)
        rows = sweep_experiment(
            inst, args.horizons, args.decays, args.seeds, n_pes=args.pes,
            omega=args.omega, tol=args.tol, warmup=args.warmup,
            conv_window=args.window,
            delay_kwargs={"compute_jitter": args.compute_jitter,
                          "latency_base": args.latency,
                          "latency_jitter": args.latency_jitter})
        out = args.out or "sweep.csv"
        write_sweep_csv(rows, out)
        print(f"wrote {len(rows)} rows to {out}")
        return 0

    if args.cmd == "oracle":
        inst = _make_instance(args)
        exact = direct_solve(inst)
        report = run(inst, args.pes, Policy.synchronous(),
                     backend="virtual", omega=args.omega, tol=args.tol,
                     seed=args.seed)
        a = report.solution - report.solution.mean()
        b = exact - exact.mean()
        diff = float(np.max(np.abs(a - b)))
        doc = {"max_abs_diff_mean_subtracted": diff,
               "final_rel_residual": report.final_rel_residual,
               "iterations": report.per_pe_iterations[0]}
        text = json.dumps(doc, indent=2)
        if args.out:
            with open(args.out, "w") as f:
                f.write(text)
        else:
            print(text)
        return 0


if __name__ == "__main__":
    sys.exit(main())
