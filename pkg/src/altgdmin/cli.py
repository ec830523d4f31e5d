"""``altgdmin`` command line: run, sweep, compare and inspect."""
import argparse
import json
import sys

from . import experiments
from .errors import AltGDminError, ConfigError
from .solvers.config import read_trace_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def _parser():
    ap = argparse.ArgumentParser(prog="altgdmin", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "sweep", "compare"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("inspect")
    p.add_argument("trace", help="trace.csv written by run")
    return ap


def _inspect(path):
    rows = read_trace_csv(path)
    if not rows:
        print(f"{path}: empty trace")
        return EXIT_OK
    last = rows[-1]
    info = {"records": len(rows), "iterations": last["iter"], "init_se2": rows[0]["se2"],
            "final_se2": last["se2"], "final_max_col_err": last["max_col_err"],
            "final_objective": last["objective"], "total_flops": last["flops"]}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "inspect":
        try:
            return _inspect(args.trace)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = experiments.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
            if args.verb != "run":
                cfg.setdefault("sweep", {})["seeds"] = [args.seed]
        if args.verb == "run":
            summary = experiments.run_experiment(cfg, args.out, threads=args.threads)
            print(json.dumps({k: summary[k] for k in ("iterations", "final_se2", "final_max_col_err")}))
        elif args.verb == "sweep":
            rows = experiments.run_sweep(cfg, args.out, threads=args.threads)
            print(f"{len(rows)} runs written to {args.out}")
        else:
            rows = experiments.compare_solvers(cfg, args.out, threads=args.threads)
            print(f"{len(rows)} rows written to {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AltGDminError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
