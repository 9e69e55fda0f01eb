"""Command line entry point: ``bsgd {run,sweep,fixedpoint,oracle,storage}``.

The output directory comes from ``--output-dir``, else ``$BSGD_OUTPUT_DIR``,
else the config's ``run.output_dir``.
"""

import argparse
import logging
import sys

import numpy as np

from .config import load_config
from .errors import BSGDError, ConfigError
from .runner import (build_problem, fixed_point_check, least_squares_oracle, oracle_path,
                     resolve_output_dir, run_experiment, run_sweep, storage_report)


def _cmd_run(args):
    cfg = load_config(args.config)
    runlog = run_experiment(cfg, args.output_dir)
    last = runlog.rows[-1]
    print(f"{runlog.name}: {last['epoch']} epochs, {last['block_mults']} block mults, "
          f"DS={last['DS']} SNR={last['SNR']} GAP={last['GAP']}")
    print(f"log: {runlog.csv_path}")
    return 0


def _cmd_sweep(args):
    logs = run_sweep(args.config_dir, args.output_dir)
    for runlog in logs:
        last = runlog.rows[-1]
        print(f"{runlog.name}: block_mults={last['block_mults']} DS={last['DS']} "
              f"SNR={last['SNR']} GAP={last['GAP']}")
    return 0


def _cmd_oracle(args):
    cfg = load_config(args.config)
    out = resolve_output_dir(cfg, args.output_dir)
    problem = build_problem(cfg)
    x = least_squares_oracle(cfg, problem, out)
    gap = np.linalg.norm(problem.y - problem.system.A @ x)
    print(f"x_lsq: ||x||={np.linalg.norm(x):.6g} ||y-Ax||={gap:.6g}")
    print(f"cached: {oracle_path(cfg, out)}")
    return 0


def _cmd_fixedpoint(args):
    cfg = load_config(args.config)
    at, off = fixed_point_check(cfg, trials=args.trials, seed=args.seed, perturbation=args.perturbation)
    print("at x_lsq:    " + at.lines()[0])
    print(f"perturbed ({args.perturbation:g}): " + off.lines()[0])
    return 0


def _cmd_storage(args):
    cfg = load_config(args.config, kind="storage")
    rows, best, path = storage_report(cfg, args.output_dir)
    for row in rows:
        mark = "fits" if row["fits"] else "over"
        print(f"M={row['M']:>4} N={row['N']:>3}  m+n={row['node_storage']:>5}  {mark}  "
              f"master={row['master_storage']}")
    if best is not None:
        print(f"best: M={best['M']} N={best['N']}")
    print(f"table: {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bsgd", description="Block stochastic gradient tomography experiments.")
    p.add_argument("--output-dir", help="override the output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress messages")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run every *.ini config in a directory")
    s.add_argument("config_dir")
    s.set_defaults(func=_cmd_sweep)

    f = sub.add_parser("fixedpoint", help="check stationarity of the block recursion at x_lsq")
    f.add_argument("config")
    f.add_argument("--trials", type=int, default=100)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--perturbation", type=float, default=1e-3)
    f.set_defaults(func=_cmd_fixedpoint)

    o = sub.add_parser("oracle", help="compute and cache the least-squares solution")
    o.add_argument("config")
    o.set_defaults(func=_cmd_oracle)

    st = sub.add_parser("storage", help="node/master storage over candidate partitions")
    st.add_argument("config")
    st.set_defaults(func=_cmd_storage)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BSGDError, ValueError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
