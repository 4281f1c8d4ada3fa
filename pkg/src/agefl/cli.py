"""Command-line entry point ``agefl``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .harness import (
    bound_report,
    curve_to_csv,
    fmt,
    per_client_loss_curve,
    rows_to_csv,
    run_sweep,
    with_trials,
    write_csv,
)
from .model import Schedule
from .privacy import PrivacyRequirement
from .scheduler import SCHEMES, ScheduleBudgetError, run_scheme


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="paper",
                   help="experiment config file; 'paper' selects the bundled three-client setup")
    p.add_argument("--trials", type=int, default=None, help="override the configured Monte-Carlo trial count")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agefl",
        description="Age-aware scheduling for differentially-private federated learning. "
                    "Set AGEFL_THREADS to cap parallelism.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run every scheme over the eps_bar grid and write CSV")
    _add_common(p)
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    p = sub.add_parser("curve", help="loss difference versus one client's collection time")
    _add_common(p)
    p.add_argument("--client", type=int, required=True, help="1-based client index")
    p.add_argument("--eps-bar", type=float, default=None, help="privacy target (default: curve_eps_bar)")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    p = sub.add_parser("bound", help="print the bound terms for a given schedule")
    _add_common(p)
    p.add_argument("--schedule", required=True, help="collection times, e.g. 12,7,12")
    p.add_argument("--eps-bar", type=float, default=None, help="privacy target (default: first grid value)")
    p.add_argument("--noise", choices=("adaptive", "constant"), default="adaptive", help="noise mode")

    p = sub.add_parser("schedule", help="choose a schedule with one scheme")
    _add_common(p)
    p.add_argument("--scheme", choices=SCHEMES, required=True, help="scheme id")
    p.add_argument("--eps-bar", type=float, default=None, help="privacy target (default: whole grid)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = with_trials(load_config(args.config), args.trials)
    except ConfigError as exc:
        print(f"agefl: {exc}", file=sys.stderr)
        return 2

    if args.command == "sweep":
        rows = run_sweep(config)
        if args.out:
            write_csv(rows, args.out)
        else:
            sys.stdout.write(rows_to_csv(rows))
    elif args.command == "curve":
        points = per_client_loss_curve(config, args.client - 1, args.eps_bar)
        text = curve_to_csv(points)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    elif args.command == "bound":
        try:
            sched = Schedule.parse(args.schedule, config.t_agg)
        except ValueError as exc:
            print(f"agefl: {exc}", file=sys.stderr)
            return 2
        if len(sched.t_c) != len(config.clients):
            print(f"agefl: schedule has {len(sched.t_c)} entries for {len(config.clients)} clients",
                  file=sys.stderr)
            return 2
        print(bound_report(config, sched, args.eps_bar, args.noise).format())
    elif args.command == "schedule":
        grid = [args.eps_bar] if args.eps_bar is not None else config.eps_bar_grid
        clients = config.client_specs()
        print("eps_bar,schedule,score,sim_mean,sim_std_err,achieved_eps_bar")
        for eps in grid:
            try:
                res = run_scheme(args.scheme, clients, PrivacyRequirement(eps), config.t_agg,
                                 config.trials, config.seed, config.flags)
            except ScheduleBudgetError as exc:
                print(f"agefl: {exc}", file=sys.stderr)
                return 1
            c = res.choice
            print(",".join([fmt(eps), c.schedule.label, fmt(c.score), fmt(res.sim_mean),
                            fmt(res.sim_std_err), fmt(c.achieved_eps_bar)]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
