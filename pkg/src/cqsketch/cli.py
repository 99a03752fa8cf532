"""``cqsketch`` command line: experiments and closed-form calculators.

Exit codes: 0 on success, 1 on an invalid configuration or unknown flag,
2 when a post-run audit finds an invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import bench
from .analysis import (
    RelaxationModel,
    eh_region_bound,
    eh_total_bound,
    epsilon_total,
    relaxation,
)
from .config import ConfigError
from .sketch import InvariantViolation

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _common(p: argparse.ArgumentParser, multi_b: bool = False) -> None:
    p.add_argument("--k", type=int, default=4096)
    if multi_b:
        p.add_argument("--b", type=int, nargs="+", default=[16])
    else:
        p.add_argument("--b", type=int, default=16)
    p.add_argument("--threads", type=int, default=1, help="update threads")
    p.add_argument("--query-threads", type=int, default=0)
    p.add_argument("--numa-nodes", type=int, default=1, help="Gather&Sort units")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--dist", choices=bench.DISTRIBUTIONS, default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1_000_000, help="stream size")
    p.add_argument("--prefill", type=int, default=0)
    p.add_argument("--runs", type=int, default=15)
    p.add_argument("--out", default=None, help=f"output path (default: ${bench.OUT_ENV}/<cmd>.<fmt> or stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cqsketch", description="Concurrent quantiles sketch experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("throughput", help="update-only, query-only or mixed throughput")
    _common(p)
    p.add_argument("--mode", choices=bench.MODES, default="update-only")
    p.add_argument("--duration", type=float, default=1.0, help="query-only seconds per run")

    p = sub.add_parser("accuracy", help="quiescent estimates on a phi grid vs the exact stream")
    _common(p)
    p.add_argument("--no-baseline", action="store_true", help="skip the sequential baseline")

    p = sub.add_parser("stderr", help="per-phi standard error across seeded runs")
    _common(p)
    p.add_argument("--baseline", action="store_true", help="also run the sequential sketch")

    p = sub.add_parser("holes", help="simulated holes, closed-form bound, instrumented count")
    _common(p, multi_b=True)
    p.add_argument("--trials", type=int, default=100_000)

    p = sub.add_parser("analyze", help="closed-form calculators")
    p.add_argument("what", choices=("relaxation", "epsilon", "holes"))
    p.add_argument("--k", type=int, default=4096)
    p.add_argument("--b", type=int, default=16)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--numa-nodes", type=int, default=1)
    p.add_argument("--n", type=int, default=10_000_000)
    p.add_argument("--rho", type=float, default=0.0, help="staleness fraction")
    p.add_argument("--epsilon-c", type=float, default=0.01)
    p.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _spec(args, mode: str = "update-only", **over) -> bench.WorkloadSpec:
    fields = dict(
        mode=mode, update_threads=args.threads, query_threads=args.query_threads,
        n=args.n, prefill=args.prefill, k=args.k, b=args.b, numa_nodes=args.numa_nodes,
        rho=args.rho, dist=args.dist, seed=args.seed, runs=args.runs,
    )
    fields.update(over)
    return bench.WorkloadSpec(**fields)


def _emit(rows, columns, args) -> None:
    out = args.out or bench.default_out(args.command, args.format)
    bench.write_rows(rows, columns, out, args.format)


def _analyze(args) -> None:
    model = RelaxationModel(k=args.k, S=args.numa_nodes, N=args.threads, b=args.b,
                            epsilon_c=args.epsilon_c, epsilon_prime=args.rho, n=args.n)
    if args.what == "relaxation":
        result = {"r": relaxation(model)}
    elif args.what == "epsilon":
        result = {"r": relaxation(model), "epsilon": epsilon_total(model)}
    else:
        result = {"region1_bound": eh_region_bound(1, args.b),
                  "total_bound": eh_total_bound(args.b, args.k)}
    if args.format == "json":
        print(json.dumps(result))
    else:
        for key, value in result.items():
            print(f"{key}={value}")


def run(args) -> None:
    cmd = args.command
    if cmd == "throughput":
        spec = _spec(args, args.mode, duration=args.duration)
        _emit(bench.run_throughput(spec), bench.THROUGHPUT_COLUMNS, args)
    elif cmd == "accuracy":
        rows = bench.run_accuracy(_spec(args), baseline=not args.no_baseline)
        _emit(rows, bench.ACCURACY_COLUMNS, args)
    elif cmd == "stderr":
        rows = bench.run_stderr(_spec(args), baseline=args.baseline)
        _emit(rows, bench.STDERR_COLUMNS, args)
    elif cmd == "holes":
        rows = bench.run_holes(_spec(args, b=args.b[0]), trials=args.trials, bs=args.b)
        _emit(rows, bench.HOLES_COLUMNS, args)
    else:
        _analyze(args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run(args)
    except InvariantViolation as exc:
        print(f"cqsketch: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ValueError) as exc:
        print(f"cqsketch: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
