"""Command-line front end.

Exit codes: 0 success, 2 invalid configuration or input, 3 black-box
failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .blackbox import serve
from .errors import BlackBoxError, ConfigError, FactorizationError, ValidationError
from .loop import RunLog, EvaluationRecord, load_config, read_log, result_to_dict, run, solve_dataset
from .equilibria import TerritoryPartition
from .problems import get_problem
from .report import write_report

EXIT_OK, EXIT_CONFIG, EXIT_BLACKBOX, EXIT_NUMERICAL = 0, 2, 3, 4


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _partition(text):
    # "0,1;2;3" -> ((0, 1), (2,), (3,))
    return TerritoryPartition(tuple(tuple(int(i) for i in block.replace(",", " ").split())
                                    for block in text.split(";")))


def _params(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"problem parameter {item!r} must look like key=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _cmd_run(args):
    config = load_config(args.config)
    changes = {}
    if args.output is not None:
        changes["output_dir"] = args.output
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        config = config.replace(**changes)
    if not config.output_dir:
        config = config.replace(output_dir="gamebo-run")
    result, log = run(config)
    write_report(config.output_dir)
    dominated, nondominated = log.tally
    print(f"{len(log)} evaluations ({dominated} dominated, {nondominated} nondominated)")
    print(f"{result.kind}: design {np.array2string(result.design, precision=6)} "
          f"objectives {np.array2string(result.objectives, precision=6)}")
    print(f"written to {config.output_dir}")
    return EXIT_OK


def _cmd_solve(args):
    try:
        _, X, Y = read_log(args.data)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset {args.data}: {exc}") from exc
    utopia = _floats(args.utopia) if args.utopia else None
    disagreement = _floats(args.disagreement) if args.disagreement else None
    if (utopia is None) != (disagreement is None):
        raise ConfigError("give both --utopia and --disagreement, or neither")
    preference = None
    if args.preference:
        preference = {int(k): float(v) for k, v in (p.split("=") for p in args.preference)}
    partition = _partition(args.partition) if args.partition else None
    result = solve_dataset(X, Y, args.kind, args.anchor, preference, utopia, disagreement, partition)
    out = Path(args.output)
    log = RunLog(X.shape[1], Y.shape[1])
    for x, y in zip(X, Y):
        log.append(EvaluationRecord(0, x, y))
    log.result = result
    log.write(out)
    write_report(out)
    print(json.dumps(result_to_dict(result)))
    return EXIT_OK


def _cmd_report(args):
    pairs, par = write_report(args.run_dir, args.output)
    print(f"wrote {pairs} and {par}")
    return EXIT_OK


def _cmd_serve(args):
    problem = get_problem(args.problem, **_params(args.param))
    return serve(problem)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamebo", description="Game-theoretic Bayesian optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a run configuration (YAML)")
    p.add_argument("config")
    p.add_argument("--output", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("solve", help="solve the game on an evaluated dataset (log.csv layout)")
    p.add_argument("data")
    p.add_argument("--kind", choices=("ks", "nash", "nks"), default="ks")
    p.add_argument("--anchor", choices=("nadir", "pseudo-nadir", "preference"), default="nadir")
    p.add_argument("--preference", nargs="*", metavar="INDEX=VALUE", help="0-based objective index")
    p.add_argument("--utopia", help="explicit utopia point, e.g. '0,0'")
    p.add_argument("--disagreement", help="explicit disagreement point, e.g. '1,1'")
    p.add_argument("--partition", help="0-based blocks, e.g. '0;1' or '0,4;1;2;3;5,6,7'")
    p.add_argument("--output", default="gamebo-solve")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("report", help="write pairs.csv and parcoords.csv for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--output", help="directory for the CSV files (default: run_dir)")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="answer black-box protocol requests with an analytic problem")
    p.add_argument("problem")
    p.add_argument("--param", nargs="*", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BlackBoxError as exc:
        print(f"black-box failure: {exc}", file=sys.stderr)
        return EXIT_BLACKBOX
    except (FactorizationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValidationError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
