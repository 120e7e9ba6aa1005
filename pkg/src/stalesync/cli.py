"""Experiment command line.

Subcommands:
  run        execute one experiment, write report.csv (and trace.txt with --trace)
  compare    run the same scenario once per paradigm, write compare.csv
  sweep-ssp  run an SSP staleness-threshold sweep, write sweep_ssp.csv
  check      validate a config file and exit

Exit codes: 0 success, 2 bad config, 3 deadlock or aborted run,
4 diverged weights.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import PARADIGMS, ConfigError, ExperimentConfig, StalenessRange, \
    parse_config, validate_config
from .metrics import compare_csv, report_csv, sweep_csv
from .runner import run_threaded
from .server import DivergenceError
from .simnet import DeadlockError, run_simulation
from .trace import format_trace


def _load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    config = parse_config(text)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return validate_config(config)


def _execute(config: ExperimentConfig, deadline):
    if config.mode == "threaded":
        return run_threaded(config, deadline=deadline)
    return run_simulation(config)


def _write(out_dir: str, name: str, text: str) -> Path:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / name
    target.write_text(text)
    return target


def _cmd_run(args) -> int:
    config = _load_config(args)
    entries, report = _execute(config, args.deadline)
    written = [_write(args.out, "report.csv", report_csv(config.paradigm, report))]
    if args.trace:
        written.append(_write(args.out, "trace.txt", format_trace(entries)))
    for path in written:
        print(f"wrote {path}")
    if report.incomplete:
        print(f"error: deadlock: run aborted with workers "
              f"{list(report.stuck_workers)} stuck", file=sys.stderr)
        return 3
    return 0


def _paradigm_list(text: str) -> list[str]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    if not names:
        raise ConfigError("paradigms: empty list")
    for name in names:
        if name not in PARADIGMS:
            raise ConfigError(f"paradigms: unknown paradigm {name!r}")
    return names


def _cmd_compare(args) -> int:
    base = _load_config(args)
    rows = []
    for paradigm in _paradigm_list(args.paradigms):
        config = validate_config(dataclasses.replace(base, paradigm=paradigm))
        entries, report = _execute(config, args.deadline)
        if report.incomplete:
            print(f"error: deadlock: {paradigm} run aborted with workers "
                  f"{list(report.stuck_workers)} stuck", file=sys.stderr)
            return 3
        rows.append((paradigm, report))
    path = _write(args.out, "compare.csv", compare_csv(rows))
    print(f"wrote {path}")
    return 0


def _threshold_range(text: str) -> list[int]:
    try:
        if ".." in text:
            low_s, high_s = text.split("..", 1)
            low, high = int(low_s), int(high_s)
        else:
            low = high = int(text)
    except ValueError as exc:
        raise ConfigError(f"s: expected N or N..M, got {text!r}") from exc
    if low < 0 or high < low:
        raise ConfigError(f"s: bad range {text!r}")
    return list(range(low, high + 1))


def _cmd_sweep_ssp(args) -> int:
    base = _load_config(args)
    rows = []
    for s_lower in _threshold_range(args.s):
        config = validate_config(dataclasses.replace(
            base, paradigm="ssp", staleness=StalenessRange(s_lower, 0)))
        entries, report = _execute(config, args.deadline)
        if report.incomplete:
            print(f"error: deadlock: ssp({s_lower}) run aborted with workers "
                  f"{list(report.stuck_workers)} stuck", file=sys.stderr)
            return 3
        rows.append((s_lower, report))
    path = _write(args.out, "sweep_ssp.csv", sweep_csv(rows))
    print(f"wrote {path}")
    return 0


def _cmd_check(args) -> int:
    config = _load_config(args)
    print(f"config ok: {config.paradigm} {config.mode} "
          f"workers={config.worker_count} model={config.model_kind} "
          f"staleness=({config.staleness.s_lower},{config.staleness.r_max})")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stalesync",
        description="Run and compare parameter-server synchronization paradigms.")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("config", help="path to a flat key = value config file")
        sub.add_argument("--seed", type=int, default=None,
                         help="override the config's seed")
        sub.add_argument("--out", default=".", help="output directory")
        sub.add_argument("--deadline", type=float, default=None,
                         help="wall-clock abort budget in seconds (threaded mode)")

    run = commands.add_parser("run", help="execute one experiment")
    common(run)
    run.add_argument("--trace", action="store_true",
                     help="also export the event trace")
    run.set_defaults(handler=_cmd_run)

    compare = commands.add_parser(
        "compare", help="run one scenario under several paradigms")
    common(compare)
    compare.add_argument("--paradigms", default="bsp,asp,ssp,dssp",
                         help="comma-separated paradigm list")
    compare.set_defaults(handler=_cmd_compare)

    sweep = commands.add_parser(
        "sweep-ssp", help="sweep the SSP staleness threshold")
    common(sweep)
    sweep.add_argument("--s", default="3..15",
                       help="threshold range, N or N..M inclusive")
    sweep.set_defaults(handler=_cmd_sweep_ssp)

    check = commands.add_parser("check", help="validate a config file")
    common(check)
    check.set_defaults(handler=_cmd_check)
    return parser


def cli_main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2
    except DeadlockError as exc:
        print(f"error: deadlock: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 4
