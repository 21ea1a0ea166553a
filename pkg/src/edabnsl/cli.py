"""``eda-bnsl`` command line: run the experiment grid, sample data, score a structure.

Exit status: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from edabnsl.bayesnet import asia_fixture, forward_sample, load_network, read_dataset, write_dataset
from edabnsl.eda import ALGORITHMS, MUTATIONS
from edabnsl.harness import GRID_FIELDS, PROFILES, ExperimentGrid, default_workers, run_grid, write_reports
from edabnsl.scoring import DEFAULT_ESS, bde_score

log = logging.getLogger("edabnsl")

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _list_of(convert, name, check=None):
    def parse(text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError(f"{name}: empty list")
        out = []
        for item in items:
            try:
                value = convert(item)
            except ValueError:
                raise argparse.ArgumentTypeError(f"{name}: bad value {item!r}") from None
            if check is not None:
                check(value)
            out.append(value)
        return tuple(out)

    return parse


def _choice(options):
    def check(value):
        if value not in options and value != "umda":
            raise argparse.ArgumentTypeError(f"{value!r} not in {', '.join(options)}")

    return check


def _unit(name, open_low=False):
    def check(value):
        low_ok = value > 0 if open_low else value >= 0
        if not (low_ok and value <= 1):
            bound = "(0, 1]" if open_low else "[0, 1]"
            raise argparse.ArgumentTypeError(f"{name} value {value} outside {bound}")

    return check


def _positive(name):
    def check(value):
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {value}")

    return check


def _positive_int(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name}: {text!r} is not an integer") from None
        _positive(name)(value)
        return value

    return parse


def _nonneg_int(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name}: {text!r} is not an integer") from None
        if value < 0:
            raise argparse.ArgumentTypeError(f"{name} must be >= 0")
        return value

    return parse


def _positive_float(name):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name}: {text!r} is not a number") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0")
        return value

    return parse


def _unit_float(name, open_low=False):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name}: {text!r} is not a number") from None
        _unit(name, open_low)(value)
        return value

    return parse


# option dest -> converter applied to config-file values (strings or lists)
_RUN_OPTIONS = {
    "algorithms": ("--algos", _list_of(str, "--algos", _choice(ALGORITHMS))),
    "mutations": ("--mutations", _list_of(str, "--mutations", _choice(MUTATIONS))),
    "rates": ("--rates", _list_of(float, "--rates", _unit("--rates"))),
    "pop_sizes": ("--pop-sizes", _list_of(int, "--pop-sizes", _positive("--pop-sizes"))),
    "pbil_rates": ("--pbil-rates", _list_of(float, "--pbil-rates", _unit("--pbil-rates", open_low=True))),
    "generations": ("--generations", _nonneg_int("--generations")),
    "repeats": ("--repeats", _positive_int("--repeats")),
    "data_size": ("--data-size", _positive_int("--data-size")),
    "ess": ("--ess", _positive_float("--ess")),
    "elitism": ("--elitism", _nonneg_int("--elitism")),
    "selection_frac": ("--selection-frac", _unit_float("--selection-frac", open_low=True)),
    "seed": ("--seed", _nonneg_int("--seed")),
    "workers": ("--workers", _positive_int("--workers")),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eda-bnsl", description="Bayesian network structure learning with EDAs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment grid and write CSV reports")
    source = run.add_mutually_exclusive_group()
    source.add_argument("--network", metavar="PATH", default=argparse.SUPPRESS, help="network file")
    source.add_argument("--asia", action="store_true", default=argparse.SUPPRESS, help="bundled Asia network (default)")
    for dest, (flag, convert) in _RUN_OPTIONS.items():
        run.add_argument(flag, dest=dest, type=convert, default=argparse.SUPPRESS)
    run.add_argument("--profile", choices=sorted(PROFILES), default=argparse.SUPPRESS)
    run.add_argument("--config", metavar="FILE", help="JSON file of option values (CLI flags win)")
    run.add_argument("--transpose-mode", dest="transpose_mode", choices=("pair", "cell"), default=argparse.SUPPRESS)
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--no-timestamp", action="store_true", help="omit the timestamp line from CSVs")

    sample = sub.add_parser("sample", help="forward-sample a dataset from a network")
    src = sample.add_mutually_exclusive_group(required=True)
    src.add_argument("--network", metavar="PATH")
    src.add_argument("--asia", action="store_true")
    sample.add_argument("--count", type=_positive_int("--count"), required=True)
    sample.add_argument("--seed", type=_nonneg_int("--seed"), default=0)
    sample.add_argument("--out", required=True, metavar="FILE")

    score = sub.add_parser("score", help="print the log BDeu of a network's structure on a dataset")
    src = score.add_mutually_exclusive_group(required=True)
    src.add_argument("--network", metavar="PATH")
    src.add_argument("--asia", action="store_true")
    score.add_argument("--data", required=True, metavar="FILE")
    score.add_argument("--ess", type=_positive_float("--ess"), default=DEFAULT_ESS)
    return parser


def _config_values(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("--config: top level must be an object")
    values = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        dest = {"algos": "algorithms"}.get(dest, dest)
        if dest in ("profile", "network", "transpose_mode"):
            values[dest] = value
            continue
        if dest not in _RUN_OPTIONS:
            raise UsageError(f"--config: unknown option {key!r}")
        flag, convert = _RUN_OPTIONS[dest]
        text = ",".join(map(str, value)) if isinstance(value, list) else str(value)
        try:
            values[dest] = convert(text)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"--config: {exc}") from None
    return values


def grid_from_args(args: argparse.Namespace) -> ExperimentGrid:
    """Merge documented defaults < profile < config file < CLI flags."""
    cli = {k: v for k, v in vars(args).items() if k in GRID_FIELDS or k in ("profile", "asia")}
    from_file = _config_values(args.config) if args.config else {}
    profile = cli.get("profile", from_file.get("profile", "desk"))
    if profile not in PROFILES:
        raise UsageError(f"--profile: unknown profile {profile!r}")
    merged = dict(PROFILES[profile])
    merged["workers"] = default_workers()
    merged.update({k: v for k, v in from_file.items() if k != "profile"})
    merged.update({k: v for k, v in cli.items() if k not in ("profile", "asia")})
    if cli.get("asia"):
        merged["network"] = None
    if merged.get("transpose_mode", "pair") not in ("pair", "cell"):
        raise UsageError("--transpose-mode: expected pair or cell")
    merged["algorithms"] = tuple("univariate" if a == "umda" else a for a in merged.get("algorithms", ALGORITHMS))
    try:
        return ExperimentGrid(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def parse_config(argv: list[str]) -> ExperimentGrid:
    """Parse ``run`` arguments (without the subcommand) into a grid."""
    args = build_parser().parse_args(["run", *argv])
    return grid_from_args(args)


def _network(args):
    return asia_fixture() if args.asia else load_network(args.network)


def _cmd_run(args) -> int:
    grid = grid_from_args(args)
    rows, records = run_grid(grid)
    paths = write_reports(rows, records, args.out, timestamp=not args.no_timestamp)
    failures = sum(r.failures for r in rows)
    for path in paths:
        print(path)
    if failures:
        log.warning("%d run(s) failed; see status column of runs.csv", failures)
    return 0


def _cmd_sample(args) -> int:
    net = _network(args)
    write_dataset(forward_sample(net, args.count, args.seed), args.out)
    print(args.out)
    return 0


def _cmd_score(args) -> int:
    net = _network(args)
    data = read_dataset(args.data, net.cardinalities, net.names)
    print(repr(bde_score(data, net.structure, args.ess)))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("eda-bnsl: a command is required (run, sample, score)")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
        command = {"run": _cmd_run, "sample": _cmd_sample, "score": _cmd_score}[args.command]
        return command(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"eda-bnsl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
