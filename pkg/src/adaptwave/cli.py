"""Command line interface: ``adaptwave simulate | solve-q | predict | verify | report``.

Exit status is 0 on success, 1 on configuration or usage errors and 2 when a
verification target fails.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional
import argparse
import json
import logging
import sys

from .errors import AdaptwaveError, ConfigError, InvalidGrid, InvalidParams
from .experiments import TARGETS, ExperimentConfig, apply_overrides, run_ensemble, verify
from .model import ModelParams
from .observables import wave_rows, write_tau_csv, write_wave_csv
from .renewal import DEFAULT_H, solve_curves
from .theory import summary
from . import utils

_logger = logging.getLogger("adaptwave")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY_FAILED = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _number(text: str) -> float:
    return float(text)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with [model], [run], [verify]")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--engine", choices=("faithful", "effective"))
    common.add_argument("--replicates", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--N", type=_number, help="population size")
    common.add_argument("--mu", type=float, help="mutation rate")
    common.add_argument("--s", type=float, help="selection increment")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adaptwave", description=__doc__.splitlines()[0])
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common_options()

    sub.add_parser("simulate", parents=[common], help="run an ensemble, write wave/tau CSVs and report.json")

    solve = sub.add_parser("solve-q", help="solve q and m on a grid and write t,q,m CSV")
    solve.add_argument("--h", type=float, default=DEFAULT_H)
    solve.add_argument("--tmax", type=float, default=20.0)
    solve.add_argument("--out", type=Path, default=Path("q.csv"))

    predict = sub.add_parser("predict", help="print scales and predictions as JSON")
    predict.add_argument("--N", type=_number, required=True)
    predict.add_argument("--mu", type=float, required=True)
    predict.add_argument("--s", type=float, required=True)

    check = sub.add_parser("verify", parents=[common], help="run a verification target")
    check.add_argument("target", choices=TARGETS + ("all",))

    report = sub.add_parser("report", help="summarize the reports in an output directory")
    report.add_argument("--out", type=Path)
    return parser


def _setup_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (if any) with the command line overrides applied."""
    overrides: Dict[str, Any] = {
        "model.N": args.N,
        "model.mu": args.mu,
        "model.s": args.s,
        "run.seed": args.seed,
        "run.engine": args.engine,
        "run.replicates": args.replicates,
        "run.workers": args.workers,
    }
    if args.config is not None:
        return ExperimentConfig.from_toml(args.config, overrides)
    if args.N is None or args.mu is None or args.s is None:
        raise ConfigError("give --config or all of --N, --mu and --s")
    return ExperimentConfig.from_dict(apply_overrides({}, overrides))


def _out_dir(args: argparse.Namespace) -> Path:
    return args.out if args.out is not None else utils.default_output_dir()


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args)
    report = run_ensemble(config)
    out_dir = _out_dir(args)
    sc = config.scales()
    a_N = sc.a_N if sc is not None else float("inf")
    with utils.output_lock(out_dir):
        for rep in report.replicates:
            write_wave_csv(wave_rows(rep.snapshots, rep.taus, sc), out_dir / f"wave-{rep.index:04d}.csv")
            write_tau_csv(rep.taus, a_N, out_dir / f"tau-{rep.index:04d}.csv")
    path = report.write(out_dir)
    print(path)
    return EXIT_OK


def cmd_solve_q(args: argparse.Namespace) -> int:
    curves = solve_curves(args.h, args.tmax)
    path = curves.to_csv(args.out)
    print(path)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    params = ModelParams(N=int(args.N), mu=args.mu, s=args.s)
    print(json.dumps(summary(params), indent=2))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    config = load_config(args)
    targets = None if args.target == "all" else [args.target]
    report = verify(config, targets)
    path = report.write(_out_dir(args), f"verify-{args.target}.json")
    for target, stat in report.statistics.items():
        print(f"{target}: {'passed' if stat['passed'] else 'FAILED'}")
    print(path)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = _out_dir(args)
    names = utils.RunIndex(out_dir).get()
    if not names:
        raise ConfigError(f"no reports found in {out_dir}")
    lines: List[str] = []
    for name in names:
        data = utils.read_json(out_dir / name)
        if data is None:
            _logger.warning(f"{name} is listed in the index but missing")
            continue
        model = data["provenance"]["config"]["model"]
        lines.append(f"{name}  N={model['N']} mu={model['mu']} s={model['s']}  created {data['created']}")
        for target, stat in sorted(data["statistics"].items()):
            verdict = "passed" if stat.get("passed", True) else "FAILED"
            median = stat.get("median")
            shown = f" median={median:.6g}" if isinstance(median, (int, float)) else ""
            lines.append(f"  {target:<11} {verdict:<7} n={stat.get('n')}{shown}")
    print("\n".join(lines))
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "solve-q": cmd_solve_q,
    "predict": cmd_predict,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args)

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InvalidParams, InvalidGrid) as err:
        print(f"adaptwave: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except AdaptwaveError as err:
        _logger.error(f"{args.command} failed: {err}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
