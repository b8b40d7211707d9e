"""
Command-line surface
    generate     simulate a dataset file from a preset or explicit θ*
    run          Monte Carlo learner sweep, run logs and summary.csv
    analyze      slopes, query advantage and decoherence fits of a run directory
    show-preset  print a named preset with its provenance
Exit codes: 0 success, 2 config error, 3 runtime error.
"""
import argparse
import json
import sys
import traceback
from typing import List, Optional

from pydantic import ValidationError

from src import console, settings
from src.config import format_validation_error, load_config
from src.errors import ConfigError, HalError
from src.pipeline_manager import run_analysis, run_generate, run_sweep
from src.presets import get_preset, list_presets

EXIT_OK = 0
EXIT_CONFIG = ConfigError.exit_code
EXIT_RUNTIME = HalError.exit_code


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="run configuration (JSON)")
    parser.add_argument("--seed", type=int, metavar="U64", help="master seed, overrides the config")
    parser.add_argument("--jobs", type=int, metavar="N", help="worker processes, overrides the config")
    parser.add_argument("--out", metavar="DIR", help="output directory, overrides the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crlearn", description="Active learning of cross-resonance Hamiltonians")
    parser.add_argument("--verbosity", choices=["quiet", "normal", "debug"], help="console verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("generate", "simulate a dataset file"),
        ("run", "run the learner sweep"),
        ("analyze", "analyze a run directory"),
    ):
        _add_common(sub.add_parser(name, help=text))

    show = sub.add_parser("show-preset", help="print a device preset")
    show.add_argument("name", nargs="?", help="preset name; lists all presets when omitted")
    return parser


def cmd_generate(args) -> int:
    cfg = load_config(args.config, seed=args.seed, jobs=args.jobs, out=args.out)
    run_generate(cfg)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, jobs=args.jobs, out=args.out)
    df = run_sweep(cfg)
    final = df.sort_values("round").groupby("scenario").tail(1)
    for _, row in final.iterrows():
        console.stats(f"{row['scenario']}: N_tot={int(row['n_tot'])}, rmse={row['rmse']:.4g}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = None
    if args.config is not None:
        cfg = load_config(args.config, seed=args.seed, jobs=args.jobs, out=args.out)
        run_dir = cfg.out
    else:
        run_dir = args.out or settings.default_out_dir()
    analysis = run_analysis(run_dir, cfg)
    for row in analysis["slopes"]:
        console.stats(f"{row['scenario']} [{row['window']}]: slope {row['slope']:.3f} ± {row['stderr']:.3f}")
    return EXIT_OK


def cmd_show_preset(args) -> int:
    if args.name is None:
        for name in list_presets():
            console.info(name)
        return EXIT_OK
    print(json.dumps(get_preset(args.name).summary(), indent=2))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "analyze": cmd_analyze,
    "show-preset": cmd_show_preset,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch, and map every failure to an exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, which is our config-error code
        return int(e.code or 0)
    if args.verbosity:
        console.set_verbosity(args.verbosity)
    if console.verbosity() >= 2:
        settings.print_configuration_check()

    try:
        return COMMANDS[args.command](args)
    except HalError as e:
        console.error(f"{e.kind}: {e.message}")
        return e.exit_code
    except ValidationError as e:
        console.error(f"Config error: {format_validation_error(e)}")
        return EXIT_CONFIG
    except Exception as e:
        console.error(f"Internal error: {e}")
        if console.verbosity() >= 2:
            traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
