import argparse
import asyncio
import logging
import sys
from pathlib import Path

import coloredlogs

from . import app
from .config import PRESETS, RunnerConfig
from .documentation import CLI_DESCRIPTION, CLI_EPILOG, CONFIG_DOCUMENTATION, TAG_FORMAT_DOCUMENTATION
from .errors import UsageError


class ArgumentParser(argparse.ArgumentParser):
    """Reports bad command lines as `UsageError` instead of exiting."""

    def error(self, message: str):
        raise UsageError(message)


def _channel_deadtime(text: str) -> tuple[int, int]:
    try:
        channel, deadtime = text.split(":")
        return int(channel), int(deadtime)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected CHANNEL:DEADTIME_PS, got {text!r}")


def _bin_range(text: str) -> tuple[int, int]:
    try:
        start, stop = text.split(":")
        return int(start), int(stop)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="heraldsim",
        description=CLI_DESCRIPTION,
        epilog=CLI_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default="INFO")
    parser.add_argument("--workers", type=int, default=None, help="detector channels simulated concurrently")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def add_config_arguments(sub: argparse.ArgumentParser):
        group = sub.add_mutually_exclusive_group()
        group.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        group.add_argument("--preset", choices=sorted(PRESETS), default=None)
        sub.add_argument("--output", type=Path, default=None)

    simulate = subparsers.add_parser(
        "simulate", help="simulate a run into tag files",
        epilog=TAG_FORMAT_DOCUMENTATION + "\n" + CONFIG_DOCUMENTATION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    add_config_arguments(simulate)
    simulate.add_argument("--duration-s", type=float, default=None)
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")

    characterize = subparsers.add_parser("characterize", help="SPAD dark count, PDE and afterpulsing from a tag file")
    characterize.add_argument("tags", type=Path, nargs="?", default=None)
    add_config_arguments(characterize)
    characterize.add_argument("--laser-off", action="store_true", help="dark-count-only report")
    characterize.add_argument("--holdoff-ps", type=int, nargs="+", default=None, dest="holdoffs_ps")
    characterize.add_argument("--far-window", type=_bin_range, default=None, help="dark-count bins START:STOP")
    characterize.add_argument("--mu", type=float, default=None, help="mean photon number per laser pulse")
    characterize.add_argument("--operating-points", action="store_true", help="simulate the operating-point table")

    analyze = subparsers.add_parser("analyze", help="heralding figures and g² from a run directory")
    analyze.add_argument("directory", type=Path, nargs="?", default=None)
    add_config_arguments(analyze)
    analyze.add_argument("--heralded-window-ps", type=int, default=None, help="full width of the heralded-g² window")
    analyze.add_argument("--heralded-half-window-ps", type=int, default=None)
    analyze.add_argument("--deadtime", type=_channel_deadtime, action="append", default=[], help="CHANNEL:DEADTIME_PS")
    analyze.add_argument("--sweep", action="store_true", help="simulate and tabulate the pump-power sweep")

    report = subparsers.add_parser("report", help="bundle CSV/JSON outputs into one folder")
    report.add_argument("sources", type=Path, nargs="+")
    report.add_argument("--output", type=Path, default=None)

    return parser


async def run_command(args: argparse.Namespace) -> int:
    match args.command:
        case "simulate":
            return await app.simulate(args.config, args.preset, args.output, args.duration_s, args.seed, args.dump_config)
        case "characterize":
            return await app.characterize(
                args.tags, args.config, args.preset, args.output,
                args.laser_off, args.holdoffs_ps, args.far_window, args.mu, args.operating_points,
            )
        case "analyze":
            return await app.analyze(
                args.directory, args.config, args.preset, args.output,
                args.heralded_window_ps, args.heralded_half_window_ps, dict(args.deadtime), args.sweep,
            )
        case "report":
            return await app.report(args.sources, args.output)
    raise UsageError(f"Unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"heraldsim: {e}", file=sys.stderr)
        return e.exit_code

    coloredlogs.install(level=args.log_level, fmt="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.workers is not None:
        if args.workers < 1:
            logging.getLogger(__name__).error("--workers must be at least 1")
            return UsageError.exit_code
        app.set_runner_config(RunnerConfig(max_workers=args.workers))

    return asyncio.run(run_command(args))


if __name__ == '__main__':
    sys.exit(main())
