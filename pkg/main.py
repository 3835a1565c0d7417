"""Main entry point for the TrajPilot command-line application."""
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

import config
from cli.commands import cmd_bench, cmd_eval, cmd_gen, cmd_gradcheck, cmd_rollout, cmd_train
from cli.preset_manager import PresetManager
from cli.run_config import preset_values, resolve_run_config
from errors import TrajPilotError
from scene.generator import TOPOLOGIES

logger = logging.getLogger(__name__)

COMMANDS = ("gen", "train", "eval", "rollout", "gradcheck", "bench")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajpilot",
        description=f"{config.APP_NAME} {config.APP_VERSION} - decoder-only autoregressive trajectory forecasting",
    )
    parser.add_argument("command", choices=COMMANDS, help="Subcommand to run")

    common = parser.add_argument_group("run configuration")
    common.add_argument("--preset", default=None,
                        help=f"Preset name ({', '.join(config.BUILTIN_PRESETS)} or a saved preset)")
    common.add_argument("--config", default=None, metavar="PATH", help="JSON file overriding the preset")
    common.add_argument("--seed", type=int, default=None, help="Seed for generation, initialization and batching")
    common.add_argument("--jobs", type=int, default=None, help="Worker threads across scenes (default 1)")
    common.add_argument("--save-preset", default=None, metavar="NAME",
                        help="Store the resolved configuration as a user preset")

    paths = parser.add_argument_group("paths")
    paths.add_argument("--out", default=None, metavar="DIR", help="Output directory")
    paths.add_argument("--data", default=None, metavar="DIR", help="Directory of scenario files")
    paths.add_argument("--checkpoint", default=None, metavar="PATH", help="Model checkpoint")
    paths.add_argument("--scene", default=None, metavar="PATH", help="Scenario file (rollout, bench)")

    options = parser.add_argument_group("command options")
    options.add_argument("--count", type=int, default=10, help="Number of scenes to generate")
    options.add_argument("--topology", choices=TOPOLOGIES + ("mixed",), default=None, help="Generated road layout")
    options.add_argument("--epochs", type=int, default=None, help="Training epochs")
    options.add_argument("--resume", action="store_true", help="Continue from the last checkpoint in --out")
    options.add_argument("--no-refine", action="store_true", help="Disable the refinement pass")
    options.add_argument("--no-overpredict", action="store_true", help="Disable the overprediction loss")
    options.add_argument("--turns-only", action="store_true", help="Evaluate only turning focal agents")
    options.add_argument("--svg", action="store_true", help="Write an SVG sketch of the rollout")
    options.add_argument("--png", action="store_true", help="Write a PNG sketch of the rollout")
    options.add_argument("--inject-fault", action="store_true", help="Corrupt one analytic gradient (gradcheck)")

    output = parser.add_argument_group("output")
    output.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")
    output.add_argument("--verbose", action="store_true", help="Debug logging and extra metrics")
    return parser


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values in RunConfig nesting; unset flags are None and ignored."""
    decoder: Dict[str, Any] = {}
    if args.no_refine:
        decoder['use_refinement'] = False
    if args.no_overpredict:
        decoder['use_overprediction'] = False
    return {
        'seed': args.seed,
        'jobs': args.jobs,
        'data_dir': args.data,
        'out_dir': args.out,
        'checkpoint': args.checkpoint,
        'decoder': decoder,
        'train': {'epochs': args.epochs},
        'generator': {'topology': args.topology},
    }


def setup_logging(quiet: bool, verbose: bool):
    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run_command(args: argparse.Namespace, presets: Optional[PresetManager] = None) -> int:
    presets = presets if presets is not None else PresetManager()
    preset = args.preset
    if preset is None and args.command == "gradcheck":
        preset = config.GRADCHECK_PRESET
    run = resolve_run_config(preset, args.config, flag_overrides(args), presets)
    if args.save_preset:
        if presets.save_preset(args.save_preset, preset_values(run)):
            print(f"Preset '{args.save_preset.strip()}' saved to {presets.presets_file}")
        else:
            logger.warning("preset_not_saved | name=%s", args.save_preset)

    progress = not args.quiet
    if args.command == "gen":
        return cmd_gen(run, args.count, run.out_dir)
    if args.command == "train":
        return cmd_train(run, run.data_dir, run.out_dir, resume=args.resume, progress=progress)
    if args.command == "eval":
        return cmd_eval(run, run.checkpoint, run.data_dir, run.out_dir,
                        turns_only=args.turns_only, verbose=args.verbose, progress=progress)
    if args.command == "rollout":
        return cmd_rollout(run, run.checkpoint, args.scene, run.out_dir, svg=args.svg, png=args.png)
    if args.command == "gradcheck":
        return cmd_gradcheck(run, inject_fault=args.inject_fault)
    return cmd_bench(run, args.scene)


def main(argv: Optional[List[str]] = None) -> int:
    """Parses arguments, runs one command and maps errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return config.EXIT_OK if e.code == 0 else config.EXIT_USAGE
    setup_logging(args.quiet, args.verbose)

    try:
        return run_command(args)
    except TrajPilotError as e:
        logger.error("command_failed | command=%s | error=%s", args.command, e)
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        return config.EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
