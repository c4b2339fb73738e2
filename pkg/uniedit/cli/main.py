"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Callable

from ..lib.ablations import WINDOW_MODES
from ..lib.run_config import RunConfig
from ..version import UNIEDIT_VERSION
from .commands import EXIT_ERROR, cmd_ablate_alpha, cmd_ablate_window, cmd_bench, cmd_edit, cmd_gen_world

if TYPE_CHECKING:
    from collections.abc import Sequence

Command = Callable[[RunConfig, argparse.Namespace], int]

logger = logging.getLogger(__name__)


def _add_case_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scene", required=True, help="scene graph JSON file")
    parser.add_argument("--instruction", required=True, help="edit instruction")
    parser.add_argument("--task", required=True, help="task type, e.g. color_alter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uniedit", description="Training-free latent editing in a synthetic concept world.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {UNIEDIT_VERSION}")
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="run seed (overrides the config)")
    parser.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    gen_world = commands.add_parser("gen-world", help="write a concept vocabulary file")
    gen_world.add_argument("--dimension", type=int, default=None)
    gen_world.add_argument("--world-seed", type=int, default=None)
    gen_world.add_argument("--axes", default=None, help="'group=a,b;group2=c,d' (default: built-in axes)")
    gen_world.add_argument("--output", default=None, help="target file (default: <out>/world.json)")
    gen_world.set_defaults(handler=cmd_gen_world)

    edit = commands.add_parser("edit", help="run the edit loop on one scene")
    _add_case_arguments(edit)
    edit.add_argument("--emit-plan", action="store_true", help="write plan.json before integration starts")
    edit.set_defaults(handler=cmd_edit)

    ablate_alpha = commands.add_parser("ablate-alpha", help="uniform vs decayed gain schedules")
    _add_case_arguments(ablate_alpha)
    ablate_alpha.add_argument("--seeds", type=int, default=50, help="number of consecutive seeds")
    ablate_alpha.set_defaults(handler=cmd_ablate_alpha)

    ablate_window = commands.add_parser("ablate-window", help="compare patience windows")
    _add_case_arguments(ablate_window)
    ablate_window.add_argument("--windows", default="1..10", help="ascending list, e.g. '1..10' or '2,4,8'")
    ablate_window.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    ablate_window.add_argument("--mode", choices=WINDOW_MODES, default="replay")
    ablate_window.set_defaults(handler=cmd_ablate_window)

    bench = commands.add_parser("bench", help="run a benchmark suite")
    bench.add_argument("--suite", default=None, help="suite JSON file (default: built-in suite)")
    bench.add_argument("--include-text-change", action="store_true", help="add the unsupported text_change case to the built-in suite")
    bench.add_argument("--workers", type=int, default=None)
    bench.set_defaults(handler=cmd_bench)

    return parser


def report_error(e: BaseException) -> None:
    """Typed errors go to stderr as one JSON object."""
    print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    handler: Command = args.handler
    try:
        config = RunConfig.from_file(args.config)
        if args.seed is not None:
            config.update_setting("seed", args.seed)
        if args.out is not None:
            config.update_setting("out", str(args.out))
        return handler(config, args)
    except (ValueError, LookupError, OSError) as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        report_error(e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
