"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

from ..lib.ablations import (
    ALPHA_CURVE_HEADER,
    ALPHA_SUMMARY_HEADER,
    PEAK_DISTRIBUTION_HEADER,
    WINDOW_HEADER,
    run_alpha_ablation,
    run_window_ablation,
)
from ..lib.bench import CASE_HEADER, CATEGORY_HEADER, BenchSuite, default_suite, run_bench
from ..lib.instruction_parser import build_edit_plan
from ..lib.run_middleware import EventLogMiddleware, RunMiddleware
from ..lib.run_writer import EVENTS_FILE, PLAN_FILE, run_dir_name, write_plan, write_run
from ..lib.scene_graph import SceneGraph
from ..lib.semantic_space import DEFAULT_AXES, ConceptVocabulary
from ..lib.task_types import TaskType
from ..lib.uev_loop import run_uev
from ..lib.utilities import atomic_write_csv, atomic_write_json, read_json_object

if TYPE_CHECKING:
    from argparse import Namespace
    from collections.abc import Mapping, Sequence
    from ..lib.run_config import RunConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

logger = logging.getLogger(__name__)


def parse_axes(spec: str) -> Mapping[str, Sequence[str]]:
    """Parse 'group=a,b;group2=c,d' into axis groups."""
    axes: dict[str, list[str]] = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ValueError(f"Axis group '{part}' must look like 'group=token,token'")
        group, members = part.split("=", 1)
        axes[group.strip()] = [token.strip() for token in members.split(",") if token.strip()]
    if not axes:
        raise ValueError("Axis specification is empty")
    return axes


def parse_int_list(text: str) -> list[int]:
    """Comma-separated integers; 'a..b' expands to an inclusive range."""
    values: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            start, end = part.split("..", 1)
            values.extend(range(int(start), int(end) + 1))
        elif part:
            values.append(int(part))
    return values


def _load_case(args: Namespace) -> tuple[SceneGraph, str, TaskType]:
    scene = SceneGraph.from_json(read_json_object(Path(args.scene)))
    return scene, args.instruction, TaskType.parse(args.task)


def cmd_gen_world(config: RunConfig, args: Namespace) -> int:
    dimension = args.dimension if args.dimension is not None else config.get_dimension()
    seed = args.world_seed if args.world_seed is not None else config.get_world_seed()
    axes = parse_axes(args.axes) if args.axes else DEFAULT_AXES

    vocab = ConceptVocabulary.build(dimension, seed, axes)
    path = Path(args.output) if args.output else config.get_out_dir() / "world.json"
    vocab.save(path)
    logger.info(f"Wrote vocabulary with {len(vocab)} concepts to {path}")
    print(path)
    return EXIT_OK


def cmd_edit(config: RunConfig, args: Namespace) -> int:
    vocab = config.vocabulary()
    scene, instruction, task = _load_case(args)
    loop_config = config.loop_config()
    seed = config.get_seed()
    run_dir = config.get_out_dir() / run_dir_name(instruction, seed)

    if args.emit_plan:
        write_plan(build_edit_plan(scene, instruction, task, vocab), run_dir / PLAN_FILE)

    event_log = EventLogMiddleware(run_dir / EVENTS_FILE, enabled=config.is_enabled("log_events", True))
    result = run_uev(scene, instruction, task, loop_config, seed, vocab, RunMiddleware(event_log))
    write_run(result, run_dir)
    print(run_dir)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_ablate_alpha(config: RunConfig, args: Namespace) -> int:
    vocab = config.vocabulary()
    scene, instruction, task = _load_case(args)
    seed = config.get_seed()
    seeds = list(range(seed, seed + args.seeds))

    ablation = run_alpha_ablation(scene, instruction, task, vocab, config.dse_config(), seeds)
    out_dir = config.get_out_dir() / "ablate-alpha"
    atomic_write_csv(out_dir / "curves.csv", ALPHA_CURVE_HEADER, ablation.curves)
    atomic_write_csv(out_dir / "summary.csv", ALPHA_SUMMARY_HEADER, ablation.summary_rows())
    atomic_write_json(out_dir / "report.json", ablation.to_json())
    print(out_dir)
    return EXIT_OK


def cmd_ablate_window(config: RunConfig, args: Namespace) -> int:
    vocab = config.vocabulary()
    scene, instruction, task = _load_case(args)
    seed = config.get_seed()
    seeds = list(range(seed, seed + args.seeds))

    ablation = run_window_ablation(
        scene, instruction, task, vocab, config.loop_config(), parse_int_list(args.windows), seeds, args.mode,
    )
    out_dir = config.get_out_dir() / "ablate-window"
    atomic_write_csv(out_dir / "windows.csv", WINDOW_HEADER, ablation.csv_rows())
    atomic_write_csv(out_dir / "peaks.csv", PEAK_DISTRIBUTION_HEADER, ablation.peak_distribution())
    atomic_write_json(out_dir / "report.json", ablation.to_json())
    print(out_dir)
    return EXIT_OK


def cmd_bench(config: RunConfig, args: Namespace) -> int:
    vocab = config.vocabulary()
    suite = BenchSuite.load(Path(args.suite)) if args.suite else default_suite(args.include_text_change)
    suite.validate(vocab)

    workers = args.workers if args.workers is not None else config.get_workers()
    report = run_bench(suite, vocab, config.loop_config(), config.get_seed(), workers, config.snapshot(exclude=("out", "workers")))

    out_dir = config.get_out_dir() / "bench"
    atomic_write_json(out_dir / "report.json", report.to_json())
    atomic_write_csv(out_dir / "report.csv", CATEGORY_HEADER, report.category_rows())
    atomic_write_csv(out_dir / "cases.csv", CASE_HEADER, [case.csv_row() for case in report.cases])
    print(out_dir)
    return EXIT_OK
