"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.

Run directory layout:

    <run>/plan.json                  round-1 edit plan
    <run>/round-<n>/trajectory.json  full trajectory with vectors
    <run>/round-<n>/trajectory.csv   k, t, score, delta_v_norm, cos_to_source, cos_to_target
    <run>/result.json                edit result summary
    <run>/events.jsonl               structured event log (written by the event log middleware)
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from .dse_engine import TRAJECTORY_CSV_HEADER
from .utilities import atomic_write_csv, atomic_write_json, create_slug

if TYPE_CHECKING:
    from pathlib import Path
    from .dse_engine import Trajectory
    from .instruction_parser import EditPlan
    from .uev_loop import EditResult

PLAN_FILE = "plan.json"
RESULT_FILE = "result.json"
EVENTS_FILE = "events.jsonl"

logger = logging.getLogger(__name__)


def run_dir_name(instruction: str, seed: int) -> str:
    return f"{create_slug(instruction) or 'edit'}-seed{seed}"


def write_plan(plan: EditPlan, path: Path) -> Path:
    return atomic_write_json(path, plan.to_json())


def write_trajectory(trajectory: Trajectory, directory: Path) -> list[Path]:
    return [
        atomic_write_json(directory / "trajectory.json", trajectory.to_json()),
        atomic_write_csv(directory / "trajectory.csv", TRAJECTORY_CSV_HEADER, trajectory.csv_rows()),
    ]


def write_run(result: EditResult, run_dir: Path) -> list[Path]:
    """Write every file of a finished edit; returns the paths written."""
    written = [write_plan(result.per_round[0].plan, run_dir / PLAN_FILE)]
    for round_result in result.per_round:
        written.extend(write_trajectory(round_result.trajectory, run_dir / f"round-{round_result.round}"))
    written.append(atomic_write_json(run_dir / RESULT_FILE, result.to_json()))
    logger.info(f"Wrote {len(written)} files to {run_dir}")
    return written
