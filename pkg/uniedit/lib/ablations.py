"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.

Schedule and patience-window studies.
"""

from __future__ import annotations

import logging
from collections import Counter
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .dse_engine import HALT_EARLY_STOP, make_alpha_schedule, run_dse
from .instruction_parser import build_edit_plan
from .semantic_space import cosine, embed_prompt
from .uev_loop import LoopConfig, run_uev
from .verifier import first_stop_step

if TYPE_CHECKING:
    from collections.abc import Sequence
    from .dse_engine import DseConfig, Trajectory
    from .scene_graph import SceneGraph
    from .semantic_space import ConceptVocabulary
    from .task_types import TaskType
    from .utilities import JSON_TYPE


ALPHA_SCHEDULES = ("uniform", "decayed")
WINDOW_MODES = ("replay", "live")

ALPHA_CURVE_HEADER = ("seed", "schedule", "k", "t", "score", "cos_to_source")
ALPHA_SUMMARY_HEADER = ("seed", "schedule", "final_score", "final_cos_to_source", "peak_step", "peak_score")
WINDOW_HEADER = ("window", "seed", "stop_step", "stopped_early", "best_score_at_stop", "peak_step")
PEAK_DISTRIBUTION_HEADER = ("window", "peak_step", "count")

# Published full-scale figures, listed for comparison only; this toy setting does not reproduce them.
ALPHA_REFERENCE = {
    "note": "Published full-model curves; only the direction (decayed keeps closer to the source) is measured here.",
    "uniform_score_trend": "declines after step 20",
}
WINDOW_REFERENCE = {
    "note": "Published full-model CLIP scores across windows; not reproduced, never asserted.",
    "clip_score_range": [0.288, 0.368],
}

logger = logging.getLogger(__name__)


def peak_step(scores: Sequence[float]) -> int:
    """Step of the highest score, first occurrence."""
    return int(np.argmax(np.asarray(scores)))


# alpha schedules


class AlphaSummary(NamedTuple):
    seed: int
    schedule: str
    final_score: float
    final_cos_to_source: float
    peak_step: int
    peak_score: float


class AlphaAblation(NamedTuple):
    curves: list[tuple[JSON_TYPE, ...]]
    summaries: list[AlphaSummary]

    def fraction_decayed_closer(self) -> float:
        """Share of seeds whose decayed run ends at least as close to the source as the uniform run."""
        by_seed: dict[int, dict[str, AlphaSummary]] = {}
        for row in self.summaries:
            by_seed.setdefault(row.seed, {})[row.schedule] = row
        wins = [rows["decayed"].final_cos_to_source >= rows["uniform"].final_cos_to_source for rows in by_seed.values()]
        return float(np.mean(wins)) if wins else 0.0

    def max_final_score_gap(self) -> float:
        by_seed: dict[int, dict[str, float]] = {}
        for row in self.summaries:
            by_seed.setdefault(row.seed, {})[row.schedule] = row.final_score
        gaps = [abs(scores["decayed"] - scores["uniform"]) for scores in by_seed.values()]
        return max(gaps, default=0.0)

    def summary_rows(self) -> list[tuple[JSON_TYPE, ...]]:
        return [
            (row.seed, row.schedule, f"{row.final_score:.6f}", f"{row.final_cos_to_source:.6f}", row.peak_step, f"{row.peak_score:.6f}")
            for row in self.summaries
        ]

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "reference": dict(ALPHA_REFERENCE),
            "measured": {
                "seeds": len({row.seed for row in self.summaries}),
                "fraction_decayed_closer_to_source": self.fraction_decayed_closer(),
                "max_final_score_gap": self.max_final_score_gap(),
            },
            "summaries": [row._asdict() for row in self.summaries],
        }


def run_alpha_ablation(
    scene: SceneGraph,
    instruction: str,
    task: TaskType,
    vocab: ConceptVocabulary,
    config: DseConfig,
    seeds: Sequence[int],
) -> AlphaAblation:
    """
    Run the same edit under the uniform and decayed schedules, without verification.

    Both schedules see the same noise draws for a given seed.
    """
    plan = build_edit_plan(scene, instruction, task, vocab)
    z0 = config.amplitude * embed_prompt(vocab, plan.caption_src).values

    curves: list[tuple[JSON_TYPE, ...]] = []
    summaries: list[AlphaSummary] = []
    for seed in seeds:
        for kind in ALPHA_SCHEDULES:
            run_config = config._replace(seed=seed, schedule=make_alpha_schedule(kind, config.steps))
            trajectory = run_dse(z0, plan, run_config, vocab)
            cos_to_source = [cosine(record.z_edit, z0) for record in trajectory.steps]
            curves.extend(
                (seed, kind, record.k, f"{record.t:.6f}", f"{record.score:.6f}", f"{cos:.6f}")
                for record, cos in zip(trajectory.steps, cos_to_source)
            )
            scores = trajectory.scores
            peak = peak_step(scores)
            summaries.append(AlphaSummary(seed, kind, scores[-1], cos_to_source[-1], peak, scores[peak]))
        logger.debug(f"Alpha ablation seed {seed} done")

    return AlphaAblation(curves, summaries)


# patience windows


class WindowRow(NamedTuple):
    window: int
    seed: int
    stop_step: int
    stopped_early: bool
    best_score_at_stop: float
    peak_step: int


class WindowAblation(NamedTuple):
    mode: str
    rows: list[WindowRow]

    def peak_distribution(self) -> list[tuple[int, int, int]]:
        counts = Counter((row.window, row.peak_step) for row in self.rows)
        return [(window, step, counts[(window, step)]) for window, step in sorted(counts)]

    def mean_best_by_window(self) -> dict[int, float]:
        grouped: dict[int, list[float]] = {}
        for row in self.rows:
            grouped.setdefault(row.window, []).append(row.best_score_at_stop)
        return {window: float(np.mean(scores)) for window, scores in sorted(grouped.items())}

    def csv_rows(self) -> list[tuple[JSON_TYPE, ...]]:
        return [
            (row.window, row.seed, row.stop_step, int(row.stopped_early), f"{row.best_score_at_stop:.6f}", row.peak_step)
            for row in self.rows
        ]

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "reference": dict(WINDOW_REFERENCE),
            "mode": self.mode,
            "measured": {"mean_best_score_at_stop": {str(w): s for w, s in self.mean_best_by_window().items()}},
            "rows": [row._asdict() for row in self.rows],
        }


def replay_window(trajectory: Trajectory, window: int, loop_config: LoopConfig) -> WindowRow:
    """Apply the stop rule with the given window to a recorded trajectory."""
    scores = trajectory.scores
    verifier_config = loop_config.verifier._replace(patience_window=window)
    stop = first_stop_step(scores, verifier_config)
    stop_step = stop if stop is not None else len(scores) - 1
    observed = scores[: stop_step + 1]
    peak = peak_step(observed)
    return WindowRow(window, trajectory.seed, stop_step, stop is not None, observed[peak], peak)


def run_window_ablation(
    scene: SceneGraph,
    instruction: str,
    task: TaskType,
    vocab: ConceptVocabulary,
    loop_config: LoopConfig,
    windows: Sequence[int],
    seeds: Sequence[int],
    mode: str = "replay",
) -> WindowAblation:
    """
    Compare patience windows on identical seeds.

    replay: one verification-free trajectory per seed, truncated by each window's
    stop rule. live: the full edit loop per window and seed.
    """
    if mode not in WINDOW_MODES:
        raise ValueError(f"Unknown window ablation mode '{mode}' (expected one of: {', '.join(WINDOW_MODES)})")
    if not windows or list(windows) != sorted(windows) or min(windows) < 1:
        raise ValueError(f"Windows must be positive and sorted ascending, got {list(windows)}")

    rows: list[WindowRow] = []
    if mode == "replay":
        plan = build_edit_plan(scene, instruction, task, vocab)
        z0 = loop_config.dse.amplitude * embed_prompt(vocab, plan.caption_src).values
        for seed in seeds:
            trajectory = run_dse(z0, plan, loop_config.dse._replace(seed=seed), vocab)
            rows.extend(replay_window(trajectory, window, loop_config) for window in windows)
    else:
        for window in windows:
            config = loop_config._replace(verifier=loop_config.verifier._replace(patience_window=window))
            for seed in seeds:
                result = run_uev(scene, instruction, task, config, seed, vocab)
                best_round = max(result.per_round, key=lambda r: r.best_score)
                last_round = result.per_round[-1]
                rows.append(WindowRow(
                    window,
                    seed,
                    last_round.trajectory.num_steps,
                    last_round.stop_reason == HALT_EARLY_STOP,
                    result.best_score,
                    best_round.best_step,
                ))

    logger.info(f"Window ablation ({mode}) over {len(windows)} windows and {len(seeds)} seeds")
    return WindowAblation(mode, rows)
