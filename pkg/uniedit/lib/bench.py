"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np

from .instruction_parser import InstructionError, UnsupportedTaskError, build_edit_plan
from .scene_graph import ObjectNode, Relation, SceneGraph, SceneGraphError
from .semantic_space import VocabularyError
from .task_types import EXECUTABLE_TASKS, TaskType
from .uev_loop import run_uev
from .utilities import derive_seed, read_json_object

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence
    from pathlib import Path
    from .semantic_space import ConceptVocabulary
    from .uev_loop import LoopConfig
    from .utilities import JSON_TYPE


DEFAULT_WORKERS = 4

STATUS_CONVERGED = "converged"
STATUS_NOT_CONVERGED = "not_converged"
STATUS_UNSUPPORTED = "unsupported"
STATUS_ERROR = "error"

CATEGORY_HEADER = ("category", "cases", "converged", "convergence_rate", "mean_final_score", "mean_rounds")
CASE_HEADER = ("case_id", "task", "instruction", "status", "rounds_used", "final_score", "error_type", "error")

# Published per-category results come from a judged image benchmark and are not comparable.
BENCH_REFERENCE = {
    "note": "Published benchmark scores require real images and a judge model; none are reproduced or asserted here.",
    "categories": len(TaskType),
}

logger = logging.getLogger(__name__)


class SuiteError(ValueError):
    pass


class BenchCase(NamedTuple):
    case_id: str
    task: TaskType
    scene: SceneGraph
    instruction: str
    expect_unsupported: bool = False

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "id": self.case_id,
            "task": self.task.value,
            "scene": self.scene.to_json(),
            "instruction": self.instruction,
            "expect_unsupported": self.expect_unsupported,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, JSON_TYPE]) -> BenchCase:
        try:
            task = TaskType.parse(str(data["task"]))
            scene = data["scene"]
            if not isinstance(scene, dict):
                raise SuiteError(f"Case {data.get('id')!r}: scene must be an object")
            return cls(
                case_id=str(data["id"]),
                task=task,
                scene=SceneGraph.from_json(scene),
                instruction=str(data["instruction"]),
                expect_unsupported=bool(data.get("expect_unsupported", task is TaskType.TEXT_CHANGE)),
            )
        except (KeyError, ValueError) as e:
            if isinstance(e, SuiteError):
                raise
            raise SuiteError(f"Malformed bench case {dict(data)!r}: {e}") from e


class BenchSuite:
    """Edit cases grouped by task category."""

    def __init__(self, cases: Iterable[BenchCase]) -> None:
        self.cases: tuple[BenchCase, ...] = tuple(cases)
        ids = [case.case_id for case in self.cases]
        duplicates = sorted(i for i, n in Counter(ids).items() if n > 1)
        if duplicates:
            raise SuiteError(f"Duplicate case ids: {', '.join(duplicates)}")

    def __len__(self) -> int:
        return len(self.cases)

    @property
    def category_counts(self) -> dict[TaskType, int]:
        counts = Counter(case.task for case in self.cases)
        return {task: counts[task] for task in TaskType if counts[task]}

    def validate(self, vocab: ConceptVocabulary) -> None:
        """Every executable case must parse; text_change cases must be rejected as unsupported."""
        for case in self.cases:
            try:
                build_edit_plan(case.scene, case.instruction, case.task, vocab)
            except UnsupportedTaskError:
                if not case.expect_unsupported:
                    raise SuiteError(f"Case {case.case_id}: task {case.task.value} is unsupported") from None
                continue
            except (InstructionError, SceneGraphError, VocabularyError) as e:
                raise SuiteError(f"Case {case.case_id} does not parse: {e}") from e
            if case.expect_unsupported:
                raise SuiteError(f"Case {case.case_id} is marked unsupported but parses")

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {"cases": [case.to_json() for case in self.cases]}

    @classmethod
    def from_json(cls, data: Mapping[str, JSON_TYPE]) -> BenchSuite:
        raw_cases = data.get("cases")
        if not isinstance(raw_cases, list):
            raise SuiteError("Suite must hold a 'cases' list")
        return cls(BenchCase.from_json(item) for item in raw_cases if isinstance(item, dict))

    @classmethod
    def load(cls, path: Path) -> BenchSuite:
        return cls.from_json(read_json_object(path))


# default suite


def _scene(*nodes: tuple[str, dict[str, str]], edges: Sequence[tuple[int, str, int]] = ()) -> SceneGraph:
    return SceneGraph(
        [ObjectNode.create(i, name, attributes) for i, (name, attributes) in enumerate(nodes)],
        [Relation(*edge) for edge in edges],
    )


_DEFAULT_CASES: dict[TaskType, list[tuple[SceneGraph, str]]] = {
    TaskType.SUBJECT_REPLACE: [
        (_scene(("dog", {}), ("grass", {}), edges=[(0, "on", 1)]), "replace the dog with a cat"),
        (_scene(("cat", {})), "replace the cat with a bird"),
        (_scene(("dog", {"color": "brown"}), ("ball", {})), "replace the ball with a hat"),
        (_scene(("man", {}), ("hat", {})), "replace the hat with a ball"),
        (_scene(("bird", {}), ("grass", {}), edges=[(0, "on", 1)]), "replace the bird with a dog"),
    ],
    TaskType.COLOR_ALTER: [
        (_scene(("dog", {"color": "brown"})), "make the dog blue"),
        (_scene(("ball", {"color": "red"})), "change the color of the ball to green"),
        (_scene(("dog", {})), "make the dog red"),
        (_scene(("cat", {"color": "blue"}), ("grass", {})), "make the cat brown"),
        (_scene(("hat", {"color": "green"})), "change the color of the hat to red"),
    ],
    TaskType.MATERIAL_ALTER: [
        (_scene(("ball", {"material": "wood"})), "make the ball metal"),
        (_scene(("hat", {"material": "glass"})), "change the material of the hat to wood"),
        (_scene(("ball", {"material": "metal"})), "make the ball glass"),
        (_scene(("ball", {})), "make the ball wood"),
        (_scene(("hat", {"material": "wood"}), ("dog", {})), "make the hat metal"),
    ],
    TaskType.SUBJECT_ADD: [
        (_scene(("grass", {})), "add a dog on the grass"),
        (_scene(("dog", {})), "add a hat on the dog"),
        (_scene(("cat", {})), "add a red ball"),
        (_scene(("man", {})), "add a dog next to the man"),
        (_scene(("dog", {}), ("grass", {})), "add a bird"),
    ],
    TaskType.SUBJECT_REMOVE: [
        (_scene(("dog", {}), ("grass", {}), ("cat", {}), edges=[(0, "on", 1)]), "remove the cat"),
        (_scene(("dog", {}), ("hat", {})), "remove the hat"),
        (_scene(("cat", {}), ("ball", {})), "remove the ball"),
        (_scene(("man", {}), ("dog", {})), "remove the dog"),
        (_scene(("bird", {}), ("grass", {}), ("dog", {})), "remove the bird"),
    ],
    TaskType.STYLE_CHANGE: [
        (_scene(("dog", {})), "change style to painting"),
        (_scene(("cat", {}), ("grass", {})), "change the style to sketch"),
        (_scene(("man", {"style": "photo"})), "change style to painting"),
        (_scene(("ball", {})), "change style to sketch"),
        (_scene(("bird", {})), "change style to photo"),
    ],
    TaskType.TONE_TRANSFER: [
        (_scene(("dog", {})), "change tone to warm"),
        (_scene(("cat", {}), ("grass", {})), "change the tone to cool"),
        (_scene(("man", {"tone": "warm"})), "change tone to cool"),
        (_scene(("ball", {})), "change tone to warm"),
        (_scene(("bird", {}), ("hat", {})), "change tone to cool"),
    ],
    TaskType.BACKGROUND_CHANGE: [
        (_scene(("dog", {}), ("beach", {})), "change background to forest"),
        (_scene(("cat", {}), ("city", {})), "change the background to beach"),
        (_scene(("man", {})), "change background to city"),
        (_scene(("bird", {}), ("forest", {})), "change background to city"),
        (_scene(("ball", {}), ("beach", {})), "change background to forest"),
    ],
    TaskType.MOTION_CHANGE: [
        (_scene(("man", {"pose": "standing"})), "change pose to running"),
        (_scene(("dog", {})), "make the dog sitting"),
        (_scene(("cat", {"pose": "sitting"})), "change pose to standing"),
        (_scene(("dog", {"pose": "running"}), ("ball", {})), "make the dog standing"),
        (_scene(("man", {})), "change pose to sitting"),
    ],
    TaskType.PS_HUMAN: [
        (_scene(("man", {"rank": "royal"})), "make it a woman"),
        (_scene(("woman", {"rank": "common"})), "make it a man"),
        (_scene(("woman", {"rank": "royal"})), "make it common"),
        (_scene(("man", {}), ("dog", {})), "make it royal"),
        (_scene(("man", {"rank": "common"})), "change rank to royal"),
    ],
}

_TEXT_CHANGE_CASE = (_scene(("dog", {})), 'change the text on the dog to "hello"')


def default_suite(include_text_change: bool = False) -> BenchSuite:
    """Five cases for each executable category; optionally one text_change case expected to be rejected."""
    cases = [
        BenchCase(f"{task.value}-{i + 1}", task, scene, instruction)
        for task in EXECUTABLE_TASKS
        for i, (scene, instruction) in enumerate(_DEFAULT_CASES[task])
    ]
    if include_text_change:
        scene, instruction = _TEXT_CHANGE_CASE
        cases.append(BenchCase(f"{TaskType.TEXT_CHANGE.value}-1", TaskType.TEXT_CHANGE, scene, instruction, True))
    return BenchSuite(cases)


# running


class CaseResult(NamedTuple):
    case_id: str
    task: TaskType
    instruction: str
    status: str
    rounds_used: int
    final_score: Optional[float]
    error_type: Optional[str] = None
    error: Optional[str] = None

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED

    def to_json(self) -> dict[str, JSON_TYPE]:
        data: dict[str, JSON_TYPE] = dict(self._asdict())
        data["task"] = self.task.value
        return data

    def csv_row(self) -> tuple[JSON_TYPE, ...]:
        score = "" if self.final_score is None else f"{self.final_score:.6f}"
        return (
            self.case_id,
            self.task.value,
            self.instruction,
            self.status,
            self.rounds_used,
            score,
            self.error_type or "",
            self.error or "",
        )


class CategoryRow(NamedTuple):
    category: str
    cases: int
    converged: int
    convergence_rate: float
    mean_final_score: float
    mean_rounds: float

    def csv_row(self) -> tuple[JSON_TYPE, ...]:
        return (
            self.category,
            self.cases,
            self.converged,
            f"{self.convergence_rate:.4f}",
            f"{self.mean_final_score:.6f}",
            f"{self.mean_rounds:.4f}",
        )


class BenchReport(NamedTuple):
    seed: int
    config: dict[str, JSON_TYPE]
    cases: list[CaseResult]
    categories: list[CategoryRow]
    average: CategoryRow

    @property
    def convergence_rate(self) -> float:
        executed = [c for c in self.cases if c.status != STATUS_UNSUPPORTED]
        return sum(c.converged for c in executed) / len(executed) if executed else 0.0

    def category_rows(self) -> list[tuple[JSON_TYPE, ...]]:
        return [row.csv_row() for row in [*self.categories, self.average]]

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "reference": dict(BENCH_REFERENCE),
            "measured": {"convergence_rate": self.convergence_rate, "cases": len(self.cases)},
            "seed": self.seed,
            "config": self.config,
            "categories": [row._asdict() for row in self.categories],
            "average": self.average._asdict(),
            "cases": [case.to_json() for case in self.cases],
        }


def run_case(case: BenchCase, vocab: ConceptVocabulary, loop_config: LoopConfig, seed: int) -> CaseResult:
    """Run one case; errors are recorded rather than raised."""
    try:
        result = run_uev(case.scene, case.instruction, case.task, loop_config, seed, vocab)
    except UnsupportedTaskError as e:
        status = STATUS_UNSUPPORTED if case.expect_unsupported else STATUS_ERROR
        return CaseResult(case.case_id, case.task, case.instruction, status, 0, None, type(e).__name__, str(e))
    except Exception as e:
        logger.error(f"Bench case {case.case_id} failed: {e!r}")
        return CaseResult(case.case_id, case.task, case.instruction, STATUS_ERROR, 0, None, type(e).__name__, str(e))

    status = STATUS_CONVERGED if result.converged else STATUS_NOT_CONVERGED
    return CaseResult(case.case_id, case.task, case.instruction, status, result.rounds_used, result.best_score)


def _category_row(name: str, results: Sequence[CaseResult]) -> CategoryRow:
    scores = [r.final_score for r in results if r.final_score is not None]
    rounds = [r.rounds_used for r in results if r.status in (STATUS_CONVERGED, STATUS_NOT_CONVERGED)]
    converged = sum(r.converged for r in results)
    return CategoryRow(
        category=name,
        cases=len(results),
        converged=converged,
        convergence_rate=converged / len(results) if results else 0.0,
        mean_final_score=float(np.mean(scores)) if scores else 0.0,
        mean_rounds=float(np.mean(rounds)) if rounds else 0.0,
    )


def run_bench(
    suite: BenchSuite,
    vocab: ConceptVocabulary,
    loop_config: LoopConfig,
    seed: int,
    workers: int = DEFAULT_WORKERS,
    config_snapshot: dict[str, JSON_TYPE] | None = None,
) -> BenchReport:
    """
    Run every case in a worker pool and aggregate per category.

    Case i runs with a seed derived from (seed, i), so the report does not depend
    on the number of workers. The average row is the mean over categories.
    """
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")

    seeds = [derive_seed(seed, i) for i in range(len(suite))]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(lambda item: run_case(item[0], vocab, loop_config, item[1]), zip(suite.cases, seeds)))

    categories: list[CategoryRow] = []
    for task in TaskType:
        executed = [r for r in results if r.task is task and r.status != STATUS_UNSUPPORTED]
        if executed:
            categories.append(_category_row(task.value, executed))

    failed = [r for r in results if r.status == STATUS_ERROR]
    if failed:
        logger.warning(f"{len(failed)} bench case(s) failed: {', '.join(r.case_id for r in failed)}")

    average = CategoryRow(
        category="average",
        cases=sum(row.cases for row in categories),
        converged=sum(row.converged for row in categories),
        convergence_rate=float(np.mean([row.convergence_rate for row in categories])) if categories else 0.0,
        mean_final_score=float(np.mean([row.mean_final_score for row in categories])) if categories else 0.0,
        mean_rounds=float(np.mean([row.mean_rounds for row in categories])) if categories else 0.0,
    )
    logger.info(f"Bench finished: {average.converged}/{average.cases} converged")
    return BenchReport(seed, config_snapshot or {}, results, categories, average)
