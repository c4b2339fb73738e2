"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np

from .dse_engine import DseConfig, run_dse
from .instruction_parser import InstructionError, build_edit_plan
from .run_middleware import RunMiddleware
from .semantic_space import embed_prompt
from .utilities import derive_seed, vector_to_json
from .verifier import Verifier, VerifierConfig, compute_feedback, corrective_instruction, decode_to_graph

if TYPE_CHECKING:
    from .dse_engine import StepRecord, Trajectory
    from .instruction_parser import EditPlan
    from .scene_graph import SceneGraph
    from .semantic_space import ConceptVocabulary
    from .task_types import TaskType
    from .utilities import JSON_TYPE
    from .velocity_model import VelocityModel
    from .verifier import FeedbackVector


DEFAULT_MAX_ROUNDS = 3


class LoopConfig(NamedTuple):
    max_rounds: int = DEFAULT_MAX_ROUNDS
    dse: DseConfig = DseConfig()
    verifier: VerifierConfig = VerifierConfig()

    def validate(self) -> LoopConfig:
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be at least 1, got {self.max_rounds}")
        self.dse.alpha_schedule()
        self.dse.guidance.validate()
        self.verifier.validate()
        return self


class RoundResult(NamedTuple):
    round: int
    instruction: str
    plan: EditPlan
    trajectory: Trajectory
    stop_reason: str
    best_score: float
    best_step: int
    best_latent: np.ndarray
    feedback: FeedbackVector
    corrective: Optional[str]

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "round": self.round,
            "instruction": self.instruction,
            "stop_reason": self.stop_reason,
            "num_steps": self.trajectory.num_steps,
            "seed": self.trajectory.seed,
            "best_score": self.best_score,
            "best_step": self.best_step,
            "feedback": self.feedback.to_json(),
            "corrective_instruction": self.corrective,
        }


class EditResult(NamedTuple):
    final_latent: np.ndarray
    final_graph: SceneGraph
    rounds_used: int
    per_round: list[RoundResult]
    converged: bool
    best_score: float
    seed: int

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "converged": self.converged,
            "rounds_used": self.rounds_used,
            "best_score": self.best_score,
            "seed": self.seed,
            "final_graph": self.final_graph.to_json(),
            "final_latent": vector_to_json(self.final_latent),
            "rounds": [r.to_json() for r in self.per_round],
        }


@dataclass
class LoopState:
    """What middleware sees of a running edit loop."""

    instruction: str
    task: TaskType
    plan: EditPlan
    verifier: Verifier
    round: int = 1
    last_record: Optional[StepRecord] = None
    trajectory: Optional[Trajectory] = None
    feedback: Optional[FeedbackVector] = None
    corrective: Optional[str] = None
    rounds: list[RoundResult] = field(default_factory=list)


class UevLoop:
    """
    Understanding, editing and verifying rounds for one edit.

    Every round is verified against the first round's target (the editing
    intent). A round that ends below the threshold hands the next round its best
    latent and a corrective instruction built from the dense feedback.
    """

    def __init__(
        self,
        vocab: ConceptVocabulary,
        config: LoopConfig | None = None,
        middleware: RunMiddleware | None = None,
        model: VelocityModel | None = None,
    ) -> None:
        self.vocab = vocab
        self.config = (config or LoopConfig()).validate()
        self.middleware = middleware or RunMiddleware()
        self.model = model
        self.logger = logging.getLogger(__name__)

    def _next_plan(self, decoded: SceneGraph, corrective: str, task: TaskType, intent: EditPlan) -> EditPlan:
        try:
            return build_edit_plan(decoded, corrective, task, self.vocab)
        except InstructionError as e:
            self.logger.warning(f"Corrective instruction '{corrective}' failed ({e!r}); reusing the original target")
            return intent

    def run(self, scene: SceneGraph, instruction: str, task: TaskType, seed: int) -> EditResult:
        cfg = self.config
        sigma = cfg.verifier.threshold_sigma

        intent = build_edit_plan(scene, instruction, task, self.vocab)
        intent_prompt = embed_prompt(self.vocab, intent.caption_tar)
        intent_graph = intent.graph_tar

        z0 = cfg.dse.amplitude * embed_prompt(self.vocab, intent.caption_src).values
        verifier = Verifier(cfg.verifier)
        state = LoopState(instruction=instruction, task=task, plan=intent, verifier=verifier)

        def observe(record: StepRecord) -> bool:
            halt = verifier(record)
            state.last_record = record
            self.middleware.after_step(state)
            return halt

        plan = intent
        round_instruction = instruction
        for round_index in range(1, cfg.max_rounds + 1):
            if round_index > 1:
                previous = state.rounds[-1]
                assert previous.corrective is not None
                z0 = previous.best_latent
                round_instruction = previous.corrective
                plan = self._next_plan(previous.feedback.observed_graph, round_instruction, task, intent)

            verifier.reset()
            state.round = round_index
            state.plan = plan
            state.instruction = round_instruction
            state.last_record = state.trajectory = state.feedback = None
            state.corrective = None
            self.logger.info(f"Round {round_index}: '{round_instruction}'")
            self.middleware.before_round(state)

            dse_config = cfg.dse._replace(seed=derive_seed(seed, round_index))
            trajectory = run_dse(z0, plan, dse_config, self.vocab, observe, score_prompt=intent_prompt, model=self.model)

            best_latent = verifier.state.best_latent
            assert best_latent is not None
            best_score = verifier.state.best_score
            feedback = compute_feedback(best_latent, intent_graph, self.vocab)
            converged = best_score >= sigma
            corrective = None if converged else corrective_instruction(feedback, intent_graph)

            state.trajectory = trajectory
            state.feedback = feedback
            state.corrective = corrective
            state.rounds.append(RoundResult(
                round=round_index,
                instruction=round_instruction,
                plan=plan,
                trajectory=trajectory,
                stop_reason=trajectory.halt_reason,
                best_score=best_score,
                best_step=verifier.state.best_step,
                best_latent=best_latent,
                feedback=feedback,
                corrective=corrective,
            ))
            self.middleware.after_round(state)
            self.logger.info(
                f"Round {round_index} ended ({trajectory.halt_reason}): best score {best_score:.4f} at step {verifier.state.best_step}"
            )

            if converged:
                break

        best = max(state.rounds, key=lambda r: r.best_score)
        converged = best.best_score >= sigma
        if converged:
            self.logger.info(f"Converged after {len(state.rounds)} round(s) with score {best.best_score:.4f}")
        else:
            self.logger.info(f"Not converged after {len(state.rounds)} round(s); best score {best.best_score:.4f}")

        return EditResult(
            final_latent=best.best_latent,
            final_graph=decode_to_graph(best.best_latent, self.vocab, intent_graph),
            rounds_used=len(state.rounds),
            per_round=list(state.rounds),
            converged=converged,
            best_score=best.best_score,
            seed=seed,
        )


def run_uev(
    scene: SceneGraph,
    instruction: str,
    task: TaskType,
    cfg: LoopConfig,
    seed: int,
    vocab: ConceptVocabulary,
    middleware: RunMiddleware | None = None,
    model: VelocityModel | None = None,
) -> EditResult:
    return UevLoop(vocab, cfg, middleware, model).run(scene, instruction, task, seed)
