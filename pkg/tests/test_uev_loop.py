"""
Tests for the understanding, editing and verifying loop.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from tests.tools import projection_drift
from uniedit.lib.dse_engine import HALT_COMPLETED
from uniedit.lib.run_middleware import EventLogMiddleware, RunMiddleware
from uniedit.lib.scene_graph import ObjectNode, SceneGraph
from uniedit.lib.semantic_space import embed_prompt
from uniedit.lib.task_types import TaskType
from uniedit.lib.uev_loop import LoopConfig, UevLoop, run_uev
from uniedit.lib.utilities import derive_seed
from uniedit.lib.verifier import VerifierConfig, decode_to_graph

if TYPE_CHECKING:
    from pathlib import Path
    from uniedit.lib.semantic_space import ConceptVocabulary


KING_TO_QUEEN = ("make it a woman", TaskType.PS_HUMAN)


class TestKingToQueen:
    """The portrait edit: gender changes, rank is kept."""

    @pytest.mark.slow
    def test_converges_and_keeps_rank(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        z0 = 4.0 * embed_prompt(vocab, ["a", "royal", "man"]).values
        queen = SceneGraph([ObjectNode.create(0, "woman", {"rank": "royal"})])
        successes = 0
        for seed in range(50):
            result = run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), seed, vocab)
            drift = projection_drift(result.final_latent, z0, vocab.embedding("royal"))
            if result.converged and result.final_graph == queen and drift < 0.1:
                successes += 1
        assert successes >= 45

    def test_single_seed(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        result = run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), 0, vocab)
        assert result.converged
        assert result.best_score >= 9.0
        assert result.final_graph.node(0).name == "woman"
        assert result.final_graph.node(0).get("rank") == "royal"
        assert result.per_round[0].trajectory.steps[0].score == pytest.approx(7.5)

    def test_result_json(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        data = run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), 3, vocab).to_json()
        assert data["seed"] == 3
        assert isinstance(data["rounds"], list)
        assert len(data["rounds"]) == data["rounds_used"]


class TestAttributeEdits:
    """Single-attribute edits converge quickly."""

    @pytest.mark.slow
    def test_color_edit_converges_within_two_rounds(self, brown_dog: SceneGraph, vocab: ConceptVocabulary) -> None:
        fast = 0
        improved = 0
        for seed in range(50):
            result = run_uev(brown_dog, "make the dog blue", TaskType.COLOR_ALTER, LoopConfig(), seed, vocab)
            if result.converged and result.rounds_used <= 2:
                fast += 1
            if result.per_round[0].trajectory.steps[0].score < result.best_score:
                improved += 1
        assert fast >= 45
        assert improved >= 48

    def test_rounds_use_derived_seeds(self, brown_dog: SceneGraph, vocab: ConceptVocabulary) -> None:
        result = run_uev(brown_dog, "make the dog blue", TaskType.COLOR_ALTER, LoopConfig(), 5, vocab)
        for round_result in result.per_round:
            assert round_result.trajectory.seed == derive_seed(5, round_result.round)


class TestCorrectiveRounds:
    """An unreachable threshold forces every round to run."""

    config = LoopConfig(verifier=VerifierConfig(threshold_sigma=10.0 + 1e-9))

    def test_runs_all_rounds(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        result = run_uev(king_scene, *KING_TO_QUEEN, self.config, 1, vocab)
        assert not result.converged
        assert result.rounds_used == 3
        assert [r.round for r in result.per_round] == [1, 2, 3]
        assert all(r.stop_reason == HALT_COMPLETED for r in result.per_round)
        assert all(r.corrective is not None for r in result.per_round)
        # later rounds are driven by the previous round's corrective instruction
        for previous, current in zip(result.per_round, result.per_round[1:]):
            assert current.instruction == previous.corrective

    def test_restarts_from_best_latent(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        result = run_uev(king_scene, *KING_TO_QUEEN, self.config, 2, vocab)
        for previous, current in zip(result.per_round, result.per_round[1:]):
            assert np.array_equal(current.trajectory.z_src0, previous.best_latent)
            assert current.best_score >= previous.best_score
        best = max(result.per_round, key=lambda r: r.best_score)
        assert result.best_score == best.best_score
        assert np.array_equal(result.final_latent, best.best_latent)

    def test_final_graph_is_decoded_against_intent(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        result = run_uev(king_scene, *KING_TO_QUEEN, self.config, 4, vocab)
        intent = result.per_round[0].plan.graph_tar
        assert result.final_graph == decode_to_graph(result.final_latent, vocab, intent)

    def test_failed_corrective_reuses_intent(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        loop = UevLoop(vocab, self.config)
        result = loop.run(king_scene, *KING_TO_QUEEN, 0)
        intent = result.per_round[0].plan
        assert loop._next_plan(king_scene, "paint it gold", TaskType.PS_HUMAN, intent) is intent


class TestLoopMechanics:
    """Test class for determinism, events and configuration."""

    def test_same_seed_same_result(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        a = run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), 9, vocab)
        b = run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), 9, vocab)
        assert np.array_equal(a.final_latent, b.final_latent)
        assert a.to_json() == b.to_json()

    def test_events(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        events = EventLogMiddleware()
        result = run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(max_rounds=2), 0, vocab, RunMiddleware(events))
        kinds = [event["event"] for event in events.events]
        assert kinds[0] == "round_start"
        assert kinds[-1] == "round_end"
        assert kinds.count("round_start") == kinds.count("round_end") == result.rounds_used
        assert kinds.count("step") == sum(r.trajectory.num_steps + 1 for r in result.per_round)

        first_step = next(event for event in events.events if event["event"] == "step")
        assert first_step["k"] == 0
        assert first_step["decision"] == "continue"

    def test_event_log_file(self, king_scene: SceneGraph, vocab: ConceptVocabulary, tmp_path: Path) -> None:
        path = tmp_path / "run" / "events.jsonl"
        events = EventLogMiddleware(path)
        run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), 0, vocab, RunMiddleware(events))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == len(events.events)

    def test_disabled_event_log(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        events = EventLogMiddleware(enabled=False)
        run_uev(king_scene, *KING_TO_QUEEN, LoopConfig(), 0, vocab, RunMiddleware(events))
        assert events.events == []

    def test_invalid_config(self, vocab: ConceptVocabulary) -> None:
        with pytest.raises(ValueError, match="max_rounds"):
            UevLoop(vocab, LoopConfig(max_rounds=0))
        with pytest.raises(ValueError, match="patience_window"):
            UevLoop(vocab, LoopConfig(verifier=VerifierConfig(patience_window=0)))
