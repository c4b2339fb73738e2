"""
Tests for alpha schedules and the editing integrator.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from uniedit.lib.dse_engine import (
    HALT_COMPLETED,
    HALT_EARLY_STOP,
    TRAJECTORY_CSV_HEADER,
    AlphaScheduleError,
    DseConfig,
    StepRecord,
    dse_step,
    make_alpha_schedule,
    run_dse,
    start_dse,
)
from uniedit.lib.instruction_parser import build_edit_plan
from uniedit.lib.semantic_space import PromptEmbedding, embed_prompt
from uniedit.lib.task_types import TaskType
from uniedit.lib.velocity_model import ExactVelocityModel, GuidanceConfig, PromptTarget

if TYPE_CHECKING:
    from uniedit.lib.instruction_parser import EditPlan
    from uniedit.lib.scene_graph import SceneGraph
    from uniedit.lib.semantic_space import ConceptVocabulary, Latent


class RecordingModel(ExactVelocityModel):
    def __init__(self) -> None:
        super().__init__()
        self.times: list[float] = []

    def velocity(self, z: Latent, target: PromptTarget, scale: float) -> np.ndarray:
        self.times.append(z.time)
        return super().velocity(z, target, scale)


def king_plan(scene: SceneGraph, vocab: ConceptVocabulary) -> tuple[EditPlan, np.ndarray]:
    plan = build_edit_plan(scene, "make it a woman", TaskType.PS_HUMAN, vocab)
    return plan, 4.0 * embed_prompt(vocab, plan.caption_src).values


def scalar_affine_step(
    t: float,
    alpha: float,
    z0: float,
    z_src_t: float,
    src: tuple[float, float],
    tar: tuple[float, float],
    guidance: GuidanceConfig,
) -> tuple[float, float]:
    """
    Slope and intercept of one 1-D step as a map of z_edit, written out by hand.

    Every velocity is affine in its latent: v(z) = gain * z - (t / spread) * mean.
    """
    a = 1.0 - t

    def gain_and_pull(stddev: float) -> tuple[float, float]:
        spread = a * a * stddev**2 + t * t
        return (t - a * stddev**2) / spread, t / spread

    null_gain = (t - a) / (a * a + t * t)
    gain_src, pull_src = gain_and_pull(src[1])
    gain_tar, pull_tar = gain_and_pull(tar[1])
    guided_gain = null_gain + guidance.scale_src * (gain_src - null_gain)
    slope_dv = guided_gain + guidance.scale_tar * (gain_tar - gain_src)
    offset_dv = guidance.scale_tar * ((gain_tar - gain_src) * z_src_t - pull_tar * tar[0] + pull_src * src[0])
    return 1.0 - alpha * slope_dv, alpha * (slope_dv * z0 - offset_dv)


class TestAlphaSchedule:
    """Test class for make_alpha_schedule."""

    def test_uniform(self) -> None:
        schedule = make_alpha_schedule("uniform", 30)
        assert schedule.steps == 30
        assert sum(schedule.gains) == pytest.approx(1.0)
        assert schedule.gain(1) == schedule.gain(30) == pytest.approx(1 / 30)

    def test_decayed_thirds(self) -> None:
        schedule = make_alpha_schedule("decayed", 30)
        assert schedule.gain(1) == pytest.approx(1 / 30)
        assert schedule.gain(11) == pytest.approx(0.6 / 30)
        assert schedule.gain(30) == pytest.approx(0.3 / 30)
        assert sum(schedule.gains) == pytest.approx(1.9 / 3)

    def test_custom(self) -> None:
        assert make_alpha_schedule("custom", 3, [0.5, 0.2, 0.1]).gains == (0.5, 0.2, 0.1)

    @pytest.mark.parametrize(
        ("kind", "steps", "gains", "message"),
        [
            ("uniform", 0, None, "at least 1"),
            ("decayed", 31, None, "divisible by 3"),
            ("custom", 3, None, "explicit gains"),
            ("custom", 3, [0.1, 0.1], "Expected 3 gains"),
            ("custom", 2, [0.1, 1.5], "outside"),
            ("cosine", 3, None, "Unknown schedule kind"),
        ],
    )
    def test_invalid_schedules(self, kind: str, steps: int, gains: list[float] | None, message: str) -> None:
        with pytest.raises(AlphaScheduleError, match=message):
            make_alpha_schedule(kind, steps, gains)

    def test_config_defaults_to_decayed(self) -> None:
        assert DseConfig().alpha_schedule() == make_alpha_schedule("decayed", 30)
        with pytest.raises(AlphaScheduleError, match="but T is"):
            DseConfig(steps=6, schedule=make_alpha_schedule("uniform", 9)).alpha_schedule()


class TestRunDse:
    """Test class for run_dse and its records."""

    def test_first_record(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        trajectory = run_dse(z0, plan, DseConfig(), vocab)
        first = trajectory.steps[0]
        assert first.k == 0
        assert first.t == 1.0
        assert np.array_equal(first.z_edit, z0)
        assert not np.any(first.delta_v)
        # royal man against royal woman: cosine 1/2
        assert first.score == pytest.approx(7.5)
        assert trajectory.final.score > first.score

    def test_completed_run(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        trajectory = run_dse(z0, plan, DseConfig(steps=12), vocab)
        assert trajectory.halt_reason == HALT_COMPLETED
        assert trajectory.num_steps == 12
        assert [record.k for record in trajectory.steps] == list(range(13))
        assert [record.t for record in trajectory.steps] == pytest.approx([1.0 - k / 12 for k in range(13)])

    def test_target_branch_shares_source_noise(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        for record in run_dse(z0, plan, DseConfig(seed=4), vocab).steps:
            assert np.allclose(record.z_tar_t - record.z_src_t, record.z_edit - z0, rtol=0.0, atol=1e-9)

    def test_update_uses_gain_and_discrepancy(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        config = DseConfig(seed=1)
        trajectory = run_dse(z0, plan, config, vocab)
        schedule = config.alpha_schedule()
        for previous, record in zip(trajectory.steps, trajectory.steps[1:]):
            expected = previous.z_edit - schedule.gain(record.k) * record.delta_v
            assert np.allclose(record.z_edit, expected, rtol=0.0, atol=1e-12)

    def test_velocities_are_queried_at_previous_record(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        model = RecordingModel()
        run_dse(z0, plan, DseConfig(steps=9), vocab, model=model)
        # one source query and three target-branch queries per step, all at the same time
        assert len(model.times) == 4 * 9
        per_step = [model.times[i : i + 4] for i in range(0, len(model.times), 4)]
        assert all(len(set(times)) == 1 for times in per_step)
        assert [times[0] for times in per_step] == pytest.approx([1.0 - k / 9 for k in range(9)])
        assert min(model.times) > 0.0

    def test_identity_edit_stays_put(self, brown_dog: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan = build_edit_plan(brown_dog, "make the dog brown", TaskType.COLOR_ALTER, vocab)
        assert plan.caption_src == plan.caption_tar
        z0 = 4.0 * embed_prompt(vocab, plan.caption_src).values
        trajectory = run_dse(z0, plan, DseConfig(guidance=GuidanceConfig(2.0, 2.0)), vocab)
        for record in trajectory.steps:
            assert not np.any(record.delta_v)
            assert np.array_equal(record.z_edit, z0)

    def test_edit_stays_in_prompt_difference(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        """Noise and the shared rank content cancel, so the edit only moves along woman - man."""
        plan, z0 = king_plan(king_scene, vocab)
        direction = embed_prompt(vocab, plan.caption_tar).values - embed_prompt(vocab, plan.caption_src).values
        direction /= np.linalg.norm(direction)
        for record in run_dse(z0, plan, DseConfig(seed=7), vocab).steps:
            offset = record.z_edit - z0
            assert np.allclose(offset, np.dot(offset, direction) * direction, rtol=0.0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_full_run_keeps_rank_and_moves_gender(self, king_scene: SceneGraph, vocab: ConceptVocabulary, seed: int) -> None:
        """Over all 30 steps the rank projection holds while the woman projection rises."""
        plan, z0 = king_plan(king_scene, vocab)
        trajectory = run_dse(z0, plan, DseConfig(seed=seed), vocab)
        assert trajectory.num_steps == 30

        royal = np.array([np.dot(record.z_edit, vocab.embedding("royal")) for record in trajectory.steps])
        woman = np.array([np.dot(record.z_edit, vocab.embedding("woman")) for record in trajectory.steps])
        assert np.max(np.abs(royal - royal[0])) < 0.1 * abs(royal[0])
        assert np.count_nonzero(np.diff(woman) <= 0.0) <= 2
        assert woman[-1] > woman[0]

    def test_scalar_run_is_composed_affine_map(self) -> None:
        """A 1-D run matches the composition of the hand-written affine step maps."""
        steps, seed = 6, 3
        z0 = 0.3
        src = (1.5, 0.4)
        tar = (-0.8, 0.25)
        guidance = GuidanceConfig(2.0, 5.5)
        config = DseConfig(steps=steps, schedule=make_alpha_schedule("uniform", steps), guidance=guidance, seed=seed)

        state = start_dse(
            np.array([z0]),
            PromptTarget(np.array([src[0]]), src[1]),
            PromptTarget(np.array([tar[0]]), tar[1]),
            PromptEmbedding(np.array([1.0]), ()),
            config,
        )
        for k in range(1, steps + 1):
            dse_step(state, k)

        rng = np.random.default_rng(seed)
        slope, intercept = 1.0, 0.0
        t_prev = 1.0
        z_src_t = float(rng.standard_normal((1,))[0])
        for k in range(1, steps + 1):
            m, b = scalar_affine_step(t_prev, 1.0 / steps, z0, z_src_t, src, tar, guidance)
            slope, intercept = m * slope, m * intercept + b

            t_prev = 1.0 - k / steps
            z_src_t = (1.0 - t_prev) * z0 + t_prev * float(rng.standard_normal((1,))[0])
            record = state.records[k]
            assert record.z_edit[0] == pytest.approx(slope * z0 + intercept, abs=1e-9)
            assert record.z_src_t[0] == pytest.approx(z_src_t, abs=1e-12)

    def test_observer_halts_run(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        seen: list[int] = []

        def observer(record: StepRecord) -> bool:
            seen.append(record.k)
            return record.k == 5

        trajectory = run_dse(z0, plan, DseConfig(), vocab, observer)
        assert seen == [0, 1, 2, 3, 4, 5]
        assert trajectory.halt_reason == HALT_EARLY_STOP
        assert trajectory.num_steps == 5

    def test_observer_halts_at_first_record(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        trajectory = run_dse(z0, plan, DseConfig(), vocab, lambda record: True)
        assert trajectory.halt_reason == HALT_EARLY_STOP
        assert trajectory.num_steps == 0
        assert len(trajectory.steps) == 1

    def test_same_seed_same_trajectory(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        a = run_dse(z0, plan, DseConfig(seed=11), vocab)
        b = run_dse(z0, plan, DseConfig(seed=11), vocab)
        c = run_dse(z0, plan, DseConfig(seed=12), vocab)
        assert all(np.array_equal(x.z_edit, y.z_edit) for x, y in zip(a.steps, b.steps))
        assert not np.array_equal(a.final.z_src_t, c.final.z_src_t)

    def test_custom_score_prompt(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        source_prompt = embed_prompt(vocab, plan.caption_src)
        trajectory = run_dse(z0, plan, DseConfig(steps=3), vocab, score_prompt=source_prompt)
        assert trajectory.steps[0].score == pytest.approx(10.0)
        assert np.array_equal(trajectory.target, source_prompt.values)

    def test_shape_mismatch(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, _ = king_plan(king_scene, vocab)
        with pytest.raises(ValueError, match="expected"):
            run_dse(np.zeros(3), plan, DseConfig(), vocab)


class TestDseStep:
    """Test class for stepping a run by hand."""

    def test_steps_must_follow_records(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        prompt_src = embed_prompt(vocab, plan.caption_src)
        prompt_tar = embed_prompt(vocab, plan.caption_tar)
        state = start_dse(z0, PromptTarget.from_prompt(prompt_src), PromptTarget.from_prompt(prompt_tar), prompt_tar, DseConfig(steps=3))
        with pytest.raises(ValueError, match="outside 1..3"):
            dse_step(state, 0)
        with pytest.raises(ValueError, match="requested after 0 steps"):
            dse_step(state, 2)
        dse_step(state, 1)
        assert len(state.records) == 2
        assert np.array_equal(state.z_edit, state.records[1].z_edit)


class TestTrajectoryOutput:
    """Test class for trajectory serialization."""

    def test_csv_rows(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        trajectory = run_dse(z0, plan, DseConfig(steps=6), vocab)
        rows = trajectory.csv_rows()
        assert len(rows) == 7
        assert all(len(row) == len(TRAJECTORY_CSV_HEADER) for row in rows)
        assert [row[0] for row in rows] == list(range(7))
        assert rows[0][4] == "1.000000"

    def test_json(self, king_scene: SceneGraph, vocab: ConceptVocabulary) -> None:
        plan, z0 = king_plan(king_scene, vocab)
        data = run_dse(z0, plan, DseConfig(steps=3, seed=2), vocab).to_json()
        assert data["num_steps"] == 3
        assert data["halt_reason"] == HALT_COMPLETED
        assert data["config"] == DseConfig(steps=3, seed=2).to_json()
        assert isinstance(data["steps"], list)
        assert len(data["steps"]) == 4
