"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, NamedTuple, Optional

import numpy as np

from .semantic_space import Latent, cosine, embed_prompt, similarity_score
from .utilities import vector_to_json
from .velocity_model import (
    DEFAULT_AMPLITUDE,
    DEFAULT_STDDEV,
    ExactVelocityModel,
    GuidanceConfig,
    NoiseSchedule,
    PromptTarget,
    forward_diffuse,
)

if TYPE_CHECKING:
    from collections.abc import Sequence
    from .instruction_parser import EditPlan
    from .semantic_space import ConceptVocabulary, PromptEmbedding
    from .utilities import JSON_TYPE
    from .velocity_model import VelocityModel


DEFAULT_STEPS = 30
DEFAULT_SCHEDULE = "decayed"
SCHEDULE_KINDS = ("uniform", "decayed", "custom")

# Gain multipliers of the three thirds of a decayed schedule.
DECAY_FACTORS = (1.0, 0.6, 0.3)

HALT_COMPLETED = "completed"
HALT_EARLY_STOP = "early_stop"

TRAJECTORY_CSV_HEADER = ("k", "t", "score", "delta_v_norm", "cos_to_source", "cos_to_target")

logger = logging.getLogger(__name__)


class AlphaScheduleError(ValueError):
    pass


class AlphaSchedule(NamedTuple):
    kind: str
    gains: tuple[float, ...]

    @property
    def steps(self) -> int:
        return len(self.gains)

    def gain(self, k: int) -> float:
        """Gain of step k, 1-based."""
        return self.gains[k - 1]


def make_alpha_schedule(kind: str, steps: int, gains: Sequence[float] | None = None) -> AlphaSchedule:
    """
    Build the per-step editing gains.

    uniform: every gain is 1/T. decayed: the thirds of the run get 1/T, 0.6/T
    and 0.3/T (T must be divisible by 3). custom: the given gains, one per step.
    """
    if steps < 1:
        raise AlphaScheduleError(f"T must be at least 1, got {steps}")

    if kind == "uniform":
        values = [1.0 / steps] * steps
    elif kind == "decayed":
        if steps % 3:
            raise AlphaScheduleError(f"A decayed schedule needs T divisible by 3, got {steps}")
        third = steps // 3
        values = [factor / steps for factor in DECAY_FACTORS for _ in range(third)]
    elif kind == "custom":
        if gains is None:
            raise AlphaScheduleError("A custom schedule needs explicit gains")
        values = [float(g) for g in gains]
        if len(values) != steps:
            raise AlphaScheduleError(f"Expected {steps} gains, got {len(values)}")
    else:
        raise AlphaScheduleError(f"Unknown schedule kind '{kind}' (expected one of: {', '.join(SCHEDULE_KINDS)})")

    for k, value in enumerate(values, start=1):
        if not 0.0 <= value <= 1.0:
            raise AlphaScheduleError(f"Gain of step {k} is {value}, outside [0, 1]")
    return AlphaSchedule(kind, tuple(values))


class DseConfig(NamedTuple):
    steps: int = DEFAULT_STEPS
    schedule: Optional[AlphaSchedule] = None
    guidance: GuidanceConfig = GuidanceConfig()
    seed: int = 0
    noise: NoiseSchedule = NoiseSchedule()
    amplitude: float = DEFAULT_AMPLITUDE
    stddev: float = DEFAULT_STDDEV

    def alpha_schedule(self) -> AlphaSchedule:
        """The configured gains, or the decayed default for T steps."""
        if self.steps < 1:
            raise AlphaScheduleError(f"T must be at least 1, got {self.steps}")
        schedule = self.schedule or make_alpha_schedule(DEFAULT_SCHEDULE, self.steps)
        if schedule.steps != self.steps:
            raise AlphaScheduleError(f"Schedule has {schedule.steps} gains but T is {self.steps}")
        return schedule

    def to_json(self) -> dict[str, JSON_TYPE]:
        schedule = self.alpha_schedule()
        return {
            "steps": self.steps,
            "schedule": schedule.kind,
            "gains": list(schedule.gains),
            "scale_src": self.guidance.scale_src,
            "scale_tar": self.guidance.scale_tar,
            "seed": self.seed,
            "noise_schedule": self.noise.kind,
            "amplitude": self.amplitude,
            "stddev": self.stddev,
        }


class StepRecord(NamedTuple):
    k: int
    t: float
    z_src_t: np.ndarray
    z_tar_t: np.ndarray
    z_edit: np.ndarray
    delta_v: np.ndarray
    score: float

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "k": self.k,
            "t": self.t,
            "score": self.score,
            "z_src_t": vector_to_json(self.z_src_t),
            "z_tar_t": vector_to_json(self.z_tar_t),
            "z_edit": vector_to_json(self.z_edit),
            "delta_v": vector_to_json(self.delta_v),
        }


StepObserver = Callable[[StepRecord], bool]
"""Called with every record; returning True halts the run."""


class Trajectory(NamedTuple):
    steps: tuple[StepRecord, ...]
    seed: int
    config: DseConfig
    halt_reason: str
    z_src0: np.ndarray
    target: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.steps) - 1

    @property
    def final(self) -> StepRecord:
        return self.steps[-1]

    @property
    def scores(self) -> list[float]:
        return [record.score for record in self.steps]

    def csv_rows(self) -> list[tuple[JSON_TYPE, ...]]:
        rows: list[tuple[JSON_TYPE, ...]] = []
        for record in self.steps:
            rows.append((
                record.k,
                f"{record.t:.6f}",
                f"{record.score:.6f}",
                f"{float(np.linalg.norm(record.delta_v)):.6e}",
                f"{cosine(record.z_edit, self.z_src0):.6f}",
                f"{cosine(record.z_edit, self.target):.6f}",
            ))
        return rows

    def to_json(self) -> dict[str, JSON_TYPE]:
        return {
            "seed": self.seed,
            "config": self.config.to_json(),
            "halt_reason": self.halt_reason,
            "num_steps": self.num_steps,
            "steps": [record.to_json() for record in self.steps],
        }


@dataclass
class DseState:
    """Mutable integrator state of one run."""

    z_src0: np.ndarray
    src_target: PromptTarget
    tar_target: PromptTarget
    score_prompt: PromptEmbedding
    config: DseConfig
    schedule: AlphaSchedule
    rng: np.random.Generator
    model: VelocityModel
    records: list[StepRecord] = field(default_factory=list)

    @property
    def z_edit(self) -> np.ndarray:
        return self.records[-1].z_edit if self.records else self.z_src0

    def _record(self, k: int, z_edit: np.ndarray, delta_v: np.ndarray) -> StepRecord:
        t = 1.0 - k / self.config.steps
        eps = self.rng.standard_normal(self.z_src0.shape)
        z_src_t = forward_diffuse(self.z_src0, t, eps, self.config.noise).values
        # Target branch shares the source noise: Z_tar(t) = z_edit + Z_src(t) - Z_src(0).
        z_tar_t = z_src_t + (z_edit - self.z_src0)
        record = StepRecord(k, t, z_src_t, z_tar_t, z_edit, delta_v, similarity_score(z_edit, self.score_prompt))
        self.records.append(record)
        return record


def start_dse(
    z_src0: np.ndarray,
    src_target: PromptTarget,
    tar_target: PromptTarget,
    score_prompt: PromptEmbedding,
    config: DseConfig,
    model: VelocityModel | None = None,
) -> DseState:
    """Set up a run from explicit conditioning targets and record step 0 (t = 1, z_edit = Z_src(0))."""
    z_src0 = np.asarray(z_src0, dtype=np.float64)
    if z_src0.shape != np.shape(score_prompt.values):
        raise ValueError(f"Latent has shape {z_src0.shape}, expected {np.shape(score_prompt.values)}")

    state = DseState(
        z_src0=z_src0,
        src_target=src_target,
        tar_target=tar_target,
        score_prompt=score_prompt,
        config=config,
        schedule=config.alpha_schedule(),
        rng=np.random.default_rng(config.seed),
        model=model or ExactVelocityModel(config.noise),
    )
    state._record(0, z_src0.copy(), np.zeros_like(z_src0))
    return state


def init_dse_state(
    z_src0: np.ndarray,
    plan: EditPlan,
    config: DseConfig,
    vocab: ConceptVocabulary,
    score_prompt: PromptEmbedding | None = None,
    model: VelocityModel | None = None,
) -> DseState:
    """Set up a run conditioned on the plan's source and target captions."""
    z_src0 = np.asarray(z_src0, dtype=np.float64)
    if z_src0.shape != (vocab.dimension,):
        raise ValueError(f"Latent has shape {z_src0.shape}, expected ({vocab.dimension},)")

    prompt_src = embed_prompt(vocab, plan.caption_src)
    prompt_tar = embed_prompt(vocab, plan.caption_tar)
    return start_dse(
        z_src0,
        PromptTarget.from_prompt(prompt_src, config.amplitude, config.stddev),
        PromptTarget.from_prompt(prompt_tar, config.amplitude, config.stddev),
        score_prompt if score_prompt is not None else prompt_tar,
        config,
        model,
    )


def dse_step(state: DseState, k: int) -> DseState:
    """
    Advance the run by step k.

    Velocities of both branches are taken at the previous record's time, so the
    update is explicit and t = 0 is never queried. The source branch is guided
    with scale_src; the target branch is guided relative to the source prompt,
    so only the prompt difference is amplified by scale_tar. Gains already
    contain the 1/T time increment; the integral runs from u = 1 down to t,
    hence the minus sign.
    """
    if not 1 <= k <= state.config.steps:
        raise ValueError(f"Step {k} is outside 1..{state.config.steps}")
    if len(state.records) != k:
        raise ValueError(f"Step {k} requested after {len(state.records) - 1} steps")

    previous = state.records[-1]
    guidance = state.config.guidance
    v_src = state.model.velocity(Latent(previous.z_src_t, previous.t), state.src_target, guidance.scale_src)
    v_tar = state.model.relative_velocity(
        Latent(previous.z_tar_t, previous.t), state.tar_target, state.src_target, guidance.scale_src, guidance.scale_tar
    )
    delta_v = v_tar - v_src

    z_edit = previous.z_edit - state.schedule.gain(k) * delta_v
    record = state._record(k, z_edit, delta_v)
    logger.debug(f"Step {k}: t={record.t:.4f} score={record.score:.4f} |dv|={float(np.linalg.norm(delta_v)):.4e}")
    return state


def run_dse(
    z_src0: np.ndarray,
    plan: EditPlan,
    config: DseConfig,
    vocab: ConceptVocabulary,
    observer: StepObserver | None = None,
    score_prompt: PromptEmbedding | None = None,
    model: VelocityModel | None = None,
) -> Trajectory:
    """
    Integrate the edit from Z_src(0) over T steps.

    The observer sees every record, step 0 included. When it asks to halt after
    record k, the trajectory ends there with k steps and halt reason "early_stop".
    Scores are measured against score_prompt, the plan's target caption by default.
    """
    state = init_dse_state(z_src0, plan, config, vocab, score_prompt, model)
    halt_reason = HALT_COMPLETED

    if observer is not None and observer(state.records[0]):
        halt_reason = HALT_EARLY_STOP
    else:
        for k in range(1, config.steps + 1):
            dse_step(state, k)
            if observer is not None and observer(state.records[-1]):
                halt_reason = HALT_EARLY_STOP
                break

    logger.debug(f"DSE run finished after {len(state.records) - 1} of {config.steps} steps ({halt_reason})")
    return Trajectory(
        steps=tuple(state.records),
        seed=config.seed,
        config=config,
        halt_reason=halt_reason,
        z_src0=state.z_src0,
        target=state.score_prompt.values,
    )
