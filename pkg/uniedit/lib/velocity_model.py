"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.

Exact velocity field of a rectified-flow model whose data distribution is a
Gaussian (or Gaussian mixture) centred on a prompt embedding.

Sign convention: v(z, t) = E[eps - X0 | Z(t) = z] is dZ/dt, pointing from data
toward noise. Denoising integrates with negative time increments, z <- z - dt * v.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional, Union

import numpy as np
from scipy.special import logsumexp

from .semantic_space import Latent, PromptEmbedding

if TYPE_CHECKING:
    from collections.abc import Sequence


DEFAULT_AMPLITUDE = 4.0
DEFAULT_STDDEV = 0.25
DEFAULT_SCALE_SRC = 2.0
DEFAULT_SCALE_TAR = 5.5


class VelocityQueryError(ValueError):
    pass


class NoiseSchedule(NamedTuple):
    """Interpolation schedule lambda(t) of the forward process; 0 at data, 1 at noise."""

    kind: str = "linear"

    def lam(self, t: float) -> float:
        if self.kind != "linear":
            raise ValueError(f"Unsupported noise schedule '{self.kind}'")
        if not 0.0 <= t <= 1.0:
            raise VelocityQueryError(f"Time {t} is outside [0, 1]")
        return float(t)


@dataclass(frozen=True)
class PromptTarget:
    """Data distribution a prompt conditions on: N(mean, stddev^2 I), or a weighted mixture of such components."""

    mean: np.ndarray
    stddev: float = DEFAULT_STDDEV
    mixture: Optional[tuple[tuple[float, np.ndarray], ...]] = field(default=None)

    def __post_init__(self) -> None:
        if not self.stddev > 0.0:
            raise ValueError(f"stddev must be positive, got {self.stddev}")
        if self.mixture is not None:
            weights = np.array([w for w, _ in self.mixture], dtype=np.float64)
            if len(weights) == 0 or np.any(weights <= 0.0):
                raise ValueError("Mixture weights must be positive")
            if not np.isclose(weights.sum(), 1.0, rtol=0.0, atol=1e-9):
                raise ValueError(f"Mixture weights must sum to 1, got {weights.sum()}")
            if any(np.shape(m) != np.shape(self.mean) for _, m in self.mixture):
                raise ValueError("Mixture component means must share the target's dimension")

    @property
    def dimension(self) -> int:
        return int(np.shape(self.mean)[-1])

    def components(self) -> tuple[tuple[float, np.ndarray], ...]:
        if self.mixture is None:
            return ((1.0, np.asarray(self.mean, dtype=np.float64)),)
        return self.mixture

    @classmethod
    def null(cls, dimension: int) -> PromptTarget:
        """Standard normal target of the empty prompt; equals the noise distribution."""
        return cls(np.zeros(dimension), 1.0)

    @classmethod
    def from_prompt(cls, prompt: PromptEmbedding, amplitude: float = DEFAULT_AMPLITUDE, stddev: float = DEFAULT_STDDEV) -> PromptTarget:
        if prompt.is_null:
            return cls.null(len(prompt.values))
        return cls(amplitude * np.asarray(prompt.values, dtype=np.float64), stddev)

    @classmethod
    def from_prompts(
        cls,
        prompts: Sequence[PromptEmbedding],
        weights: Sequence[float] | None = None,
        amplitude: float = DEFAULT_AMPLITUDE,
        stddev: float = DEFAULT_STDDEV,
    ) -> PromptTarget:
        """Mixture target for a multi-scene prompt, equal weights unless given."""
        if not prompts:
            raise ValueError("At least one prompt is required")
        if weights is None:
            weights = [1.0 / len(prompts)] * len(prompts)
        if len(weights) != len(prompts):
            raise ValueError("One weight per prompt is required")
        means = [amplitude * np.asarray(p.values, dtype=np.float64) for p in prompts]
        mixture = tuple((float(w), m) for w, m in zip(weights, means))
        overall = np.sum([w * m for w, m in mixture], axis=0)
        return cls(overall, stddev, mixture)


class GuidanceConfig(NamedTuple):
    scale_src: float = DEFAULT_SCALE_SRC
    scale_tar: float = DEFAULT_SCALE_TAR

    def validate(self) -> GuidanceConfig:
        if self.scale_src < 0.0 or self.scale_tar < 0.0:
            raise ValueError(f"Guidance scales must be non-negative, got {tuple(self)}")
        return self


def forward_diffuse(z0: np.ndarray, t: float, eps: np.ndarray, sched: NoiseSchedule | None = None) -> Latent:
    """Noise a clean latent: (1 - lambda(t)) * z0 + lambda(t) * eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"Dimension mismatch: {z0.shape} vs {eps.shape}")
    lam = (sched or NoiseSchedule()).lam(t)
    return Latent((1.0 - lam) * z0 + lam * eps, t)


def _check_query(z: Latent, target: PromptTarget) -> tuple[np.ndarray, float]:
    t = float(z.time)
    if not 0.0 < t <= 1.0:
        raise VelocityQueryError(f"Velocity queried at t={t}; queries must lie in (0, 1]")
    values = np.asarray(z.values, dtype=np.float64)
    if values.shape[-1] != target.dimension:
        raise ValueError(f"Dimension mismatch: latent {values.shape[-1]} vs target {target.dimension}")
    return values, t


def conditional_velocity(z: Latent, target: PromptTarget, sched: NoiseSchedule | None = None) -> np.ndarray:
    """
    Exact E[eps - X0 | Z(t) = z] for data ~ target and noise ~ N(0, I).

    For one component with mean mu and stddev s, with a = 1 - lambda(t) and
    D = a^2 s^2 + lambda(t)^2:  v = ((lambda - a s^2) / D) (z - a mu) - mu.
    Mixture components are weighted by their posterior responsibilities.
    z.values may hold a batch of latents along leading axes.
    """
    values, t = _check_query(z, target)
    lam = (sched or NoiseSchedule()).lam(t)
    a = 1.0 - lam
    var = target.stddev**2
    spread = a * a * var + lam * lam
    gain = (lam - a * var) / spread

    components = target.components()
    if len(components) == 1:
        mu = components[0][1]
        return gain * (values - a * mu) - mu

    log_weights = []
    velocities = []
    for weight, mu in components:
        residual = values - a * mu
        log_weights.append(np.log(weight) - 0.5 * np.sum(residual * residual, axis=-1) / spread)
        velocities.append(gain * residual - mu)

    # All components share D, so the normalising constants cancel.
    log_resp = np.stack(log_weights, axis=-1)
    resp = np.exp(log_resp - logsumexp(log_resp, axis=-1, keepdims=True))
    return np.einsum("...j,j...d->...d", resp, np.stack(velocities, axis=0))


def guided_velocity(
    z: Latent,
    prompt: Union[PromptEmbedding, PromptTarget],
    scale: float,
    sched: NoiseSchedule | None = None,
) -> np.ndarray:
    """Classifier-free guidance: v_null + scale * (v_prompt - v_null)."""
    target = prompt if isinstance(prompt, PromptTarget) else PromptTarget.from_prompt(prompt)
    v_cond = conditional_velocity(z, target, sched)
    v_uncond = conditional_velocity(z, PromptTarget.null(target.dimension), sched)
    return v_uncond + scale * (v_cond - v_uncond)


class VelocityModel(ABC):
    """Provider of guided velocities for the editing integrator."""

    @abstractmethod
    def velocity(self, z: Latent, target: PromptTarget, scale: float) -> np.ndarray:
        pass

    def relative_velocity(self, z: Latent, target: PromptTarget, base: PromptTarget, scale_base: float, scale: float) -> np.ndarray:
        """
        Guidance applied to a prompt difference: base guided with scale_base, plus
        scale times the conditional difference target - base.

        Content shared by both prompts enters only through the base term.
        """
        v_base = self.velocity(z, base, scale_base)
        return v_base + scale * (self.velocity(z, target, 1.0) - self.velocity(z, base, 1.0))


class ExactVelocityModel(VelocityModel):
    def __init__(self, schedule: NoiseSchedule | None = None) -> None:
        self.schedule = schedule or NoiseSchedule()

    def velocity(self, z: Latent, target: PromptTarget, scale: float) -> np.ndarray:
        return guided_velocity(z, target, scale, self.schedule)


def integrate_flow(
    noise: np.ndarray,
    target: PromptTarget,
    steps: int,
    scale: float = 1.0,
    model: VelocityModel | None = None,
) -> np.ndarray:
    """Euler-integrate noise at t=1 down to t=0; velocities are taken at the left end of each step."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    model = model or ExactVelocityModel()
    z = np.array(noise, dtype=np.float64)
    dt = 1.0 / steps
    for k in range(steps):
        z = z - dt * model.velocity(Latent(z, 1.0 - k * dt), target, scale)
    return z
