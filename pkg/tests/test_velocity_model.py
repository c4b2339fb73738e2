"""
Tests for the exact velocity field, guidance and flow integration.
"""

from __future__ import annotations

import numpy as np
import pytest

from tests.tools import mc_posterior_velocity
from uniedit.lib.semantic_space import Latent, PromptEmbedding
from uniedit.lib.velocity_model import (
    ExactVelocityModel,
    GuidanceConfig,
    NoiseSchedule,
    PromptTarget,
    VelocityQueryError,
    conditional_velocity,
    forward_diffuse,
    guided_velocity,
    integrate_flow,
)


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(actual - expected) / max(float(np.linalg.norm(expected)), 0.5))


class TestForwardDiffuse:
    """Test class for forward_diffuse."""

    def test_interpolates_data_and_noise(self) -> None:
        z0 = np.array([2.0, 0.0])
        eps = np.array([0.0, 1.0])
        noised = forward_diffuse(z0, 0.25, eps)
        assert noised.time == 0.25
        assert np.allclose(noised.values, [1.5, 0.25])
        assert np.array_equal(forward_diffuse(z0, 0.0, eps).values, z0)
        assert np.array_equal(forward_diffuse(z0, 1.0, eps).values, eps)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ValueError, match="Dimension mismatch"):
            forward_diffuse(np.zeros(2), 0.5, np.zeros(3))

    def test_unsupported_schedule(self) -> None:
        with pytest.raises(ValueError, match="Unsupported noise schedule"):
            forward_diffuse(np.zeros(2), 0.5, np.zeros(2), NoiseSchedule("cosine"))


class TestConditionalVelocity:
    """Test class for conditional_velocity."""

    def test_matches_monte_carlo_posterior(self) -> None:
        rng = np.random.default_rng(0)
        mean = np.array([2.0, 0.0])
        z = np.array([1.0, 0.3])
        exact = conditional_velocity(Latent(z, 0.7), PromptTarget(mean, 0.25))
        estimate = mc_posterior_velocity(rng, z, 0.7, mean, 0.25, samples=400_000)
        assert relative_error(exact, estimate) < 0.02

    def test_random_queries_match_monte_carlo(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(5):
            mean = 2.0 * rng.standard_normal(2)
            stddev = float(rng.uniform(0.25, 0.5))
            t = float(rng.uniform(0.6, 1.0))
            z = (1.0 - t) * mean + t * rng.standard_normal(2)
            exact = conditional_velocity(Latent(z, t), PromptTarget(mean, stddev))
            estimate = mc_posterior_velocity(rng, z, t, mean, stddev, samples=400_000)
            assert relative_error(exact, estimate) < 0.02

    def test_closed_form_example(self) -> None:
        """a = 0.5, D = 0.3125, gain = 1.2 and z - a mu vanishes, so v = -mu."""
        v = conditional_velocity(Latent(np.array([1.0, 0.0]), 0.5), PromptTarget(np.array([2.0, 0.0]), 0.5))
        assert np.allclose(v, [-2.0, 0.0])

    def test_null_target_at_midpoint_is_zero(self) -> None:
        z = np.array([0.3, -1.2, 0.7])
        assert np.allclose(conditional_velocity(Latent(z, 0.5), PromptTarget.null(3)), 0.0)

    def test_single_component_is_affine_in_z(self) -> None:
        """v(z) = gain * z - (t / spread) * mean, so differences scale with the gain and mixtures of latents carry over."""
        rng = np.random.default_rng(6)
        for _ in range(10):
            t = float(rng.uniform(0.05, 1.0))
            stddev = float(rng.uniform(0.1, 1.0))
            target = PromptTarget(2.0 * rng.standard_normal(4), stddev)
            z1, z2 = rng.standard_normal((2, 4))
            w = float(rng.uniform(-2.0, 2.0))

            a = 1.0 - t
            gain = (t - a * stddev**2) / (a * a * stddev**2 + t * t)
            v1 = conditional_velocity(Latent(z1, t), target)
            v2 = conditional_velocity(Latent(z2, t), target)
            assert np.allclose(v1 - v2, gain * (z1 - z2), atol=1e-9)
            mixed = conditional_velocity(Latent(w * z1 + (1.0 - w) * z2, t), target)
            assert np.allclose(mixed, w * v1 + (1.0 - w) * v2, atol=1e-9)

            guided = guided_velocity(Latent(z1, t), target, 5.5) - guided_velocity(Latent(z2, t), target, 5.5)
            null_gain = (t - a) / (a * a + t * t)
            assert np.allclose(guided, (null_gain + 5.5 * (gain - null_gain)) * (z1 - z2), atol=1e-9)

    def test_batch_matches_rows(self) -> None:
        rng = np.random.default_rng(4)
        target = PromptTarget(np.array([1.0, -1.0, 0.5]), 0.3)
        batch = rng.standard_normal((6, 3))
        together = conditional_velocity(Latent(batch, 0.4), target)
        assert together.shape == (6, 3)
        for row, v in zip(batch, together):
            assert np.allclose(v, conditional_velocity(Latent(row, 0.4), target))

    def test_identical_mixture_components(self) -> None:
        mean = np.array([1.5, 0.5])
        single = PromptTarget(mean, 0.25)
        mixture = PromptTarget(mean, 0.25, ((0.3, mean), (0.7, mean.copy())))
        z = Latent(np.array([0.2, -0.4]), 0.6)
        assert np.allclose(conditional_velocity(z, mixture), conditional_velocity(z, single), atol=1e-12)

    def test_mixture_follows_nearest_component(self) -> None:
        near = np.array([5.0, 0.0])
        far = np.array([-5.0, 0.0])
        mixture = PromptTarget(np.zeros(2), 0.25, ((0.5, near), (0.5, far)))
        z = Latent(0.7 * near + np.array([0.0, 0.1]), 0.3)
        assert np.allclose(conditional_velocity(z, mixture), conditional_velocity(z, PromptTarget(near, 0.25)), atol=1e-9)

    def test_mixture_from_prompts(self) -> None:
        prompts = [PromptEmbedding(np.array([1.0, 0.0]), ("a",)), PromptEmbedding(np.array([0.0, 1.0]), ("b",))]
        target = PromptTarget.from_prompts(prompts, amplitude=2.0)
        assert target.mixture is not None
        assert np.allclose(target.mean, [1.0, 1.0])
        with pytest.raises(ValueError, match="One weight per prompt"):
            PromptTarget.from_prompts(prompts, weights=[1.0])

    def test_invalid_targets(self) -> None:
        with pytest.raises(ValueError, match="stddev must be positive"):
            PromptTarget(np.zeros(2), 0.0)
        with pytest.raises(ValueError, match="sum to 1"):
            PromptTarget(np.zeros(2), 0.25, ((0.5, np.zeros(2)), (0.2, np.ones(2))))

    def test_time_outside_query_range(self) -> None:
        target = PromptTarget(np.zeros(2), 0.25)
        with pytest.raises(VelocityQueryError):
            conditional_velocity(Latent(np.zeros(2), 0.0), target)
        with pytest.raises(VelocityQueryError):
            conditional_velocity(Latent(np.zeros(2), 1.5), target)

    def test_dimension_mismatch(self) -> None:
        with pytest.raises(ValueError, match="Dimension mismatch"):
            conditional_velocity(Latent(np.zeros(3), 0.5), PromptTarget(np.zeros(2)))


class TestGuidedVelocity:
    """Test class for classifier-free guidance."""

    target = PromptTarget(np.array([2.0, 0.0]), 0.5)
    z = Latent(np.array([1.0, 0.0]), 0.5)

    def test_scale_two_by_hand(self) -> None:
        """The null velocity vanishes at t = 0.5, so guidance doubles the conditional velocity."""
        assert np.allclose(guided_velocity(self.z, self.target, 2.0), [-4.0, 0.0])

    def test_scale_zero_and_one(self) -> None:
        assert np.allclose(guided_velocity(self.z, self.target, 0.0), conditional_velocity(self.z, PromptTarget.null(2)))
        assert np.allclose(guided_velocity(self.z, self.target, 1.0), conditional_velocity(self.z, self.target))

    def test_prompt_embedding_uses_default_target(self) -> None:
        prompt = PromptEmbedding(np.array([1.0, 0.0]), ("dog",))
        z = Latent(np.array([0.5, 0.5]), 0.8)
        expected = guided_velocity(z, PromptTarget.from_prompt(prompt), 5.5)
        assert np.allclose(guided_velocity(z, prompt, 5.5), expected)
        assert np.allclose(ExactVelocityModel().velocity(z, PromptTarget.from_prompt(prompt), 5.5), expected)

    def test_negative_scale_is_rejected(self) -> None:
        with pytest.raises(ValueError, match="non-negative"):
            GuidanceConfig(-1.0, 2.0).validate()


class TestRelativeVelocity:
    """Test class for guidance applied to a prompt difference."""

    model = ExactVelocityModel()
    base = PromptTarget(np.array([2.0, 2.0, 0.0]), 0.25)
    target = PromptTarget(np.array([2.0, 0.0, 2.0]), 0.25)

    def test_same_prompt_is_plain_guidance(self) -> None:
        z = Latent(np.array([0.4, -0.2, 1.1]), 0.7)
        assert np.allclose(self.model.relative_velocity(z, self.base, self.base, 2.0, 5.5), guided_velocity(z, self.base, 2.0))

    def test_shared_content_is_not_amplified(self) -> None:
        """Equal spreads: the difference to plain base guidance is scale * (t / spread) * (mu_base - mu_target)."""
        t = 0.6
        a = 1.0 - t
        z = Latent(np.array([0.4, -0.2, 1.1]), t)
        relative = self.model.relative_velocity(z, self.target, self.base, 2.0, 5.5)
        pull = t / (a * a * 0.25**2 + t * t)
        expected = guided_velocity(z, self.base, 2.0) + 5.5 * pull * (self.base.mean - self.target.mean)
        assert np.allclose(relative, expected)
        # first axis is shared by both prompts
        assert relative[0] == pytest.approx(guided_velocity(z, self.base, 2.0)[0])



class TestIntegrateFlow:
    """Test class for integrate_flow."""

    def test_samples_match_target_distribution(self) -> None:
        """Euler keeps the mean path exact; the map from noise to sample is affine with slope close to stddev."""
        rng = np.random.default_rng(9)
        mean = np.array([2.0, -1.0])
        stddev = 0.25
        noise = rng.standard_normal((2000, 2))
        samples = integrate_flow(noise, PromptTarget(mean, stddev), steps=200)

        standard_error = stddev / np.sqrt(len(noise))
        assert np.all(np.abs(samples.mean(axis=0) - mean) < 4.0 * standard_error)

        variance_ratio = samples.var(axis=0) / noise.var(axis=0)
        assert np.allclose(variance_ratio, stddev**2, rtol=0.1)

    def test_rejects_zero_steps(self) -> None:
        with pytest.raises(ValueError, match="at least 1"):
            integrate_flow(np.zeros(2), PromptTarget(np.zeros(2)), steps=0)
