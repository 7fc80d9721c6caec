"""Tests for particle simulation, time grids and initial laws."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from sympde.errors import DomainError, NumericError, StructuralError
from sympde.particles import (
    Coefficients,
    MixtureLaw,
    TimeGrid,
    check_coefficient_symmetry,
    dirac_sampler,
    draw_mixture,
    dump_paths,
    empirical_moments,
    euler_step,
    gaussian_sampler,
    randomized_initial_law,
    sample_mixture,
    simulate_batch,
)
from sympde.schemas import MixtureBounds


def mean_reverting() -> Coefficients:
    """b_i = mean(X) - x_i, sigma = 0.3."""

    def drift(t, X):
        return X.mean(axis=1, keepdims=True) - X

    def diffusion(t, X):
        d = X.shape[-1]
        return np.broadcast_to(0.3 * np.eye(d), X.shape + (d,))

    return Coefficients(drift=drift, diffusion=diffusion)


class TestTimeGrid:
    """Knot vectors."""

    def test_uniform(self):
        """A uniform grid has equal steps and the requested ends."""
        grid = TimeGrid.uniform(1.0, 4, start=0.2)
        np.testing.assert_allclose(grid.dt, 0.2)
        assert grid.start == 0.2 and grid.horizon == 1.0 and grid.n_steps == 4

    def test_prefix_suffix_and_nearest(self):
        """Sub-grids keep the original knots."""
        grid = TimeGrid.uniform(1.0, 10)
        assert grid.prefix(3).horizon == pytest.approx(0.3)
        assert grid.suffix(7).start == pytest.approx(0.7)
        assert grid.nearest_step(0.62) == 6

    def test_rejects_non_increasing_knots(self):
        """Knots must increase strictly."""
        with pytest.raises(StructuralError):
            TimeGrid(np.array([0.0, 0.5, 0.5]))


class TestSimulation:
    """Euler-Maruyama recursion."""

    def test_euler_step_formula(self):
        """One step adds drift times dt and the noise."""
        coeffs = Coefficients.constant(0.5, 2.0)
        X = np.zeros((1, 3, 1))
        dW = np.full((1, 3, 1), 0.1)
        np.testing.assert_allclose(euler_step(coeffs, 0.0, 0.2, X, None, dW), 0.1 + 0.2)

    def test_shapes_and_start(self):
        """Paths start at the sampled state and carry matching increments."""
        grid = TimeGrid.uniform(1.0, 5)
        X0 = np.linspace(-1, 1, 4)[:, None]
        rng = np.random.default_rng(0)
        paths = simulate_batch(mean_reverting(), grid, dirac_sampler(X0), 8, rng)
        assert paths.states.shape == (8, 6, 4, 1)
        assert paths.dW.shape == (8, 5, 4, 1)
        np.testing.assert_array_equal(paths.states[:, 0], np.broadcast_to(X0, (8, 4, 1)))

    def test_same_generator_state_same_paths(self):
        """Simulation is a pure function of the generator."""
        grid = TimeGrid.uniform(1.0, 3)
        sampler = gaussian_sampler(5, 1, 0.0, 1.0)
        a = simulate_batch(mean_reverting(), grid, sampler, 4, np.random.default_rng(3))
        b = simulate_batch(mean_reverting(), grid, sampler, 4, np.random.default_rng(3))
        np.testing.assert_array_equal(a.states, b.states)

    def test_mean_reverting_drift_preserves_the_mean_in_expectation(self):
        """Interaction drift sums to zero, so the particle mean is a martingale."""
        grid = TimeGrid.uniform(1.0, 10)
        X0 = np.linspace(0.0, 2.0, 6)[:, None]
        rng = np.random.default_rng(1)
        paths = simulate_batch(mean_reverting(), grid, dirac_sampler(X0), 4000, rng)
        final_mean = paths.states[:, -1].mean()
        assert final_mean == pytest.approx(1.0, abs=0.02)

    def test_common_noise_requires_increments(self):
        """A common loading needs common increments."""
        coeffs = Coefficients(
            drift=lambda t, X: np.zeros(X.shape),
            diffusion=lambda t, X: np.zeros(X.shape + (1,)),
            common=lambda t, X: np.ones(X.shape + (1,)),
            common_dim=1,
        )
        with pytest.raises(StructuralError):
            euler_step(coeffs, 0.0, 0.1, np.zeros((2, 3, 1)), None, np.zeros((2, 3, 1)))

    def test_common_noise_moves_particles_together(self):
        """With only common noise every particle receives the same increment."""
        coeffs = Coefficients(
            drift=lambda t, X: np.zeros(X.shape),
            diffusion=lambda t, X: np.zeros(X.shape + (1,)),
            common=lambda t, X: np.ones(X.shape + (1,)),
            common_dim=1,
        )
        grid = TimeGrid.uniform(1.0, 4)
        sampler = dirac_sampler(np.zeros((3, 1)))
        paths = simulate_batch(coeffs, grid, sampler, 5, np.random.default_rng(2))
        final = paths.states[:, -1, :, 0]
        np.testing.assert_allclose(final - final[:, :1], 0.0)
        np.testing.assert_allclose(final[:, 0], paths.dW0.sum(axis=1)[:, 0])

    def test_explosion_raises_numeric_error(self):
        """Non-finite states name the sample and the step."""
        coeffs = Coefficients.constant(np.inf, 0.0)
        with pytest.raises(NumericError) as info:
            simulate_batch(
                coeffs,
                TimeGrid.uniform(1.0, 2),
                dirac_sampler(np.zeros((2, 1))),
                3,
                np.random.default_rng(0),
            )
        assert "step 0" in str(info.value)

    def test_coefficient_symmetry(self):
        """Mean-field coefficients are permutation symmetric; index-dependent ones are not."""
        X = np.random.default_rng(4).standard_normal((3, 5, 1))
        pi = np.array([4, 2, 0, 1, 3])
        assert check_coefficient_symmetry(mean_reverting(), 0.0, X, pi) < 1e-12
        biased = Coefficients(
            drift=lambda t, X: np.arange(X.shape[1])[None, :, None] * np.ones(X.shape),
            diffusion=mean_reverting().diffusion,
        )
        assert check_coefficient_symmetry(biased, 0.0, X, pi) > 0.5


class TestMoments:
    """Empirical mean and variance."""

    def test_population_variance(self):
        """Variance divides by N."""
        X = np.array([[[1.0], [3.0]]])
        mean, var = empirical_moments(X)
        assert mean[0, 0] == 2.0 and var[0, 0] == 1.0

    def test_zero_particles(self):
        """The empirical measure of nothing is undefined."""
        with pytest.raises(DomainError):
            empirical_moments(np.zeros((1, 0, 1)))


class TestInitialLaws:
    """Samplers for initial configurations."""

    def test_randomized_law_shapes_and_ranges(self):
        """Per-sample parameters stay within their ranges."""
        law = randomized_initial_law((-1.0, 1.0), (0.1, 0.2), n=50)
        means, stds = law.draw_parameters(100, np.random.default_rng(0))
        assert means.min() >= -1.0 and means.max() <= 1.0
        assert stds.min() >= 0.1 and stds.max() <= 0.2
        assert law(7, np.random.default_rng(1)).shape == (7, 50, 1)

    def test_randomized_law_rejects_negative_std(self):
        """Standard deviations are non-negative."""
        with pytest.raises(DomainError):
            randomized_initial_law((0.0, 1.0), (-0.1, 0.2), n=5)

    def test_mixture_draws_respect_bounds(self):
        """Weights sum to one, means and variances stay in range."""
        bounds = MixtureBounds(l_max=4, mu_max=2.0, var_max=0.5)
        rng = np.random.default_rng(5)
        for _ in range(50):
            spec = draw_mixture(bounds, rng)
            assert 1 <= spec.n_components <= 4
            assert spec.weights.sum() == pytest.approx(1.0)
            assert np.all(np.abs(spec.means) <= 2.0)
            assert np.all((spec.variances >= 1e-4 * 0.5) & (spec.variances <= 0.5))

    def test_mixture_sample_moments(self):
        """Samples from a drawn mixture match its mean and variance."""
        spec, points = sample_mixture(MixtureBounds(), 200_000, np.random.default_rng(6))
        assert points.mean() == pytest.approx(float(spec.mean[0]), abs=0.02)
        assert points.var() == pytest.approx(float(spec.variance[0]), rel=0.05, abs=0.01)

    def test_mixture_law_batches(self):
        """Every batch sample gets its own mixture."""
        X = MixtureLaw(MixtureBounds(), n=20)(6, np.random.default_rng(7))
        assert X.shape == (6, 20, 1)
        assert len({round(float(x), 6) for x in X.mean(axis=(1, 2))}) == 6


class TestDump:
    """Plain-text path dumps."""

    def test_one_row_per_particle_step(self):
        """The table has batch * (N_T + 1) * N rows."""
        grid = TimeGrid.uniform(1.0, 2)
        sampler = gaussian_sampler(3, 1, 0.0, 1.0)
        paths = simulate_batch(mean_reverting(), grid, sampler, 2, np.random.default_rng(0))
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_paths(paths, Path(tmp) / "paths.dat")
            table = np.loadtxt(path)
        assert table.shape == (2 * 3 * 3, 4)
        np.testing.assert_allclose(table[:, 3], paths.states.reshape(-1))
