"""Tests for the benchmark problems and their analytic references."""

import numpy as np
import pytest

from sympde.autodiff import constant
from sympde.errors import ConfigError
from sympde.problems import (
    MINLQC_CASES,
    MeanVarParams,
    RiccatiOracle,
    SystemicParams,
    ToyParams,
    make_problem,
    meanvar_eta,
    meanvar_halft_law,
    meanvar_law_mean,
    meanvar_law_sampler,
    meanvar_problem,
    meanvar_value,
    minlqc_hamiltonian,
    minlqc_params,
    problem_names,
    systemic_problem,
    toy_hessian,
    toy_problem,
)


def hessian_diagonal(value, t, X, h=1e-4):
    """Central second differences of value(t, .) in each particle coordinate."""
    out = np.zeros(X.shape)
    base = value(t, X)
    for i in range(X.shape[1]):
        up, down = X.copy(), X.copy()
        up[:, i, 0] += h
        down[:, i, 0] -= h
        out[:, i, 0] = (value(t, up) - 2.0 * base + value(t, down)) / h**2
    return out


def semilinear_residual(problem, value, gradient, t, X, h=1e-5):
    """d_t v + b . Dv + 1/2 sigma^2 tr D^2 v + f(t, X, v, Dv) for scalar diagonal diffusion."""
    dt_v = (value(t + h, X) - value(t - h, X)) / (2 * h)
    Z = gradient(t, X)
    sigma = problem.coefficients.diffusion(t, X)[..., 0, 0]
    drift = problem.coefficients.drift(t, X)
    second = 0.5 * (sigma**2 * hessian_diagonal(value, t, X)[..., 0]).sum(axis=1)
    f = problem.driver(t, X, constant(value(t, X)), constant(Z)).numpy()
    return dt_v + (drift * Z).sum(axis=(1, 2)) + second + f


class TestToy:
    """Closed-form toy problem."""

    def test_value_at_the_reference_point(self):
        """v(0, 1_N) = cos(N) e^{T/2}; at N = 1000 this is about 0.9273."""
        problem = toy_problem(1000)
        X0 = problem.initial_sampler(1, np.random.default_rng(0))
        assert problem.value_reference(0.0, X0)[0] == pytest.approx(np.cos(1000.0) * np.exp(0.5))
        assert problem.value_reference(0.0, X0)[0] == pytest.approx(0.9273, abs=1e-4)

    def test_solution_satisfies_the_pde(self):
        """The closed form solves the semilinear PDE with the generated driver."""
        problem = toy_problem(4)
        X = 0.3 * np.random.default_rng(0).standard_normal((5, 4, 1))
        residual = semilinear_residual(
            problem, problem.value_reference, problem.gradient_reference, 0.4, X
        )
        np.testing.assert_allclose(residual, 0.0, atol=1e-5)

    def test_gradient_and_hessian(self):
        """The gradient and Hessian references match finite differences."""
        params = ToyParams()
        problem = toy_problem(3, params)
        X = np.random.default_rng(1).standard_normal((2, 3, 1))
        np.testing.assert_allclose(
            hessian_diagonal(problem.value_reference, 0.2, X)[..., 0],
            np.broadcast_to(toy_hessian(params, 0.2, X)[:, None], (2, 3)),
            atol=1e-5,
        )
        h = 1e-6
        up, down = X.copy(), X.copy()
        up[:, 1, 0] += h
        down[:, 1, 0] -= h
        fd = (problem.value_reference(0.2, up) - problem.value_reference(0.2, down)) / (2 * h)
        np.testing.assert_allclose(problem.gradient_reference(0.2, X)[:, 1, 0], fd, rtol=1e-6)


class TestSystemic:
    """Riccati oracle and the systemic-risk problem."""

    def test_ode_matches_closed_form(self):
        """K and its integral from DOP853 agree with the hyperbolic closed forms."""
        oracle = RiccatiOracle(SystemicParams())
        for t in np.linspace(0.0, 1.0, 11):
            assert oracle.K(t) == pytest.approx(oracle.closed_K(t), abs=1e-9)
            assert oracle.integral(t) == pytest.approx(oracle.closed_integral(t), abs=1e-9)
            assert abs(oracle.riccati_residual(t)) < 1e-9

    def test_terminal_condition(self):
        """K_T = c/2 and the integral vanishes at T."""
        oracle = RiccatiOracle(SystemicParams(c=3.0))
        assert oracle.K(1.0) == pytest.approx(1.5)
        assert oracle.integral(1.0) == pytest.approx(0.0, abs=1e-14)

    def test_value_from_a_dirac(self):
        """With zero initial variance v(0) = sigma^2 int_0^T K."""
        problem = systemic_problem(100)
        X0 = problem.initial_sampler(1, np.random.default_rng(0))
        assert problem.value_reference(0.0, X0)[0] == pytest.approx(0.38696, abs=2e-4)

    def test_finite_n_value_satisfies_the_pde(self):
        """The N-particle value solves the PDE with the generated driver."""
        problem = systemic_problem(5)
        X = np.random.default_rng(2).standard_normal((4, 5, 1))
        residual = semilinear_residual(
            problem, problem.finite_n_value, problem.gradient_reference, 0.5, X
        )
        np.testing.assert_allclose(residual, 0.0, atol=1e-5)

    def test_lions_reference_at_horizon(self):
        """At T the Lions derivative is c (x - mean)."""
        problem = systemic_problem(6)
        X = np.random.default_rng(3).standard_normal((2, 6, 1))
        expected = 2.0 * (X - X.mean(axis=1, keepdims=True))
        np.testing.assert_allclose(problem.lions_reference(1.0, X, X), expected, atol=1e-12)

    def test_optimal_variance_from_a_dirac(self):
        """The optimal limit variance starts at init_std^2 and stays bounded."""
        oracle = RiccatiOracle(SystemicParams(init_std=0.5))
        assert oracle.optimal_variance(0.0) == pytest.approx(0.25)
        assert 0.0 < oracle.optimal_variance(1.0) < 0.25 + 1.0

    def test_cost_validation(self):
        """q^2 above eta is rejected through make_problem."""
        with pytest.raises(ConfigError):
            make_problem("systemic", 10, {"q": 2.0})


class TestMeanVariance:
    """Markowitz problem in fully nonlinear form."""

    def test_reference_values(self):
        """Limit -1.050408 and N=10 value -1.0566 from the Dirac at x0 = 1."""
        p = MeanVarParams()
        X0 = np.ones((1, 10, 1))
        assert meanvar_value(p, 0.0, X0)[0] == pytest.approx(-1.050408, abs=1e-6)
        assert meanvar_value(p, 0.0, X0, n=10)[0] == pytest.approx(-1.0566, abs=1e-4)

    def test_shift_at_horizon(self):
        """eta(T) = -1/(2 lambda)."""
        p = MeanVarParams(lam=2.5)
        assert meanvar_eta(p, p.horizon) == pytest.approx(-1.0 / 5.0)

    def test_law_starts_at_x0(self):
        """The optimal law at t = 0 is the Dirac at x0."""
        p = MeanVarParams()
        X = meanvar_law_sampler(p, 4, 0.0)(3, np.random.default_rng(0))
        np.testing.assert_allclose(X, p.x0)

    def test_law_mean(self):
        """Samples of the optimal law have the advertised mean."""
        p = MeanVarParams()
        X = meanvar_law_sampler(p, 1000, 0.5)(200, np.random.default_rng(1))
        assert X.mean() == pytest.approx(meanvar_law_mean(p, 0.5), abs=5e-3)

    def test_half_horizon_law(self):
        """The T/2 sampler is reproducible and centred on the analytic mean."""
        p = MeanVarParams()
        sampler = meanvar_halft_law(p, 500)
        a = sampler(100, np.random.default_rng(2))
        b = sampler(100, np.random.default_rng(2))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (100, 500, 1)
        stderr = a.std() / np.sqrt(a.size)
        assert abs(a.mean() - meanvar_law_mean(p, p.horizon / 2.0)) < 3.0 * stderr + 1e-3

    def test_terminal_gamma_matches_hessian(self):
        """Gamma_T is the diagonal of the Hessian of the terminal value."""
        problem = meanvar_problem(6)
        X = 1.0 + 0.2 * np.random.default_rng(4).standard_normal((2, 6, 1))
        hess = hessian_diagonal(lambda t, Y: problem.terminal(Y), 1.0, X)
        np.testing.assert_allclose(problem.terminal_gamma(X)[..., 0], hess, atol=1e-5)

    def test_finite_n_value_satisfies_the_pde(self):
        """The N-particle value solves the fully nonlinear PDE with its exact Gamma."""
        p = MeanVarParams()
        n, t = 5, 0.3
        problem = meanvar_problem(n, p)
        X = 1.0 + 0.2 * np.random.default_rng(5).standard_normal((3, n, 1))
        value = problem.finite_n_value
        h = 1e-5
        dt_v = (value(t + h, X) - value(t - h, X)) / (2 * h)
        growth = np.exp(p.R * n / (n - 1.0) * (p.horizon - t))
        Z = (p.lam / growth) * (2.0 / n) * (X - X.mean(axis=1, keepdims=True)) - 1.0 / n
        gamma_diag = (p.lam / growth) * (2.0 / n) * (1.0 - 1.0 / n)
        gamma = np.full(X.shape + (1,), gamma_diag)
        vol = p.training_vol
        driver = problem.nonlinear_driver(t, X, constant(value(t, X)), constant(Z), gamma, 1e-12)
        generator = (
            dt_v
            + p.training_drift * Z.sum(axis=(1, 2))
            + 0.5 * vol**2 * gamma_diag * n
            + driver.numpy()
        )
        np.testing.assert_allclose(generator, 0.0, atol=1e-6)

    def test_needs_two_particles(self):
        """N = 1 has no empirical variance to price."""
        with pytest.raises(ConfigError):
            meanvar_problem(1)


class TestMinLqc:
    """Double-well min-LQC cases."""

    def test_case_table(self):
        """Four cases with their benchmark values."""
        assert sorted(MINLQC_CASES) == [1, 2, 3, 4]
        assert minlqc_params(2).benchmark == pytest.approx(0.2085)
        reference = make_problem("minlqc-3", 10).value_reference(0.0, np.zeros((2, 10, 1)))
        assert reference[0] == pytest.approx(0.1734)

    def test_hamiltonian_is_the_minimum_over_controls(self):
        """The closed-form Hamiltonian equals the minimum over a fine control grid."""
        p = minlqc_params(1)
        x, mean, z = 0.7, 0.4, 0.9
        controls = np.linspace(-5.0, 5.0, 200_001)
        running = 0.5 * (p.Q * x * x + p.Q_bar * (x - p.S * mean) ** 2)
        hamiltonians = (p.A * x + p.A_bar * mean + p.B * controls) * z + 0.5 * p.R * controls**2
        brute = np.min(hamiltonians) + running
        assert minlqc_hamiltonian(p, x, mean, z) == pytest.approx(brute, abs=1e-8)

    def test_terminal_gradient(self):
        """The terminal gradient matches finite differences away from the midpoint."""
        problem = make_problem("minlqc-1", 4)
        X = np.array([[[0.1], [0.6], [1.5], [2.0]]])
        h = 1e-6
        for i in range(4):
            up, down = X.copy(), X.copy()
            up[0, i, 0] += h
            down[0, i, 0] -= h
            fd = (problem.terminal(up) - problem.terminal(down))[0] / (2 * h)
            assert problem.terminal_gradient(X)[0, i, 0] == pytest.approx(fd, rel=1e-6)


class TestRegistry:
    """Problem lookup by name."""

    def test_names(self):
        """Every registered family is listed."""
        assert problem_names() == [
            "meanvar",
            "systemic",
            "toy",
            "minlqc-1",
            "minlqc-2",
            "minlqc-3",
            "minlqc-4",
        ]

    @pytest.mark.parametrize("name", ["heat", "minlqc-9", "minlqc-x"])
    def test_unknown_problem(self, name):
        """Unknown names are configuration errors."""
        with pytest.raises(ConfigError):
            make_problem(name, 10)

    def test_unknown_parameter(self):
        """Parameter overrides are validated against the problem's model."""
        with pytest.raises(ConfigError):
            make_problem("toy", 10, {"volatility": 1.0})

    def test_overrides_apply(self):
        """Overrides reach the problem."""
        assert make_problem("toy", 10, {"horizon": 2.0}).horizon == 2.0
