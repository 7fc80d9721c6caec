"""Benchmark problems as ProblemSpec factories, with their analytic references.

All gradients here are true particle gradients D_{x_i} v, of order 1/N for the
mean-field problems; the Lions-scale quantities are N times larger.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Type, TypeVar

import numpy as np
from loguru import logger
from pydantic import Field, ValidationError, model_validator
from scipy.integrate import solve_ivp

from .autodiff import Tensor, as_tensor
from .errors import ConfigError, DomainError, NumericError
from .particles import (
    Coefficients,
    InitialSampler,
    constant_drift,
    dirac_sampler,
    gaussian_sampler,
    scalar_diffusion,
)
from .schemas import StrictModel

SemilinearDriver = Callable[[float, np.ndarray, Tensor, Tensor], Tensor]
FullyNonlinearDriver = Callable[[float, np.ndarray, Tensor, Tensor, np.ndarray, float], Tensor]
Terminal = Callable[[np.ndarray], np.ndarray]
TimeField = Callable[[float, np.ndarray], np.ndarray]
FeedbackMap = Callable[[float, np.ndarray, np.ndarray, Optional[np.ndarray]], np.ndarray]
P = TypeVar("P", bound=StrictModel)


@dataclass(frozen=True)
class ControlledDynamics:
    """True controlled dynamics dX_i = drift(t, X, a) dt + vol(t, X, a) dW_i."""

    drift: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    volatility: Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemSpec:
    """A symmetric PDE in BSDE form together with whatever references are known."""

    name: str
    n_particles: int
    dim: int
    horizon: float
    coefficients: Coefficients
    terminal: Terminal
    initial_sampler: InitialSampler
    driver: Optional[SemilinearDriver] = None
    nonlinear_driver: Optional[FullyNonlinearDriver] = None
    terminal_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    terminal_gamma: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gamma_scale: float = 1.0
    value_reference: Optional[TimeField] = None
    finite_n_value: Optional[TimeField] = None
    gradient_reference: Optional[TimeField] = None
    lions_reference: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    feedback: Optional[FeedbackMap] = None
    dynamics: Optional[ControlledDynamics] = None
    analytic_control: Optional[TimeField] = None
    optimal_law: Optional[Callable[[float], InitialSampler]] = None
    params: Optional[StrictModel] = None

    @property
    def semilinear(self) -> bool:
        return self.driver is not None

    @property
    def fully_nonlinear(self) -> bool:
        return self.nonlinear_driver is not None


def _centered(X: np.ndarray) -> np.ndarray:
    return X - X.mean(axis=-2, keepdims=True)


def _variance(X: np.ndarray) -> np.ndarray:
    return (_centered(X) ** 2).mean(axis=-2).sum(axis=-1)


def _particle_sum(Z: Tensor) -> Tensor:
    return Z.sum(axis=(1, 2))


def _check_time(t: float, horizon: float) -> None:
    if t < 0.0 or t > horizon + 1e-12:
        raise DomainError(f"t={t} outside [0, {horizon}]")


# ------------------------------------------------------------------- toy


class ToyParams(StrictModel):
    horizon: float = Field(1.0, gt=0.0)
    drift: float = Field(0.2, description="N times the per-component drift b")
    x0: float = Field(1.0, description="Every particle starts here")


def toy_problem(n_particles: int, params: Optional[ToyParams] = None) -> ProblemSpec:
    """v(t, X) = cos(sum x_i) exp((T - t)/2), valid for every N.

    Training process: drift 0.2/N and diffusion I/sqrt(N) per particle.
    """
    p = params or ToyParams()
    n, T = n_particles, p.horizon
    root_n = np.sqrt(n)

    def driver(t: float, X: np.ndarray, y: Tensor, Z: Tensor) -> Tensor:
        S = np.asarray(X).sum(axis=(1, 2))
        e = np.exp((T - t) / 2.0)
        base = (np.cos(S) + p.drift * np.sin(S)) * e - 0.5 * (np.sin(S) * np.cos(S) * e * e) ** 2
        coupling = as_tensor(y) * _particle_sum(as_tensor(Z)) / root_n
        return coupling * coupling / (2.0 * n) + base

    def value(t: float, X: np.ndarray) -> np.ndarray:
        return np.cos(np.asarray(X).sum(axis=(-2, -1))) * np.exp((T - t) / 2.0)

    def gradient(t: float, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        S = X.sum(axis=(-2, -1))
        slope = -np.sin(S) * np.exp((T - t) / 2.0)
        return np.broadcast_to(slope[..., None, None], X.shape).copy()

    return ProblemSpec(
        name="toy",
        n_particles=n,
        dim=1,
        horizon=T,
        coefficients=Coefficients(
            drift=constant_drift(p.drift / n), diffusion=scalar_diffusion(1.0 / root_n)
        ),
        terminal=lambda X: value(T, X),
        initial_sampler=dirac_sampler(np.full((n, 1), p.x0)),
        driver=driver,
        terminal_gradient=lambda X: gradient(T, X),
        value_reference=value,
        finite_n_value=value,
        gradient_reference=gradient,
        params=p,
    )


def toy_hessian(params: ToyParams, t: float, X: np.ndarray) -> np.ndarray:
    """Every entry of D^2 v equals -cos(sum x) exp((T - t)/2)."""
    S = np.asarray(X).sum(axis=(-2, -1))
    return -np.cos(S) * np.exp((params.horizon - t) / 2.0)


# -------------------------------------------------------------- systemic


class SystemicParams(StrictModel):
    sigma: float = Field(1.0, gt=0.0)
    kappa: float = 0.6
    q: float = 0.8
    c: float = 2.0
    eta: float = 2.0
    horizon: float = Field(1.0, gt=0.0)
    x0: float = 0.0
    init_std: float = Field(0.0, ge=0.0, description="0 gives a Dirac initial law")

    @model_validator(mode="after")
    def validate_cost(self) -> "SystemicParams":
        if self.q**2 > self.eta:
            raise ValueError(f"q^2={self.q**2} exceeds eta={self.eta}")
        return self

    @property
    def a(self) -> float:
        return self.kappa + self.q

    @property
    def delta(self) -> float:
        return self.a**2 + self.eta - self.q**2


class RiccatiOracle:
    """K_t and int_t^T K from the Riccati ODE, plus the closed forms for comparison.

    K' = 2(kappa+q)K + 2K^2 - (eta-q^2)/2 with K_T = c/2, integrated backward
    with scipy's DOP853 at tight tolerances. The optimal limit variance
    Var' = -2(kappa+q+2K)Var + sigma^2 is integrated forward from init_std^2.
    """

    def __init__(self, params: SystemicParams):
        self.params = params
        p = params
        source = (p.eta - p.q**2) / 2.0

        def riccati(t: float, y: np.ndarray) -> np.ndarray:
            K = y[0]
            return np.array([2.0 * p.a * K + 2.0 * K * K - source, -K])

        backward = solve_ivp(
            riccati,
            (p.horizon, 0.0),
            [p.c / 2.0, 0.0],
            method="DOP853",
            rtol=1e-12,
            atol=1e-13,
            dense_output=True,
        )
        if not backward.success:
            raise NumericError(f"Riccati integration failed: {backward.message}")
        self._backward = backward.sol

        def variance(t: float, y: np.ndarray) -> np.ndarray:
            return np.array([-2.0 * (p.a + 2.0 * self.K(t)) * y[0] + p.sigma**2])

        forward = solve_ivp(
            variance,
            (0.0, p.horizon),
            [p.init_std**2],
            method="DOP853",
            rtol=1e-11,
            atol=1e-13,
            dense_output=True,
        )
        if not forward.success:
            raise NumericError(f"optimal variance integration failed: {forward.message}")
        self._forward = forward.sol

    def K(self, t: float) -> float:
        _check_time(t, self.params.horizon)
        return float(self._backward(t)[0])

    def integral(self, t: float) -> float:
        _check_time(t, self.params.horizon)
        return float(self._backward(t)[1])

    def optimal_variance(self, t: float) -> float:
        _check_time(t, self.params.horizon)
        return float(self._forward(t)[0])

    # closed forms

    def _ratio(self, t: float) -> float:
        p = self.params
        root = np.sqrt(p.delta)
        tau = root * (p.horizon - t)
        num = root * np.sinh(tau) + (p.a + p.c) * np.cosh(tau)
        den = root * np.cosh(tau) + (p.a + p.c) * np.sinh(tau)
        return float(num / den)

    def closed_K(self, t: float) -> float:
        p = self.params
        return -0.5 * (p.a - np.sqrt(p.delta) * self._ratio(t))

    def closed_integral(self, t: float) -> float:
        p = self.params
        root = np.sqrt(p.delta)
        tau = p.horizon - t
        inner = np.cosh(root * tau) + (p.a + p.c) / root * np.sinh(root * tau)
        return float(0.5 * np.log(inner) - 0.5 * p.a * tau)

    def closed_K_derivative(self, t: float) -> float:
        return -0.5 * self.params.delta * (1.0 - self._ratio(t) ** 2)

    def riccati_residual(self, t: float) -> float:
        """dK/dt minus the Riccati right-hand side, both from the closed form."""
        p = self.params
        K = self.closed_K(t)
        rhs = 2.0 * p.a * K + 2.0 * K * K - (p.eta - p.q**2) / 2.0
        return self.closed_K_derivative(t) - rhs

    # references

    def value(self, t: float, variance: np.ndarray) -> np.ndarray:
        """Mean-field limit v(t, mu) = K_t Var(mu) + sigma^2 int_t^T K."""
        return self.K(t) * np.asarray(variance) + self.params.sigma**2 * self.integral(t)

    def finite_n_value(self, t: float, variance: np.ndarray, n: int) -> np.ndarray:
        noise = self.params.sigma**2 * (1.0 - 1.0 / n) * self.integral(t)
        return self.K(t) * np.asarray(variance) + noise


def systemic_problem(n_particles: int, params: Optional[SystemicParams] = None) -> ProblemSpec:
    """Cooperative systemic-risk control, trained on driftless Brownian particles."""
    p = params or SystemicParams()
    n, T = n_particles, p.horizon
    oracle = RiccatiOracle(p)
    source = (p.eta - p.q**2) / (2.0 * n)

    def driver(t: float, X: np.ndarray, y: Tensor, Z: Tensor) -> Tensor:
        u = -_centered(np.asarray(X))
        quad = source * (u * u).sum(axis=(1, 2))
        Z = as_tensor(Z)
        return _particle_sum(Z * (p.a * u)) - _particle_sum(Z * Z) * (n / 2.0) + quad

    def lions(t: float, X: np.ndarray, x: np.ndarray) -> np.ndarray:
        mean = np.asarray(X).mean(axis=-2)
        return 2.0 * oracle.K(t) * (np.asarray(x) - mean[..., None, :])

    def feedback(t: float, X: np.ndarray, z: np.ndarray, gamma: Optional[np.ndarray]) -> np.ndarray:
        return -p.q * _centered(X) - z

    def optimal_law(t: float) -> InitialSampler:
        return gaussian_sampler(n, 1, p.x0, np.sqrt(oracle.optimal_variance(t)))

    if p.init_std > 0.0:
        initial = gaussian_sampler(n, 1, p.x0, p.init_std)
    else:
        initial = dirac_sampler(np.full((n, 1), p.x0))

    return ProblemSpec(
        name="systemic",
        n_particles=n,
        dim=1,
        horizon=T,
        coefficients=Coefficients(drift=constant_drift(0.0), diffusion=scalar_diffusion(p.sigma)),
        terminal=lambda X: 0.5 * p.c * _variance(X),
        initial_sampler=initial,
        driver=driver,
        terminal_gradient=lambda X: (p.c / n) * _centered(X),
        value_reference=lambda t, X: oracle.value(t, _variance(X)),
        finite_n_value=lambda t, X: oracle.finite_n_value(t, _variance(X), n),
        gradient_reference=lambda t, X: (2.0 * oracle.K(t) / n) * _centered(X),
        lions_reference=lions,
        feedback=feedback,
        dynamics=ControlledDynamics(
            drift=lambda t, X, a: -p.kappa * _centered(X) + a,
            volatility=lambda t, X, a: np.full(X.shape, p.sigma),
        ),
        analytic_control=lambda t, X: -(p.q + 2.0 * oracle.K(t)) * _centered(X),
        optimal_law=optimal_law,
        params=p,
    )


# --------------------------------------------------------- mean-variance


class MeanVarParams(StrictModel):
    beta: float = 0.15
    nu: float = Field(0.35, gt=0.0)
    lam: float = Field(1.0, gt=0.0, description="Risk aversion")
    x0: float = 1.0
    horizon: float = Field(1.0, gt=0.0)

    @property
    def R(self) -> float:
        return self.beta**2 / self.nu**2

    @property
    def training_drift(self) -> float:
        return self.R / (2.0 * self.lam)

    @property
    def training_vol(self) -> float:
        return np.sqrt(self.R) / (2.0 * self.lam)


def meanvar_value(p: MeanVarParams, t: float, X: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    """Exact value: the mean-field limit, or the N-particle solution when ``n`` is given.

    The N-particle solution has the same form with R replaced by R N/(N - 1).
    """
    rate = p.R if n is None else p.R * n / (n - 1.0)
    X = np.asarray(X)
    mean = X.mean(axis=(-2, -1))
    growth = np.exp(rate * (p.horizon - t))
    return p.lam / growth * _variance(X) - mean - (growth - 1.0) / (4.0 * p.lam)


def meanvar_eta(p: MeanVarParams, t: float) -> float:
    """Mean of the shift X_t - x0 - e^{RT}/(2 lambda) under the optimal strategy."""
    return -np.exp(p.R * (p.horizon - t)) / (2.0 * p.lam)


def meanvar_kappa_sq(p: MeanVarParams, t: float) -> float:
    """Log-variance of the log-normal factor of the optimal wealth at ``t``."""
    eta = meanvar_eta(p, t)
    decay = np.exp(p.R * (p.horizon - t))
    spread = decay * (np.exp(p.R * p.horizon) - decay)
    return float(np.log(spread / (4.0 * p.lam**2 * eta**2) + 1.0))


def meanvar_law_mean(p: MeanVarParams, t: float) -> float:
    return p.x0 + np.exp(p.R * p.horizon) / (2.0 * p.lam) + meanvar_eta(p, t)


def meanvar_law_sampler(p: MeanVarParams, n: int, t: float) -> InitialSampler:
    """Optimal wealth law at ``t``.

    x0 + e^{RT}/(2 lambda) + eta(t) L with L log-normal of mean 1.
    """
    kappa_sq = meanvar_kappa_sq(p, t)
    shift = p.x0 + np.exp(p.R * p.horizon) / (2.0 * p.lam)
    eta = meanvar_eta(p, t)

    def sample(batch: int, rng: np.random.Generator) -> np.ndarray:
        normal = rng.standard_normal((batch, n, 1))
        return shift + eta * np.exp(np.sqrt(kappa_sq) * normal - 0.5 * kappa_sq)

    return sample


def meanvar_halft_law(p: MeanVarParams, n: int) -> InitialSampler:
    return meanvar_law_sampler(p, n, p.horizon / 2.0)


def meanvar_problem(n_particles: int, params: Optional[MeanVarParams] = None) -> ProblemSpec:
    """Markowitz mean-variance in fully nonlinear form.

    Training process: drift R/(2 lambda), volatility sqrt(R)/(2 lambda). The
    driver is h(z, gamma) = -(R/2) z^2 / gamma minus the training drift and
    diffusion terms.
    """
    p = params or MeanVarParams()
    n, T = n_particles, p.horizon
    if n < 2:
        raise ConfigError("mean-variance needs at least two particles")
    b, vol = p.training_drift, p.training_vol

    def driver(
        t: float, X: np.ndarray, y: Tensor, Z: Tensor, gamma: np.ndarray, floor: float
    ) -> Tensor:
        diag = np.diagonal(np.asarray(gamma), axis1=-2, axis2=-1)
        safe = np.maximum(diag, floor)
        if np.any(safe <= 0.0):
            raise NumericError(
                "non-positive gamma reached the mean-variance driver", location=f"t={t}"
            )
        Z = as_tensor(Z)
        return (
            -_particle_sum(Z * Z / safe) * (p.R / 2.0)
            - _particle_sum(Z) * b
            - 0.5 * vol**2 * diag.sum(axis=(1, 2))
        )

    def terminal_gamma(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        block = 2.0 * p.lam * (1.0 - 1.0 / n) / n
        return np.broadcast_to(block * np.eye(1), X.shape + (1,)).copy()

    def lions(t: float, X: np.ndarray, x: np.ndarray) -> np.ndarray:
        mean = np.asarray(X).mean(axis=-2)
        return 2.0 * p.lam * np.exp(-p.R * (T - t)) * (np.asarray(x) - mean[..., None, :]) - 1.0

    def feedback(t: float, X: np.ndarray, z: np.ndarray, gamma: Optional[np.ndarray]) -> np.ndarray:
        if gamma is None:
            raise DomainError("the mean-variance feedback needs gamma")
        return -p.beta * z / (p.nu**2 * gamma)

    def analytic_control(t: float, X: np.ndarray) -> np.ndarray:
        return -(p.beta / p.nu**2) * (_centered(X) - np.exp(p.R * (T - t)) / (2.0 * p.lam))

    return ProblemSpec(
        name="meanvar",
        n_particles=n,
        dim=1,
        horizon=T,
        coefficients=Coefficients(drift=constant_drift(b), diffusion=scalar_diffusion(vol)),
        terminal=lambda X: meanvar_value(p, T, X),
        initial_sampler=dirac_sampler(np.full((n, 1), p.x0)),
        nonlinear_driver=driver,
        terminal_gradient=lambda X: (2.0 * p.lam * _centered(X) - 1.0) / n,
        terminal_gamma=terminal_gamma,
        gamma_scale=2.0 * p.lam / n,
        value_reference=lambda t, X: meanvar_value(p, t, X),
        finite_n_value=lambda t, X: meanvar_value(p, t, X, n),
        gradient_reference=lambda t, X: lions(t, X, X) / n,
        lions_reference=lions,
        feedback=feedback,
        dynamics=ControlledDynamics(
            drift=lambda t, X, a: p.beta * a,
            volatility=lambda t, X, a: p.nu * a,
        ),
        analytic_control=analytic_control,
        optimal_law=lambda t: meanvar_law_sampler(p, n, t),
        params=p,
    )


# ---------------------------------------------------------------- min-LQC


class MinLqcParams(StrictModel):
    A: float = 0.0
    A_bar: float = 0.0
    B: float = 1.0
    Q: float = Field(0.0, ge=0.0)
    Q_bar: float = Field(1.0, ge=0.0)
    S: float = 1.0
    R: float = Field(1.0, gt=0.0)
    sigma: float = Field(0.3, gt=0.0)
    horizon: float = Field(0.5, gt=0.0)
    xi1: float = 0.25
    xi2: float = 1.75
    x0: float = 1.0
    init_std: float = Field(0.2, ge=0.0)
    benchmark: Optional[float] = Field(None, description="Finite-difference reference value")


MINLQC_CASES: Dict[int, Dict[str, float]] = {
    1: {"sigma": 0.3, "x0": 1.0, "init_std": 0.2, "benchmark": 0.2256},
    2: {"sigma": 0.5, "x0": 0.625, "init_std": float(np.sqrt(0.2)), "benchmark": 0.2085},
    3: {"sigma": 0.3, "x0": 0.625, "init_std": float(np.sqrt(0.2)), "benchmark": 0.1734},
    4: {"sigma": 0.3, "x0": 0.625, "init_std": float(np.sqrt(0.4)), "benchmark": 0.2276},
}


def minlqc_hamiltonian(
    p: MinLqcParams, x: float, mean: float, z: float, gamma: float = 0.0
) -> float:
    """Mean-field Hamiltonian after minimizing over the control a = -(B/R) z."""
    return (
        (p.A * x + p.A_bar * mean) * z
        - p.B**2 / (2.0 * p.R) * z * z
        + 0.5 * (p.Q * x * x + p.Q_bar * (x - p.S * mean) ** 2)
        + 0.5 * p.sigma**2 * gamma
    )


def minlqc_params(case_id: int, overrides: Optional[Dict[str, float]] = None) -> MinLqcParams:
    if case_id not in MINLQC_CASES:
        raise ConfigError(f"unknown min-LQC case {case_id}; expected one of {sorted(MINLQC_CASES)}")
    return _validate(MinLqcParams, {**MINLQC_CASES[case_id], **(overrides or {})})


def minlqc_problem(
    n_particles: int, params: Optional[MinLqcParams] = None, case_id: int = 1
) -> ProblemSpec:
    """Linear dynamics, quadratic running cost, terminal distance to the nearer of two targets."""
    p = params or minlqc_params(case_id)
    n, T = n_particles, p.horizon
    control_cost = p.B**2 * n / (2.0 * p.R)

    def driver(t: float, X: np.ndarray, y: Tensor, Z: Tensor) -> Tensor:
        X = np.asarray(X)
        mean = X.mean(axis=1, keepdims=True)
        running = (p.Q * X * X + p.Q_bar * (X - p.S * mean) ** 2).sum(axis=(1, 2)) / (2.0 * n)
        Z = as_tensor(Z)
        drift = _particle_sum(Z * (p.A * X + p.A_bar * mean))
        return drift - _particle_sum(Z * Z) * control_cost + running

    def nearest_target(X: np.ndarray) -> np.ndarray:
        return np.where(np.abs(X - p.xi1) <= np.abs(X - p.xi2), p.xi1, p.xi2)

    def terminal(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        return ((X - nearest_target(X)) ** 2).mean(axis=-2).sum(axis=-1)

    def feedback(t: float, X: np.ndarray, z: np.ndarray, gamma: Optional[np.ndarray]) -> np.ndarray:
        return -(p.B / p.R) * z

    def reference(t: float, X: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], p.benchmark)

    return ProblemSpec(
        name=f"minlqc-{case_id}",
        n_particles=n,
        dim=1,
        horizon=T,
        coefficients=Coefficients(drift=constant_drift(0.0), diffusion=scalar_diffusion(p.sigma)),
        terminal=terminal,
        initial_sampler=gaussian_sampler(n, 1, p.x0, p.init_std),
        driver=driver,
        terminal_gradient=lambda X: (2.0 / n) * (np.asarray(X) - nearest_target(np.asarray(X))),
        value_reference=reference if p.benchmark is not None else None,
        feedback=feedback,
        dynamics=ControlledDynamics(
            drift=lambda t, X, a: p.A * X + p.A_bar * X.mean(axis=-2, keepdims=True) + p.B * a,
            volatility=lambda t, X, a: np.full(X.shape, p.sigma),
        ),
        params=p,
    )


# --------------------------------------------------------------- registry


def _validate(model: Type[P], values: Dict[str, float]) -> P:
    try:
        return model.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}") from e


_FACTORIES: Dict[str, Tuple[Type[StrictModel], Callable[..., ProblemSpec]]] = {
    "toy": (ToyParams, toy_problem),
    "systemic": (SystemicParams, systemic_problem),
    "meanvar": (MeanVarParams, meanvar_problem),
}


def problem_names() -> List[str]:
    return sorted(_FACTORIES) + [f"minlqc-{case}" for case in sorted(MINLQC_CASES)]


def make_problem(
    name: str, n_particles: int, overrides: Optional[Dict[str, float]] = None
) -> ProblemSpec:
    """Build a registered problem, with parameter overrides validated by its params model."""
    if n_particles < 1:
        raise ConfigError("a problem needs at least one particle")
    overrides = dict(overrides or {})
    if name.startswith("minlqc-"):
        try:
            case_id = int(name.split("-", 1)[1])
        except ValueError:
            raise ConfigError(f"unknown problem {name!r}") from None
        spec = minlqc_problem(n_particles, minlqc_params(case_id, overrides), case_id)
    elif name in _FACTORIES:
        model, factory = _FACTORIES[name]
        spec = factory(n_particles, _validate(model, overrides))
    else:
        raise ConfigError(f"unknown problem {name!r}; choose from {', '.join(problem_names())}")
    logger.debug(f"problem {spec.name}: N={n_particles}, T={spec.horizon}, overrides={overrides}")
    return spec
