"""Euler-Maruyama simulation of interacting particles, empirical moments, initial laws.

States are arrays of shape ``(batch, N, d)``. Idiosyncratic increments have
the same shape per step; common-noise increments have shape ``(batch, q)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .errors import DomainError, NumericError, StructuralError
from .schemas import MixtureBounds

FieldFn = Callable[[float, np.ndarray], np.ndarray]
InitialSampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class Coefficients:
    """Drift b_i, diffusion sigma_ij and common-noise loading sigma_i0 of the particle system.

    ``diffusion`` returns the diagonal blocks ``(batch, N, d, d)`` (sigma_ij = 0
    for i != j) unless ``cross_diffusion`` is set, in which case it returns all
    blocks ``(batch, N, N, d, d)``. ``common`` returns ``(batch, N, d, q)``.
    """

    drift: FieldFn
    diffusion: FieldFn
    common: Optional[FieldFn] = None
    common_dim: int = 0
    cross_diffusion: bool = False

    def noise(
        self, t: float, X: np.ndarray, dW: np.ndarray, dW0: Optional[np.ndarray]
    ) -> np.ndarray:
        """sum_j sigma_ij dW^j + sigma_i0 dW^0, shape ``(batch, N, d)``."""
        sigma = self.diffusion(t, X)
        if self.cross_diffusion:
            out = np.einsum("bijkl,bjl->bik", sigma, dW)
        else:
            out = np.einsum("bikl,bil->bik", sigma, dW)
        if self.common is not None and self.common_dim > 0:
            if dW0 is None:
                raise StructuralError("common-noise loading given but no common increments")
            out = out + np.einsum("bikq,bq->bik", self.common(t, X), dW0)
        return out

    @classmethod
    def constant(cls, drift: float, sigma: float) -> "Coefficients":
        """Constant drift in every component and sigma_ij = sigma * delta_ij * I."""
        return cls(drift=constant_drift(drift), diffusion=scalar_diffusion(sigma))


def constant_drift(value: float) -> FieldFn:
    def drift(t: float, X: np.ndarray) -> np.ndarray:
        return np.full(X.shape, float(value))

    return drift


def scalar_diffusion(sigma: float) -> FieldFn:
    def diffusion(t: float, X: np.ndarray) -> np.ndarray:
        d = X.shape[-1]
        return np.broadcast_to(sigma * np.eye(d), X.shape + (d,))

    return diffusion


class TimeGrid:
    """Knots t_0 < ... < t_{N_T}."""

    def __init__(self, knots: np.ndarray):
        knots = np.asarray(knots, dtype=np.float64)
        if knots.ndim != 1 or knots.size < 2:
            raise StructuralError("a time grid needs at least two knots")
        if not np.all(np.diff(knots) > 0.0):
            raise StructuralError("time grid knots must be strictly increasing")
        self.knots = knots

    @classmethod
    def uniform(cls, horizon: float, n_steps: int, start: float = 0.0) -> "TimeGrid":
        if n_steps < 1 or horizon <= start:
            raise StructuralError(
                f"bad uniform grid: start={start}, horizon={horizon}, steps={n_steps}"
            )
        return cls(np.linspace(start, horizon, n_steps + 1))

    @property
    def n_steps(self) -> int:
        return self.knots.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def start(self) -> float:
        return float(self.knots[0])

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    def prefix(self, n_steps: int) -> "TimeGrid":
        """The first ``n_steps`` steps of this grid."""
        return TimeGrid(self.knots[: n_steps + 1])

    def suffix(self, first_step: int) -> "TimeGrid":
        return TimeGrid(self.knots[first_step:])

    def nearest_step(self, t: float) -> int:
        return int(np.argmin(np.abs(self.knots - t)))


@dataclass(frozen=True)
class PathBatch:
    """Simulated trajectories together with the increments that produced them."""

    states: np.ndarray  # (batch, N_T + 1, N, d)
    dW: np.ndarray  # (batch, N_T, N, d)
    dW0: np.ndarray  # (batch, N_T, q)
    seed: int = 0
    stream: int = 0

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]


def empirical_moments(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Componentwise mean and population variance over the particle axis (second to last)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2] < 1:
        raise DomainError("empirical measure of zero particles")
    mean = X.mean(axis=-2)
    var = ((X - np.expand_dims(mean, -2)) ** 2).mean(axis=-2)
    return mean, var


def _euler(
    coeffs: Coefficients,
    t: float,
    dt: float,
    X: np.ndarray,
    dW0: Optional[np.ndarray],
    dW: np.ndarray,
) -> np.ndarray:
    if dW.shape != X.shape:
        raise StructuralError(f"increments {dW.shape} do not match states {X.shape}")
    if coeffs.common_dim and (dW0 is None or dW0.shape != (X.shape[0], coeffs.common_dim)):
        raise StructuralError(
            f"common increments must have shape ({X.shape[0]}, {coeffs.common_dim})"
        )
    with np.errstate(all="ignore"):
        return X + coeffs.drift(t, X) * dt + coeffs.noise(t, X, dW, dW0)


def euler_step(
    coeffs: Coefficients,
    t: float,
    dt: float,
    X: np.ndarray,
    dW0: Optional[np.ndarray],
    dW: np.ndarray,
) -> np.ndarray:
    """X_{k+1} = X_k + b dt + sum_j sigma_ij dW^j + sigma_i0 dW^0."""
    out = _euler(coeffs, t, dt, X, dW0, dW)
    if not np.all(np.isfinite(out)):
        raise NumericError("Euler step produced a non-finite state", location=f"t={t}")
    return out


def simulate_batch(
    coeffs: Coefficients,
    grid: TimeGrid,
    initial_sampler: InitialSampler,
    batch: int,
    rng: np.random.Generator,
    seed: int = 0,
    stream: int = 0,
) -> PathBatch:
    """Draw initial states and increments from ``rng``, then run the Euler recursion."""
    if batch < 1:
        raise DomainError("batch size must be positive")
    X = np.asarray(initial_sampler(batch, rng), dtype=np.float64)
    if X.ndim != 3 or X.shape[0] != batch:
        raise StructuralError(f"initial sampler returned shape {X.shape}, expected ({batch}, N, d)")
    steps = grid.n_steps
    sqrt_dt = np.sqrt(grid.dt)
    dW = rng.standard_normal((batch, steps) + X.shape[1:]) * sqrt_dt[None, :, None, None]
    dW0 = rng.standard_normal((batch, steps, coeffs.common_dim)) * sqrt_dt[None, :, None]

    states = np.empty((batch, steps + 1) + X.shape[1:])
    states[:, 0] = X
    for k in range(steps):
        common = dW0[:, k] if coeffs.common_dim else None
        t, dt = float(grid.knots[k]), float(grid.dt[k])
        nxt = _euler(coeffs, t, dt, states[:, k], common, dW[:, k])
        bad = ~np.isfinite(nxt).reshape(batch, -1).all(axis=1)
        if bad.any():
            sample = int(np.flatnonzero(bad)[0])
            raise NumericError("non-finite particle state", location=f"sample {sample}, step {k}")
        states[:, k + 1] = nxt
    return PathBatch(states=states, dW=dW, dW0=dW0, seed=seed, stream=stream)


def check_coefficient_symmetry(
    coeffs: Coefficients, t: float, X: np.ndarray, pi: np.ndarray
) -> float:
    """Largest violation of b_i(pi[X]) = b_pi(i)(X) and the matching diffusion identities."""
    moved = X[:, pi]
    worst = float(np.max(np.abs(coeffs.drift(t, moved) - coeffs.drift(t, X)[:, pi])))
    sigma, sigma_moved = coeffs.diffusion(t, X), coeffs.diffusion(t, moved)
    expected = sigma[:, pi][:, :, pi] if coeffs.cross_diffusion else sigma[:, pi]
    worst = max(worst, float(np.max(np.abs(sigma_moved - expected))))
    if coeffs.common is not None:
        common_gap = coeffs.common(t, moved) - coeffs.common(t, X)[:, pi]
        worst = max(worst, float(np.max(np.abs(common_gap))))
    return worst


# ------------------------------------------------------------ initial laws


def dirac_sampler(X0: np.ndarray) -> InitialSampler:
    """Every sample starts from the same configuration ``X0`` of shape ``(N, d)``."""
    X0 = np.asarray(X0, dtype=np.float64)

    def sample(batch: int, rng: np.random.Generator) -> np.ndarray:
        return np.broadcast_to(X0, (batch,) + X0.shape).copy()

    return sample


def gaussian_sampler(n: int, d: int, mean: float, std: float) -> InitialSampler:
    """N i.i.d. particles from N(mean, std^2 I)."""

    def sample(batch: int, rng: np.random.Generator) -> np.ndarray:
        return mean + std * rng.standard_normal((batch, n, d))

    return sample


class RandomizedGaussianLaw:
    """Each batch sample draws its own (mean, std) uniformly, then N i.i.d. Gaussian particles."""

    def __init__(
        self,
        mean_range: Tuple[float, float],
        std_range: Tuple[float, float],
        n: int,
        d: int = 1,
    ):
        if mean_range[0] > mean_range[1] or std_range[0] > std_range[1]:
            raise DomainError("randomized initial law needs ordered ranges")
        if std_range[0] < 0.0:
            raise DomainError("standard deviations must be non-negative")
        self.mean_range = mean_range
        self.std_range = std_range
        self.n = n
        self.d = d

    def draw_parameters(
        self, batch: int, rng: np.random.Generator
    ) -> Tuple[np.ndarray, np.ndarray]:
        means = rng.uniform(self.mean_range[0], self.mean_range[1], batch)
        stds = rng.uniform(self.std_range[0], self.std_range[1], batch)
        return means, stds

    def __call__(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        means, stds = self.draw_parameters(batch, rng)
        noise = rng.standard_normal((batch, self.n, self.d))
        return means[:, None, None] + stds[:, None, None] * noise


def randomized_initial_law(
    mean_range: Tuple[float, float], std_range: Tuple[float, float], n: int, d: int = 1
) -> RandomizedGaussianLaw:
    return RandomizedGaussianLaw(mean_range, std_range, n, d)


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture with diagonal covariances."""

    weights: np.ndarray  # (L,)
    means: np.ndarray  # (L, d)
    variances: np.ndarray  # (L, d)

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    @property
    def variance(self) -> np.ndarray:
        second = self.weights @ (self.variances + self.means**2)
        return second - self.mean**2

    def sample(self, n_points: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.choice(self.n_components, size=n_points, p=self.weights)
        noise = rng.standard_normal((n_points, self.means.shape[1]))
        return self.means[labels] + np.sqrt(self.variances[labels]) * noise


VARIANCE_FLOOR = 1e-4


def draw_mixture(bounds: MixtureBounds, rng: np.random.Generator, dim: int = 1) -> MixtureSpec:
    n_components = int(rng.integers(1, bounds.l_max + 1))
    raw = rng.uniform(0.0, 1.0, n_components)
    weights = raw / raw.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    means = rng.uniform(-bounds.mu_max, bounds.mu_max, (n_components, dim))
    variances = rng.uniform(VARIANCE_FLOOR * bounds.var_max, bounds.var_max, (n_components, dim))
    return MixtureSpec(weights=weights, means=means, variances=variances)


def sample_mixture(
    bounds: MixtureBounds, n_points: int, rng: np.random.Generator, dim: int = 1
) -> Tuple[MixtureSpec, np.ndarray]:
    """A random mixture (L ~ U{1..L_max}, weights U(0,1) normalized, means U(-mu, mu),
    variances U(1e-4 var_max, var_max)) and ``n_points`` i.i.d. samples from it."""
    spec = draw_mixture(bounds, rng, dim)
    return spec, spec.sample(n_points, rng)


class MixtureLaw:
    """Initial sampler drawing a fresh random mixture for every batch sample."""

    def __init__(self, bounds: MixtureBounds, n: int, d: int = 1):
        self.bounds = bounds
        self.n = n
        self.d = d

    def __call__(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        return np.stack([sample_mixture(self.bounds, self.n, rng, self.d)[1] for _ in range(batch)])


# ------------------------------------------------------------------ dump


def dump_paths(paths: PathBatch, path: Union[str, Path]) -> Path:
    """Plain-text table: sample, step, particle, then one column per component."""
    batch, steps, n, d = paths.states.shape
    b, k, i = np.meshgrid(np.arange(batch), np.arange(steps), np.arange(n), indexing="ij")
    table = np.column_stack(
        [b.ravel(), k.ravel(), i.ravel(), paths.states.reshape(-1, d)]
    )
    header = "sample step particle " + " ".join(f"x{c}" for c in range(d))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=["%d", "%d", "%d"] + ["%.10g"] * d, header=header)
    logger.info(f"💾 wrote {table.shape[0]} particle-steps to {path}")
    return path
