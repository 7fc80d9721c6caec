"""Backward deep dynamic programming with symmetric networks.

At every time step k, going backward from the terminal condition, a value
net U_k and a derivative net Z_k are fitted by ADAM to the one-step BSDE
residual

    U_{k+1}(X_{k+1}) - U_k(X_k) + H(t_k, X_k, U_k, Z_k) dt_k - sum_i Z_k(X_k, x_i) . noise_i

where noise_i = sum_j sigma_ij dW^j + sigma_i0 dW^0. The fully nonlinear
variant replaces H by a driver that also consumes the diagonal Hessian
blocks of Z_{k+1} at X_{k+1}.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .autodiff import Tape, Tensor, as_tensor, constant, grad
from .checkpoints import CheckpointStore
from .errors import ConfigError, NumericError, StructuralError, UnsupportedError
from .nets import (
    NetParams,
    Weights,
    build,
    derivative_apply,
    derivative_forward,
    feedforward_apply,
    make_layout,
    symmetric_apply,
    value_forward,
    z_diag_derivative,
)
from .optim import AdamState, LinearSchedule, adam_step
from .particles import (
    Coefficients,
    InitialSampler,
    MixtureLaw,
    PathBatch,
    TimeGrid,
    euler_step,
    simulate_batch,
)
from .problems import FullyNonlinearDriver, ProblemSpec, SemilinearDriver
from .rng import Stream, derive_seed, stream
from .schemas import (
    DerivativeMode,
    DerivativeNetSpec,
    FeedforwardSpec,
    MixtureBounds,
    NetConfig,
    SolveConfig,
    SymmetricNetSpec,
)

FD_STEP = 1e-5


# ------------------------------------------------------------------ losses


@dataclass(frozen=True)
class StepBatch:
    """One time step of simulated data: states, increments and next-step targets."""

    t: float
    dt: float
    X: np.ndarray  # (batch, N, d)
    X_next: np.ndarray
    dW: np.ndarray
    dW0: Optional[np.ndarray] = None  # (batch, q)
    y_next: Optional[np.ndarray] = None  # U_{k+1}(X_{k+1}), (batch,)
    gamma_next: Optional[np.ndarray] = None  # diagonal blocks of DZ_{k+1}, (batch, N, d, d)

    @classmethod
    def from_paths(cls, paths: PathBatch, grid: TimeGrid, k: int) -> "StepBatch":
        common = paths.dW0.shape[-1] > 0
        return cls(
            t=float(grid.knots[k]),
            dt=float(grid.dt[k]),
            X=paths.states[:, k],
            X_next=paths.states[:, k + 1],
            dW=paths.dW[:, k],
            dW0=paths.dW0[:, k] if common else None,
        )

    @property
    def size(self) -> int:
        return self.X.shape[0]

    def permuted(self, pi: np.ndarray) -> "StepBatch":
        """Particles and their idiosyncratic increments permuted jointly in every sample."""
        gamma = None if self.gamma_next is None else self.gamma_next[:, pi]
        return replace(
            self, X=self.X[:, pi], X_next=self.X_next[:, pi], dW=self.dW[:, pi], gamma_next=gamma
        )


def truncate(X: np.ndarray, quantile: float) -> np.ndarray:
    """Clamp each component to its empirical [1 - q, q] quantile range over batch and particles."""
    if quantile >= 1.0:
        return X
    lo = np.quantile(X, 1.0 - quantile, axis=(0, 1))
    hi = np.quantile(X, quantile, axis=(0, 1))
    return np.clip(X, lo, hi)


def truncate_step(batch: StepBatch, coefficients: Coefficients, quantile: float) -> StepBatch:
    """Clamp the states and redo the Euler step of every sample that moved, so
    X_next = X + b dt + sigma dW still holds with the stored increments."""
    X = truncate(batch.X, quantile)
    moved = np.any(X != batch.X, axis=(1, 2))
    if not moved.any():
        return batch
    X_next = batch.X_next.copy()
    dW0 = None if batch.dW0 is None else batch.dW0[moved]
    X_next[moved] = euler_step(coefficients, batch.t, batch.dt, X[moved], dW0, batch.dW[moved])
    return replace(batch, X=X, X_next=X_next)


def _check_batch(batch: StepBatch, U: Tensor, Z: Tensor) -> None:
    if batch.y_next is None:
        raise StructuralError("batch carries no next-step values")
    B = batch.size
    if U.shape != (B,) or Z.shape != batch.X.shape or batch.y_next.shape != (B,):
        raise StructuralError(
            f"residual shapes disagree: U {U.shape}, Z {Z.shape}, X {batch.X.shape}, "
            f"next {batch.y_next.shape}"
        )
    if batch.dW.shape != batch.X.shape or batch.X_next.shape != batch.X.shape:
        raise StructuralError("increments or next states do not match the states")


def _martingale(batch: StepBatch, coefficients: Coefficients, Z: Tensor) -> Tensor:
    noise = coefficients.noise(batch.t, batch.X, batch.dW, batch.dW0)
    return (Z * noise).sum(axis=(1, 2))


def semilinear_residual(
    batch: StepBatch, coefficients: Coefficients, driver: SemilinearDriver, U: Any, Z: Any
) -> Tensor:
    U, Z = as_tensor(U), as_tensor(Z)
    _check_batch(batch, U, Z)
    H = driver(batch.t, batch.X, U, Z)
    return batch.y_next - U + H * batch.dt - _martingale(batch, coefficients, Z)


def loss_semilinear(
    batch: StepBatch, coefficients: Coefficients, driver: SemilinearDriver, U: Any, Z: Any
) -> Tensor:
    """Mean squared one-step residual with a semilinear driver H(t, X, y, Z)."""
    r = semilinear_residual(batch, coefficients, driver, U, Z)
    return (r * r).mean()


def loss_fullynonlinear(
    batch: StepBatch,
    coefficients: Coefficients,
    driver: FullyNonlinearDriver,
    U: Any,
    Z: Any,
    gamma_floor: float,
) -> Tensor:
    """As the semilinear loss, with the driver fed the Gamma blocks carried by the batch."""
    U, Z = as_tensor(U), as_tensor(Z)
    _check_batch(batch, U, Z)
    if batch.gamma_next is None:
        raise StructuralError("fully nonlinear loss needs the next-step Gamma blocks")
    H = driver(batch.t, batch.X, U, Z, batch.gamma_next, gamma_floor)
    r = batch.y_next - U + H * batch.dt - _martingale(batch, coefficients, Z)
    return (r * r).mean()


# -------------------------------------------------------------- step model


class StepModel:
    """Value and derivative nets of one time step over a single flat parameter vector.

    With ``ad_self`` the derivative is the gradient of the value net and the
    vector holds the value parameters only.
    """

    def __init__(
        self,
        value_spec: Union[SymmetricNetSpec, FeedforwardSpec],
        mode: DerivativeMode,
        derivative_spec: DerivativeNetSpec,
    ):
        self.value_spec = value_spec
        self.mode = mode
        self.derivative_spec = derivative_spec
        self.value_layout = make_layout(value_spec)
        self.derivative_layout = make_layout(derivative_spec)
        self.n_value = value_spec.n_params
        self.n_derivative = 0 if mode is DerivativeMode.AD_SELF else derivative_spec.n_params

    @classmethod
    def from_config(
        cls, net: NetConfig, dim: int, n_particles: Optional[int] = None
    ) -> "StepModel":
        try:
            value = net.value_spec(dim, n_particles)
            return cls(value, net.derivative, net.derivative_spec(dim, n_particles))
        except ValueError as e:
            raise ConfigError(f"invalid network configuration: {e}") from e

    @property
    def n_params(self) -> int:
        return self.n_value + self.n_derivative

    @property
    def needs_x_grad(self) -> bool:
        return self.mode is not DerivativeMode.DEEPDERSET

    def init(self, seed: int) -> np.ndarray:
        parts = [build(self.value_spec, seed).flat]
        if self.n_derivative:
            parts.append(build(self.derivative_spec, seed + 1).flat)
        return np.concatenate(parts)

    def split(self, flat: np.ndarray) -> Tuple[NetParams, NetParams]:
        if flat.shape != (self.n_params,):
            raise StructuralError(
                f"step parameters have shape {flat.shape}, expected ({self.n_params},)"
            )
        value = NetParams(self.value_spec, flat[: self.n_value].copy(), self.value_layout)
        tail = flat[: self.n_value] if self.mode is DerivativeMode.AD_SELF else flat[self.n_value :]
        return value, NetParams(self.derivative_spec, tail.copy(), self.derivative_layout)

    @property
    def dense(self) -> bool:
        return isinstance(self.value_spec, FeedforwardSpec)

    def value_graph(self, theta: Tensor, x: Tensor) -> Tensor:
        """U over a batch of configurations, ``(batch, N, d) -> (batch,)``."""
        w = Weights(theta, self.value_layout)
        batch = x.shape[0]
        if isinstance(self.value_spec, FeedforwardSpec):
            return feedforward_apply(self.value_spec, w, "ff.", x.reshape(batch, -1)).reshape(batch)
        return symmetric_apply(self.value_spec, w, x).reshape(batch)

    def graph(self, theta: Tensor, x: Tensor) -> Tuple[Tensor, Tensor]:
        """U_k(X) of shape (batch,) and Z_k(X, x_i) of shape (batch, N, d)."""
        batch = x.shape[0]
        U = self.value_graph(theta[: self.n_value], x)
        if self.mode is DerivativeMode.AD_SELF:
            (Z,) = grad(U.sum(), [x], create_graph=True)
        else:
            w = Weights(theta[self.n_value :], self.derivative_layout)
            Z = derivative_apply(self.derivative_spec, w, x, create_graph=True)
        return U.reshape(batch), Z


# --------------------------------------------------------------- training


@dataclass(frozen=True)
class Budget:
    """Outer epochs of ``iterations`` ADAM steps each, with a linear learning-rate decay."""

    epochs: int
    iterations: int
    lr_initial: float
    lr_final: float
    early_stop: Optional[float] = None

    @property
    def max_iterations(self) -> int:
        return self.epochs * self.iterations


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    train_loss: float
    validation_loss: float
    initial_validation_loss: float
    epochs: int
    iterations: int
    wall_s: float


LossGraph = Callable[[Tape, Tensor, Any], Tensor]


def loss_and_gradient(
    loss_graph: LossGraph, flat: np.ndarray, batch: Any
) -> Tuple[float, np.ndarray]:
    tape = Tape()
    theta = tape.leaf(flat, "theta")
    loss = loss_graph(tape, theta, batch)
    (g,) = grad(loss, [theta])
    return loss.item(), g.numpy()


def loss_value(loss_graph: LossGraph, flat: np.ndarray, batch: Any) -> float:
    tape = Tape()
    theta = tape.leaf(flat, "theta", requires_grad=False)
    return loss_graph(tape, theta, batch).item()


def minimize(
    loss_graph: LossGraph,
    flat: np.ndarray,
    draw: Callable[[], Any],
    validation: Any,
    budget: Budget,
    step: int = 0,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Tuple[np.ndarray, StepDiagnostics]:
    """ADAM over ``budget``; validation after every epoch, early stop below the threshold."""
    started = time.perf_counter()
    schedule = LinearSchedule(
        initial=budget.lr_initial, final=budget.lr_final, budget=budget.max_iterations
    )
    state = AdamState.fresh(flat.size, schedule)
    initial_validation = loss_value(loss_graph, flat, validation)
    validation_loss = initial_validation
    train_loss = float("nan")
    epochs_used = 0
    already_below = budget.early_stop is not None and initial_validation <= budget.early_stop
    for epoch in range(0 if already_below else budget.epochs):
        losses = []
        for iteration in range(budget.iterations):
            try:
                loss, g = loss_and_gradient(loss_graph, flat, draw())
                flat, state = adam_step(flat, g, state)
            except NumericError as e:
                logger.error(f"step {step} aborted at epoch {epoch}, iteration {iteration}: {e}")
                where = f"step {step}, epoch {epoch}, iteration {iteration}"
                raise NumericError(str(e), location=where) from e
            losses.append(loss)
        train_loss = float(np.mean(losses))
        validation_loss = loss_value(loss_graph, flat, validation)
        epochs_used = epoch + 1
        logger.debug(
            f"step {step} epoch {epoch}: train {train_loss:.3e}, validation {validation_loss:.3e}"
        )
        if on_epoch is not None:
            on_epoch(epoch, validation_loss)
        if budget.early_stop is not None and validation_loss <= budget.early_stop:
            break
    return flat, StepDiagnostics(
        step=step,
        train_loss=train_loss,
        validation_loss=validation_loss,
        initial_validation_loss=initial_validation,
        epochs=epochs_used,
        iterations=state.step,
        wall_s=time.perf_counter() - started,
    )


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class TrainedStep:
    value: NetParams
    derivative: NetParams
    diagnostics: StepDiagnostics


@dataclass
class StepSolution:
    """Trained nets for k = 0..N_T-1; step N_T is the terminal condition itself."""

    problem: ProblemSpec
    grid: TimeGrid
    steps: List[Optional[TrainedStep]]
    terminal_value: Optional[NetParams] = None
    terminal_derivative: Optional[NetParams] = None

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def time(self, k: int) -> float:
        return float(self.grid.knots[k])

    def _trained(self, k: int) -> TrainedStep:
        if not 0 <= k < self.n_steps:
            raise StructuralError(f"step {k} outside 0..{self.n_steps - 1}")
        step = self.steps[k]
        if step is None:
            raise StructuralError(f"step {k} has not been trained")
        return step

    def value(self, k: int, X: np.ndarray) -> np.ndarray:
        """U_k over a batch ``(batch, N, d) -> (batch,)``."""
        if k == self.n_steps:
            if self.terminal_value is not None:
                return value_forward(self.terminal_value, X)
            return self.problem.terminal(X)
        return value_forward(self._trained(k).value, X)

    def derivative(self, k: int, X: np.ndarray) -> np.ndarray:
        if k == self.n_steps:
            if self.terminal_derivative is not None:
                return derivative_forward(self.terminal_derivative, X)
            if self.problem.terminal_gradient is None:
                raise UnsupportedError(f"{self.problem.name} has no terminal gradient")
            return self.problem.terminal_gradient(X)
        return derivative_forward(self._trained(k).derivative, X)

    def gamma(self, k: int, X: np.ndarray) -> np.ndarray:
        """Diagonal blocks of DZ_k at the particles, ``(batch, N, d, d)``."""
        if k == self.n_steps:
            if self.terminal_derivative is not None:
                return z_diag_derivative(self.terminal_derivative, X)
            if self.problem.terminal_gamma is None:
                raise UnsupportedError(
                    f"{self.problem.name} has no terminal Gamma; project the terminal condition"
                )
            return self.problem.terminal_gamma(X)
        return z_diag_derivative(self._trained(k).derivative, X)

    def derivative_net(self, k: int) -> NetParams:
        return self._trained(k).derivative

    @property
    def diagnostics(self) -> List[StepDiagnostics]:
        return [s.diagnostics for s in self.steps if s is not None]


@dataclass(frozen=True)
class RunReport:
    """Summary of one run at the first grid time."""

    problem: str
    n_particles: int
    n_steps: int
    run: int
    seed: int
    u0: float
    z0_mean: float
    z0_norm: float
    reference: Optional[float]
    finite_n_reference: Optional[float]
    wall_s: float
    steps: Tuple[StepDiagnostics, ...] = ()

    @property
    def z0_lions(self) -> float:
        return self.n_particles * self.z0_mean

    @property
    def rel_error(self) -> Optional[float]:
        if self.reference is None or self.reference == 0.0:
            return None
        return abs(self.u0 - self.reference) / abs(self.reference)


# ------------------------------------------------------------------ solver


def finite_difference_gradient(
    G: Callable[[np.ndarray], np.ndarray], X: np.ndarray, step: float = FD_STEP
) -> np.ndarray:
    """Central differences of G with respect to every particle component."""
    out = np.empty_like(X)
    for i in range(X.shape[1]):
        for c in range(X.shape[2]):
            up, down = X.copy(), X.copy()
            up[:, i, c] += step
            down[:, i, c] -= step
            out[:, i, c] = (G(up) - G(down)) / (2.0 * step)
    return out


@dataclass(frozen=True)
class RegressionBatch:
    X: np.ndarray
    target: np.ndarray


class BackwardSolver:
    """Runs the backward loop for one problem, one config and one run index."""

    def __init__(
        self,
        problem: ProblemSpec,
        net: NetConfig,
        config: SolveConfig,
        run: int = 0,
        store: Optional[CheckpointStore] = None,
        exploration: Optional[MixtureBounds] = None,
        initial_sampler: Optional[InitialSampler] = None,
        manifest: Optional[Mapping[str, Any]] = None,
    ):
        if problem.semilinear == problem.fully_nonlinear:
            raise ConfigError(
                f"{problem.name} must define exactly one of a semilinear or fully nonlinear driver"
            )
        if exploration is not None and not problem.semilinear:
            raise ConfigError("exploration runs need a semilinear problem")
        self.problem = problem
        self.config = config
        self.run = run
        self.store = store
        self.exploration = exploration
        self.manifest = dict(manifest or {})
        horizon = config.horizon or problem.horizon
        self.grid = TimeGrid.uniform(horizon, config.n_steps, config.start)
        self.model = StepModel.from_config(net, problem.dim, problem.n_particles)
        if problem.fully_nonlinear and self.model.dense:
            raise ConfigError(
                "the fully nonlinear scheme needs the Gamma blocks of a symmetric derivative net"
            )
        if problem.fully_nonlinear and not self.model.derivative_spec.smooth:
            raise ConfigError(
                "ReLU on the differentiated path: "
                "the fully nonlinear scheme needs a smooth derivative net"
            )
        if initial_sampler is not None:
            self.initial_sampler = initial_sampler
        elif config.start > 0.0:
            if problem.optimal_law is None:
                raise UnsupportedError(
                    f"{problem.name} has no optimal law to start from at t={config.start}"
                )
            self.initial_sampler = problem.optimal_law(config.start)
        else:
            self.initial_sampler = problem.initial_sampler
        self.gamma_floor = config.gamma_floor * problem.gamma_scale

    # sampling

    def _sample(self, k: int, size: int, rng: np.random.Generator) -> StepBatch:
        coeffs = self.problem.coefficients
        if self.exploration is not None:
            t, dt = float(self.grid.knots[k]), float(self.grid.dt[k])
            X = MixtureLaw(self.exploration, self.problem.n_particles, self.problem.dim)(size, rng)
            dW = rng.standard_normal(X.shape) * np.sqrt(dt)
            dW0 = None
            if coeffs.common_dim:
                dW0 = rng.standard_normal((size, coeffs.common_dim)) * np.sqrt(dt)
            X_next = euler_step(coeffs, t, dt, X, dW0, dW)
            return StepBatch(t=t, dt=dt, X=X, X_next=X_next, dW=dW, dW0=dW0)
        paths = simulate_batch(coeffs, self.grid.prefix(k + 1), self.initial_sampler, size, rng)
        return StepBatch.from_paths(paths, self.grid, k)

    def _prepare(self, k: int, batch: StepBatch, solution: StepSolution) -> StepBatch:
        if self.problem.fully_nonlinear:
            batch = truncate_step(batch, self.problem.coefficients, self.config.truncation_quantile)
            gamma = solution.gamma(k + 1, batch.X_next)
            floored = int(np.sum(np.diagonal(gamma, axis1=-2, axis2=-1) < self.gamma_floor))
            if floored:
                logger.warning(f"step {k}: gamma floor active on {floored} particle blocks")
            batch = replace(batch, gamma_next=gamma)
        return replace(batch, y_next=solution.value(k + 1, batch.X_next))

    def _draw_terminal_states(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.exploration is not None:
            law = MixtureLaw(self.exploration, self.problem.n_particles, self.problem.dim)
            return law(size, rng)
        paths = simulate_batch(
            self.problem.coefficients, self.grid, self.initial_sampler, size, rng
        )
        return paths.states[:, -1]

    # losses

    def _loss_graph(self, tape: Tape, theta: Tensor, batch: StepBatch) -> Tensor:
        x = tape.leaf(batch.X, "x", requires_grad=self.model.needs_x_grad)
        U, Z = self.model.graph(theta, x)
        coeffs = self.problem.coefficients
        if self.problem.driver is not None:
            return loss_semilinear(batch, coeffs, self.problem.driver, U, Z)
        assert self.problem.nonlinear_driver is not None
        return loss_fullynonlinear(
            batch, coeffs, self.problem.nonlinear_driver, U, Z, self.gamma_floor
        )

    # steps

    def _budget(self, first: bool, epochs: Optional[int] = None) -> Budget:
        c = self.config
        return Budget(
            epochs=epochs or (c.first_step_epochs if first else c.step_epochs),
            iterations=c.iterations_per_epoch,
            lr_initial=c.lr_first if first else c.lr_later,
            lr_final=c.lr_final,
            early_stop=c.early_stop,
        )

    def train_step(
        self, k: int, init: np.ndarray, solution: StepSolution, first: bool
    ) -> Tuple[np.ndarray, StepDiagnostics]:
        """Fit (U_k, Z_k) against the already trained step k+1."""
        c = self.config
        rng = stream(c.seed, self.run, Stream.TRAIN, k)
        val_rng = stream(c.seed, self.run, Stream.VALIDATION, k)
        validation = self._prepare(k, self._sample(k, c.validation_size, val_rng), solution)
        return minimize(
            self._loss_graph,
            init,
            lambda: self._prepare(k, self._sample(k, c.batch_size, rng), solution),
            validation,
            self._budget(first),
            step=k,
        )

    def project_terminal(self, solution: StepSolution) -> None:
        """Fit the terminal value net to G, or for the fully nonlinear scheme the
        terminal derivative net to central differences of G."""
        c = self.config
        n = self.problem.n_particles
        budget = self._budget(True, epochs=c.terminal_epochs)
        last = self.grid.n_steps
        rng = stream(c.seed, self.run, Stream.TRAIN, last)
        val_rng = stream(c.seed, self.run, Stream.VALIDATION, last)
        seed = derive_seed(c.seed, self.run, Stream.INIT, last)
        G = self.problem.terminal

        if self.problem.semilinear:
            spec, layout = self.model.value_spec, self.model.value_layout

            def value_graph(tape: Tape, theta: Tensor, batch: RegressionBatch) -> Tensor:
                U = self.model.value_graph(theta, constant(batch.X))
                r = U - batch.target
                return (r * r).mean()

            def draw_value(size: int, gen: np.random.Generator) -> RegressionBatch:
                X = self._draw_terminal_states(size, gen)
                return RegressionBatch(X, G(X))

            flat, diag = minimize(
                value_graph,
                build(spec, seed).flat,
                lambda: draw_value(c.batch_size, rng),
                draw_value(c.validation_size, val_rng),
                budget,
                step=last,
            )
            solution.terminal_value = NetParams(spec, flat, layout)
        else:
            dspec, dlayout = self.model.derivative_spec, self.model.derivative_layout
            needs_x = self.model.needs_x_grad

            def derivative_graph(tape: Tape, theta: Tensor, batch: RegressionBatch) -> Tensor:
                x = tape.leaf(batch.X, "x", requires_grad=needs_x)
                Z = derivative_apply(dspec, Weights(theta, dlayout), x, create_graph=True)
                r = (Z - batch.target) * n
                return (r * r).sum(axis=(1, 2)).mean() / n

            def draw_derivative(size: int, gen: np.random.Generator) -> RegressionBatch:
                X = self._draw_terminal_states(size, gen)
                return RegressionBatch(X, finite_difference_gradient(G, X))

            flat, diag = minimize(
                derivative_graph,
                build(dspec, seed).flat,
                lambda: draw_derivative(c.batch_size, rng),
                draw_derivative(c.validation_size, val_rng),
                budget,
                step=last,
            )
            solution.terminal_derivative = NetParams(dspec, flat, dlayout)
        logger.info(
            f"🎯 terminal projection: validation {diag.validation_loss:.3e} "
            f"after {diag.iterations} iterations"
        )

    def solve(self) -> Tuple[StepSolution, RunReport]:
        c = self.config
        started = time.perf_counter()
        n_steps = self.grid.n_steps
        solution = StepSolution(self.problem, self.grid, [None] * n_steps)
        needs_projection = self.problem.fully_nonlinear and (
            self.problem.terminal_gradient is None or self.problem.terminal_gamma is None
        )
        projected = c.project_terminal or needs_projection
        if projected:
            self.project_terminal(solution)

        previous: Optional[np.ndarray] = None
        for k in reversed(range(n_steps)):
            first = k == n_steps - 1 and not projected
            if c.warm_start and previous is not None:
                init = previous
            else:
                init_step = 0 if c.warm_start else k
                init = self.model.init(derive_seed(c.seed, self.run, Stream.INIT, init_step))
                if c.warm_start and solution.terminal_value is not None:
                    init[: self.model.n_value] = solution.terminal_value.flat
            flat, diag = self.train_step(k, init, solution, first)
            value, derivative = self.model.split(flat)
            solution.steps[k] = TrainedStep(value, derivative, diag)
            logger.info(
                f"step {k}: train {diag.train_loss:.3e}, validation {diag.validation_loss:.3e}, "
                f"{diag.epochs} epochs"
            )
            if self.store is not None:
                self.store.save(k, "value", value)
                if self.model.mode is not DerivativeMode.AD_SELF:
                    self.store.save(k, "derivative", derivative)
            previous = flat

        report = self.report(solution, time.perf_counter() - started)
        if self.store is not None:
            self.store.write_manifest(self._manifest(report))
        return solution, report

    def report(self, solution: StepSolution, wall_s: float) -> RunReport:
        c = self.config
        X = self.initial_sampler(c.eval_size, stream(c.seed, self.run, Stream.EVALUATION))
        U = solution.value(0, X)
        Z = solution.derivative(0, X)
        t0 = self.grid.start
        reference = finite = None
        if self.problem.value_reference is not None:
            reference = float(np.mean(self.problem.value_reference(t0, X)))
        if self.problem.finite_n_value is not None:
            finite = float(np.mean(self.problem.finite_n_value(t0, X)))
        return RunReport(
            problem=self.problem.name,
            n_particles=self.problem.n_particles,
            n_steps=self.grid.n_steps,
            run=self.run,
            seed=c.seed,
            u0=float(np.mean(U)),
            z0_mean=float(np.mean(Z)),
            z0_norm=float(np.mean(np.linalg.norm(Z.reshape(Z.shape[0], -1), axis=1))),
            reference=reference,
            finite_n_reference=finite,
            wall_s=wall_s,
            steps=tuple(solution.diagnostics),
        )

    def _manifest(self, report: RunReport) -> Dict[str, Any]:
        entries: Dict[str, Any] = dict(self.manifest)
        entries.update(
            {
                "problem": report.problem,
                "run": report.run,
                "seed": report.seed,
                "n_steps": report.n_steps,
                "u0": report.u0,
                "z0_lions": report.z0_lions,
            }
        )
        for d in report.steps:
            entries[f"step.{d.step}.train_loss"] = d.train_loss
            entries[f"step.{d.step}.validation_loss"] = d.validation_loss
            entries[f"step.{d.step}.epochs"] = d.epochs
        return entries


def solve_semilinear(
    problem: ProblemSpec,
    net: NetConfig,
    config: SolveConfig,
    run: int = 0,
    store: Optional[CheckpointStore] = None,
) -> Tuple[StepSolution, RunReport]:
    if not problem.semilinear:
        raise ConfigError(f"{problem.name} is fully nonlinear; use the fully nonlinear solver")
    return BackwardSolver(problem, net, config, run, store).solve()


def solve_fullynonlinear(
    problem: ProblemSpec,
    net: NetConfig,
    config: SolveConfig,
    run: int = 0,
    store: Optional[CheckpointStore] = None,
) -> Tuple[StepSolution, RunReport]:
    if not problem.fully_nonlinear:
        raise ConfigError(f"{problem.name} is semilinear; use the semilinear solver")
    return BackwardSolver(problem, net, config, run, store).solve()


def solve_with_exploration(
    problem: ProblemSpec,
    net: NetConfig,
    config: SolveConfig,
    bounds: MixtureBounds,
    run: int = 0,
    store: Optional[CheckpointStore] = None,
) -> Tuple[StepSolution, RunReport]:
    """Every step trains on fresh random Gaussian mixtures pushed one Euler step forward."""
    return BackwardSolver(problem, net, config, run, store, exploration=bounds).solve()


# ----------------------------------------------------------------- control


def feedback_control(
    problem: ProblemSpec,
    Z_params: NetParams,
    X: np.ndarray,
    t: float = 0.0,
    i: Optional[int] = None,
) -> np.ndarray:
    """a(t, x_i, empirical law of X, N Z(X, x_i)) for every particle, or particle ``i`` only."""
    if problem.feedback is None:
        raise UnsupportedError(f"{problem.name} provides no feedback map")
    n = problem.n_particles
    z = n * derivative_forward(Z_params, X)
    gamma = None
    if problem.fully_nonlinear:
        gamma = n * np.diagonal(z_diag_derivative(Z_params, X), axis1=-2, axis2=-1)
    actions = problem.feedback(t, np.asarray(X, dtype=np.float64), z, gamma)
    return actions if i is None else actions[..., i, :]


def controlled_drift(
    problem: ProblemSpec, Z_params: NetParams, t: float, X: np.ndarray
) -> np.ndarray:
    """Drift of the true dynamics under the learned feedback at ``t``."""
    if problem.dynamics is None:
        raise UnsupportedError(f"{problem.name} provides no controlled dynamics")
    return problem.dynamics.drift(t, X, feedback_control(problem, Z_params, X, t))


def simulate_controlled(
    problem: ProblemSpec,
    grid: TimeGrid,
    controls: Sequence[NetParams],
    sampler: InitialSampler,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """States ``(size, len(controls) + 1, N, d)`` under the learned feedback at each grid time."""
    if problem.dynamics is None:
        raise UnsupportedError(f"{problem.name} provides no controlled dynamics")
    if problem.coefficients.common_dim > 0:
        raise UnsupportedError(
            f"{problem.name} has common noise; "
            "controlled dynamics only carry idiosyncratic increments"
        )
    X = sampler(size, rng)
    states = [X]
    for j, Z_params in enumerate(controls):
        t, dt = float(grid.knots[j]), float(grid.dt[j])
        a = feedback_control(problem, Z_params, X, t)
        dW = rng.standard_normal(X.shape) * np.sqrt(dt)
        X = X + problem.dynamics.drift(t, X, a) * dt + problem.dynamics.volatility(t, X, a) * dW
        if not np.all(np.isfinite(X)):
            raise NumericError(
                "controlled dynamics produced a non-finite state", location=f"step {j}"
            )
        states.append(X)
    return np.stack(states, axis=1)


@dataclass
class PolicyReport:
    """Learned controls at every grid time and moments of the induced trajectory."""

    times: np.ndarray
    controls: List[NetParams]
    reports: List[RunReport]
    mean_path: np.ndarray
    mean_stderr: np.ndarray
    variance_path: np.ndarray
    control_rmse: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = field(default=None, repr=False)


def policy_forward_induction(
    problem: ProblemSpec, net: NetConfig, config: SolveConfig, run: int = 0
) -> PolicyReport:
    """N_T successive solves; solve j starts from the law induced by the controls learned so far."""
    if not problem.semilinear:
        raise ConfigError("policy induction needs a semilinear problem")
    if problem.feedback is None or problem.dynamics is None:
        raise UnsupportedError(f"{problem.name} provides no feedback map or controlled dynamics")
    horizon = config.horizon or problem.horizon
    grid = TimeGrid.uniform(horizon, config.n_steps, config.start)
    base = problem.initial_sampler if config.start == 0.0 else None
    if base is None:
        if problem.optimal_law is None:
            raise UnsupportedError(f"{problem.name} has no law to start from at t={config.start}")
        base = problem.optimal_law(config.start)

    controls: List[NetParams] = []
    reports: List[RunReport] = []
    for j in range(grid.n_steps):
        learned = list(controls)

        def induced(
            size: int, rng: np.random.Generator, learned: List[NetParams] = learned
        ) -> np.ndarray:
            return simulate_controlled(problem, grid, learned, base, size, rng)[:, -1]

        sub = config.model_copy(
            update={"n_steps": grid.n_steps - j, "start": float(grid.knots[j]), "horizon": horizon}
        )
        solution, report = BackwardSolver(problem, net, sub, run, initial_sampler=induced).solve()
        controls.append(solution.derivative_net(0))
        reports.append(report)
        logger.info(f"🧭 policy step {j}: U={report.u0:.5f} at t={grid.knots[j]:.3f}")

    rng = stream(config.seed, run, Stream.POLICY)
    states = simulate_controlled(problem, grid, controls, base, config.eval_size, rng)
    means = states.mean(axis=(2, 3))
    variances = states.var(axis=2).sum(axis=-1)
    control_rmse = None
    if problem.analytic_control is not None:
        errors = []
        for j in range(grid.n_steps):
            t_j = float(grid.knots[j])
            learned_a = feedback_control(problem, controls[j], states[:, j], t_j)
            exact_a = problem.analytic_control(t_j, states[:, j])
            errors.append(np.sqrt(np.mean((learned_a - exact_a) ** 2)))
        control_rmse = np.array(errors)
    return PolicyReport(
        times=grid.knots.copy(),
        controls=controls,
        reports=reports,
        mean_path=means.mean(axis=0),
        mean_stderr=means.std(axis=0, ddof=1) / np.sqrt(max(means.shape[0], 1)),
        variance_path=variances.mean(axis=0),
        control_rmse=control_rmse,
        states=states,
    )
