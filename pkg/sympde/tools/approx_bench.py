"""Approximation benchmark: fit symmetric and baseline networks to known exchangeable targets."""

import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from rich.console import Console
from rich.progress import Progress

from ..autodiff import Tape, Tensor, constant
from ..errors import ConfigError
from ..nets import (
    NetSpec,
    Weights,
    build,
    derivative_apply,
    feedforward_apply,
    make_layout,
    symmetric_apply,
)
from ..rng import Stream, derive_seed, stream
from ..schemas import (
    ApproxConfig,
    ApproxNetKind,
    DerivativeKind,
    DerivativeNetSpec,
    FeedforwardSpec,
    Pooling,
    SymmetricNetSpec,
)
from ..solver import Budget, minimize

Target = Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]


def _mean(X: np.ndarray) -> np.ndarray:
    return X.mean(axis=(1, 2))


def _scaled_sum(X: np.ndarray) -> np.ndarray:
    return X.sum(axis=(1, 2)) / np.sqrt(X.shape[1])


def _space_1(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    m = _mean(X)
    return np.exp(2.0 * m + 3.0 * m**3)


def _space_2(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    return np.where(X < 0.0, np.sin(X), X).mean(axis=(1, 2))


def _space_3(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    m = X.max(axis=(1, 2))
    return m + 2.0 * m**2 + 3.0 * m**3


def _space_4(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    s = X.sum(axis=(1, 2))
    return np.cos(2.0 * s + 3.0 * s**2)


def _time_1(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    assert t is not None
    m = _mean(X)
    return np.exp(m * (t + 2.0 * t**2) + 3.0 * t * m**3)


def _time_2(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    assert t is not None
    return t + np.cos(t * _scaled_sum(X))


def _grad_1(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    m = _mean(X)
    return np.exp(m + m**3)[:, None, None] * (1.0 + 3.0 * X**2)


def _grad_2(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    return np.where(X > 0.0, 1.0, np.cos(X) * (X < 0.0))


def _grad_3(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    value = np.sin(_scaled_sum(X)) / np.sqrt(X.shape[1])
    return np.broadcast_to(value[:, None, None], X.shape).copy()


def _zero(X: np.ndarray, t: Optional[np.ndarray]) -> np.ndarray:
    return np.zeros(X.shape[0])


@dataclass(frozen=True)
class ApproxCase:
    name: str
    family: str  # "space", "time" or "grad"
    target: Target
    lr_initial: float
    lr_final: float


CASES: Dict[str, ApproxCase] = {
    case.name: case
    for case in (
        ApproxCase("space-1", "space", _space_1, 1e-3, 1e-5),
        ApproxCase("space-2", "space", _space_2, 1e-3, 1e-5),
        ApproxCase("space-3", "space", _space_3, 1e-4, 1e-5),
        ApproxCase("space-4", "space", _space_4, 5e-5, 5e-6),
        ApproxCase("time-1", "time", _time_1, 1e-3, 1e-5),
        ApproxCase("time-2", "time", _time_2, 1e-3, 1e-5),
        ApproxCase("grad-1", "grad", _grad_1, 1e-3, 1e-5),
        ApproxCase("grad-2", "grad", _grad_2, 1e-3, 1e-5),
        ApproxCase("grad-3", "grad", _grad_3, 1e-3, 1e-5),
        ApproxCase("zero", "space", _zero, 1e-3, 1e-5),
    )
}

FAMILY_NETS = {
    "space": {ApproxNetKind.DEEPSET, ApproxNetKind.POINTNET, ApproxNetKind.FEEDFORWARD},
    "time": {ApproxNetKind.TIME_DEEPSET, ApproxNetKind.FEEDFORWARD},
    "grad": {ApproxNetKind.DEEPDERSET, ApproxNetKind.AD_DEEPSET, ApproxNetKind.FEEDFORWARD},
}


@dataclass(frozen=True)
class ApproxBatch:
    X: np.ndarray
    t: Optional[np.ndarray]
    target: np.ndarray


def get_case(name: str) -> ApproxCase:
    if name not in CASES:
        raise ConfigError(f"unknown approximation case {name!r}; choose from {', '.join(CASES)}")
    return CASES[name]


def build_spec(config: ApproxConfig, case: ApproxCase, dim: int = 1) -> NetSpec:
    """Network spec for ``config.net`` sized for ``case``."""
    if config.net not in FAMILY_NETS[case.family]:
        raise ConfigError(f"{config.net.value} cannot approximate {case.family} case {case.name}")
    n = config.n_particles
    act = config.activation
    if config.net is ApproxNetKind.FEEDFORWARD:
        flat = n * dim
        if case.family == "grad":
            widths = [10 + flat] * config.feedforward_depth
            return DerivativeNetSpec.feedforward_baseline(n, dim, widths, act)
        extra = 1 if case.family == "time" else 0
        return FeedforwardSpec.uniform(flat + extra, config.feedforward_depth, 10 + flat, 1, act)
    if config.net is ApproxNetKind.DEEPDERSET:
        return DerivativeNetSpec.deepderset(
            dim, config.phi_widths, config.latent_dim, config.psi_widths, act, Pooling.SUM
        )
    pooling = Pooling.MAX if config.net is ApproxNetKind.POINTNET else Pooling.SUM
    deepset = SymmetricNetSpec.deepset(
        dim,
        config.phi_widths,
        config.latent_dim,
        config.psi_widths,
        output_dim=1,
        activation=act,
        pooling=pooling,
        time_augmented=config.net is ApproxNetKind.TIME_DEEPSET,
    )
    if config.net is ApproxNetKind.AD_DEEPSET:
        return DerivativeNetSpec.ad_deepset(deepset)
    return deepset


class ApproxBenchmark:
    """Trains one approximator on one case and reports the validation error reached."""

    def __init__(self, config: ApproxConfig, seed: int = 0, console: Optional[Console] = None):
        self.config = config
        self.seed = seed
        self.console = console or Console()
        self.case = get_case(config.case)
        self.spec = build_spec(config, self.case)
        self.layout = make_layout(self.spec)

    def draw(self, size: int, rng: np.random.Generator) -> ApproxBatch:
        X = rng.standard_normal((size, self.config.n_particles, 1))
        t = rng.uniform(0.0, 1.0, size) if self.case.family == "time" else None
        return ApproxBatch(X, t, self.case.target(X, t))

    def prediction(self, tape: Tape, theta: Tensor, batch: ApproxBatch) -> Tensor:
        w = Weights(theta, self.layout)
        size = batch.X.shape[0]
        spec = self.spec
        if isinstance(spec, FeedforwardSpec):
            inputs = batch.X.reshape(size, -1)
            if batch.t is not None:
                inputs = np.concatenate([batch.t[:, None], inputs], axis=1)
            return feedforward_apply(spec, w, "ff.", constant(inputs)).reshape(size)
        if isinstance(spec, SymmetricNetSpec):
            t = None if batch.t is None else constant(batch.t[:, None])
            return symmetric_apply(spec, w, constant(batch.X), t).reshape(size)
        x = tape.leaf(batch.X, "x", requires_grad=spec.kind is not DerivativeKind.DEEPDERSET)
        return derivative_apply(spec, w, x, create_graph=True)

    def loss(self, tape: Tape, theta: Tensor, batch: ApproxBatch) -> Tensor:
        r = self.prediction(tape, theta, batch) - batch.target
        return (r * r).mean()

    def run(self) -> Dict[str, Any]:
        c = self.config
        started = time.perf_counter()
        self.console.print(
            f"[bold blue]Approximating {self.case.name} with {c.net.value}, "
            f"N={c.n_particles}...[/bold blue]"
        )
        budget = Budget(
            epochs=c.max_epochs,
            iterations=c.iterations_per_epoch,
            lr_initial=c.lr_initial or self.case.lr_initial,
            lr_final=c.lr_final or self.case.lr_final,
            early_stop=c.threshold,
        )
        init = build(self.spec, derive_seed(self.seed, 0, Stream.INIT), zero=c.zero_init).flat
        rng = stream(self.seed, 0, Stream.APPROX, 0)
        validation = self.draw(c.validation_size, stream(self.seed, 0, Stream.APPROX, 1))
        history: List[Tuple[int, float]] = []

        with Progress(console=self.console) as progress:
            task = progress.add_task("Outer epochs...", total=c.max_epochs)

            def on_epoch(epoch: int, validation_mse: float) -> None:
                history.append((epoch + 1, validation_mse))
                progress.update(task, advance=1, description=f"MSE {validation_mse:.2e}")

            _, diagnostics = minimize(
                self.loss,
                init,
                lambda: self.draw(c.batch_size, rng),
                validation,
                budget,
                on_epoch=on_epoch,
            )

        if not history:
            history.append((0, diagnostics.initial_validation_loss))
        reached = diagnostics.validation_loss <= c.threshold
        if not reached:
            logger.warning(
                f"{self.case.name}: threshold {c.threshold:g} not reached "
                f"after {diagnostics.epochs} epochs"
            )
        return {
            "status": "success",
            "case": self.case.name,
            "net": c.net.value,
            "n_particles": c.n_particles,
            "validation_mse": diagnostics.validation_loss,
            "initial_mse": diagnostics.initial_validation_loss,
            "epochs": diagnostics.epochs,
            "iterations": diagnostics.iterations,
            "threshold_reached": reached,
            "n_params": self.spec.n_params,
            "wall_s": round(time.perf_counter() - started, 2),
            "history": history,
        }


def main() -> None:
    """CLI entry point for a single approximation run."""
    import typer

    def approx(
        case: str = typer.Option("space-1", "--case", help="Target case"),
        net: ApproxNetKind = typer.Option(ApproxNetKind.DEEPSET, "--net", help="Approximator"),
        n_particles: int = typer.Option(100, "--n", help="Number of particles"),
        max_epochs: int = typer.Option(200, "--max-epochs", help="Outer epoch budget"),
        seed: int = typer.Option(0, "--seed", help="Random seed"),
    ) -> None:
        """Fit one network to one target."""
        console = Console()
        try:
            config = ApproxConfig(
                case=case, net=net, n_particles=n_particles, max_epochs=max_epochs
            )
            result = ApproxBenchmark(config, seed=seed, console=console).run()
        except ConfigError as e:
            console.print(f"[bold red]❌ {e}[/bold red]")
            raise typer.Exit(2)
        console.print(f"[bold green]✅ {result['case']} / {result['net']}[/bold green]")
        console.print(f"📉 Validation MSE: {result['validation_mse']:.3e}")
        console.print(f"🔁 Outer epochs: {result['epochs']}")
        console.print(f"⏱️  Time: {result['wall_s']}s")

    app = typer.Typer()
    app.command()(approx)
    app()


if __name__ == "__main__":
    main()
