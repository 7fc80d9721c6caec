"""Schema definitions for networks, solver settings and experiment configs."""

from enum import Enum
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    """Base for config models: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class Activation(str, Enum):
    """Elementwise activations available to every layer."""

    RELU = "relu"
    TANH = "tanh"
    ELU = "elu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    @property
    def smooth(self) -> bool:
        return self is not Activation.RELU


class Pooling(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    MAX = "max"


class DerivativeKind(str, Enum):
    """Families of networks approximating the particle gradient."""

    DEEPDERSET = "deepderset"
    AD_DEEPSET = "ad_deepset"
    FEEDFORWARD = "feedforward"
    AD_FEEDFORWARD = "ad_feedforward"  # gradient of a dense scalar net on the flattened N*d inputs


class ValueNet(str, Enum):
    """Value-net family of the backward solver."""

    DEEPSET = "deepset"
    FEEDFORWARD = "feedforward"  # dense baseline on the flattened N*d inputs


class DerivativeMode(str, Enum):
    """How the backward solver obtains Z_k."""

    AD_SELF = "ad_self"  # gradient of the value net itself
    AD_SECOND = "ad_second"  # gradient of a second DeepSet
    DEEPDERSET = "deepderset"


class Command(str, Enum):
    SOLVE = "solve"
    SOLVE_FNL = "solve-fnl"
    EXPLORE = "explore"
    POLICY = "policy"
    APPROX = "approx"
    REPORT = "report"


class ApproxNetKind(str, Enum):
    DEEPSET = "deepset"
    POINTNET = "pointnet"
    TIME_DEEPSET = "time_deepset"
    FEEDFORWARD = "feedforward"
    DEEPDERSET = "deepderset"
    AD_DEEPSET = "ad_deepset"


# --------------------------------------------------------------- networks


class LayerSpec(StrictModel):
    """Affine map followed by an elementwise activation."""

    in_dim: int = Field(..., ge=1)
    out_dim: int = Field(..., ge=1)
    activation: Activation = Activation.IDENTITY

    @property
    def n_params(self) -> int:
        return (self.in_dim + 1) * self.out_dim


class FeedforwardSpec(StrictModel):
    """Chain of layers; hidden layers use ``activation``, the output layer is affine."""

    input_dim: int = Field(..., ge=1, description="Input dimension d0")
    widths: List[int] = Field(default_factory=list, description="Hidden widths, one per layer")
    output_dim: int = Field(..., ge=1, description="Output dimension")
    activation: Activation = Activation.TANH

    @field_validator("widths")
    @classmethod
    def validate_widths(cls, v: List[int]) -> List[int]:
        if any(w < 1 for w in v):
            raise ValueError("hidden widths must be positive")
        return v

    @classmethod
    def uniform(
        cls, input_dim: int, depth: int, width: int, output_dim: int, activation: Activation
    ) -> "FeedforwardSpec":
        """``depth`` hidden layers of equal ``width``."""
        return cls(
            input_dim=input_dim,
            widths=[width] * depth,
            output_dim=output_dim,
            activation=activation,
        )

    def layers(self) -> List[LayerSpec]:
        dims = [self.input_dim, *self.widths, self.output_dim]
        out = []
        for i in range(len(dims) - 1):
            act = self.activation if i < len(self.widths) else Activation.IDENTITY
            out.append(LayerSpec(in_dim=dims[i], out_dim=dims[i + 1], activation=act))
        return out

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers())

    @property
    def smooth(self) -> bool:
        return not self.widths or self.activation.smooth


class SymmetricNetSpec(StrictModel):
    """psi(pool(phi(x_1), ..., phi(x_N))), optionally with time fed to psi."""

    phi: FeedforwardSpec
    pooling: Pooling = Pooling.MEAN
    psi: FeedforwardSpec
    time_augmented: bool = False

    @model_validator(mode="after")
    def validate_chain(self) -> "SymmetricNetSpec":
        expected = self.phi.output_dim + (1 if self.time_augmented else 0)
        if self.psi.input_dim != expected:
            raise ValueError(
                f"psi input dim {self.psi.input_dim} must equal latent dim {self.phi.output_dim}"
                f"{' + 1 (time)' if self.time_augmented else ''}"
            )
        return self

    @classmethod
    def deepset(
        cls,
        dim: int,
        phi_widths: List[int],
        latent_dim: int,
        psi_widths: List[int],
        output_dim: int = 1,
        activation: Activation = Activation.TANH,
        pooling: Pooling = Pooling.MEAN,
        time_augmented: bool = False,
    ) -> "SymmetricNetSpec":
        return cls(
            phi=FeedforwardSpec(
                input_dim=dim, widths=phi_widths, output_dim=latent_dim, activation=activation
            ),
            pooling=pooling,
            psi=FeedforwardSpec(
                input_dim=latent_dim + (1 if time_augmented else 0),
                widths=psi_widths,
                output_dim=output_dim,
                activation=activation,
            ),
            time_augmented=time_augmented,
        )

    @property
    def dim(self) -> int:
        return self.phi.input_dim

    @property
    def latent_dim(self) -> int:
        return self.phi.output_dim

    @property
    def output_dim(self) -> int:
        return self.psi.output_dim

    @property
    def n_params(self) -> int:
        return self.phi.n_params + self.psi.n_params


class DerivativeNetSpec(StrictModel):
    """Network approximating the map (X, x) -> D_x v, D-exchangeable in X."""

    kind: DerivativeKind
    phi: Optional[FeedforwardSpec] = None
    psi: Optional[FeedforwardSpec] = None
    pooling: Pooling = Pooling.MEAN
    value: Optional[SymmetricNetSpec] = Field(
        None, description="AD-DeepSet: the DeepSet whose gradient this is"
    )
    feedforward: Optional[FeedforwardSpec] = Field(
        None, description="Baseline: dense map from the flattened N*d inputs"
    )

    @model_validator(mode="after")
    def validate_kind(self) -> "DerivativeNetSpec":
        if self.kind is DerivativeKind.DEEPDERSET:
            if self.phi is None or self.psi is None:
                raise ValueError("deepderset needs phi and psi")
            if self.psi.input_dim != self.phi.output_dim + self.phi.input_dim:
                raise ValueError("deepderset psi input must be latent dim + particle dim")
        elif self.kind is DerivativeKind.AD_DEEPSET:
            if self.value is None:
                raise ValueError("ad_deepset needs the value net it differentiates")
            if self.value.output_dim != 1 or self.value.time_augmented:
                raise ValueError("ad_deepset differentiates a scalar, time-free DeepSet")
            if self.value.pooling is Pooling.MAX:
                raise ValueError("ad_deepset needs sum or mean pooling")
        elif self.feedforward is None:
            raise ValueError("feedforward baseline needs a feedforward spec")
        elif self.kind is DerivativeKind.AD_FEEDFORWARD and self.feedforward.output_dim != 1:
            raise ValueError("ad_feedforward differentiates a scalar dense net")
        return self

    @classmethod
    def deepderset(
        cls,
        dim: int,
        phi_widths: List[int],
        latent_dim: int,
        psi_widths: List[int],
        activation: Activation = Activation.TANH,
        pooling: Pooling = Pooling.MEAN,
        output_dim: Optional[int] = None,
    ) -> "DerivativeNetSpec":
        return cls(
            kind=DerivativeKind.DEEPDERSET,
            phi=FeedforwardSpec(
                input_dim=dim, widths=phi_widths, output_dim=latent_dim, activation=activation
            ),
            psi=FeedforwardSpec(
                input_dim=latent_dim + dim,
                widths=psi_widths,
                output_dim=output_dim or dim,
                activation=activation,
            ),
            pooling=pooling,
        )

    @classmethod
    def ad_deepset(cls, value: SymmetricNetSpec) -> "DerivativeNetSpec":
        return cls(kind=DerivativeKind.AD_DEEPSET, value=value, pooling=value.pooling)

    @classmethod
    def feedforward_baseline(
        cls, n_particles: int, dim: int, widths: List[int], activation: Activation
    ) -> "DerivativeNetSpec":
        flat = n_particles * dim
        return cls(
            kind=DerivativeKind.FEEDFORWARD,
            feedforward=FeedforwardSpec(
                input_dim=flat, widths=widths, output_dim=flat, activation=activation
            ),
        )

    @classmethod
    def ad_feedforward(cls, value: FeedforwardSpec) -> "DerivativeNetSpec":
        return cls(kind=DerivativeKind.AD_FEEDFORWARD, feedforward=value)

    @property
    def dim(self) -> int:
        if self.phi is not None:
            return self.phi.input_dim
        if self.value is not None:
            return self.value.dim
        raise ValueError("feedforward baseline has no per-particle dimension")

    @property
    def n_params(self) -> int:
        if self.kind is DerivativeKind.DEEPDERSET:
            assert self.phi is not None and self.psi is not None
            return self.phi.n_params + self.psi.n_params
        if self.kind is DerivativeKind.AD_DEEPSET:
            assert self.value is not None
            return self.value.n_params
        assert self.feedforward is not None
        return self.feedforward.n_params

    @property
    def smooth(self) -> bool:
        """True when every layer on the differentiated path is smooth."""
        if self.kind is DerivativeKind.AD_DEEPSET:
            assert self.value is not None
            return self.value.phi.smooth and self.value.psi.smooth
        if self.kind is DerivativeKind.DEEPDERSET:
            assert self.phi is not None and self.psi is not None
            return self.phi.smooth and self.psi.smooth
        assert self.feedforward is not None
        return self.feedforward.smooth


# ---------------------------------------------------------------- configs


class NetConfig(StrictModel):
    """Architectures used by the backward solver at every time step.

    ``value_net=feedforward`` swaps every net for its dense counterpart on the
    flattened N*d inputs: ``ad_self`` and ``ad_second`` differentiate a dense
    scalar net, ``deepderset`` becomes a dense map to all N*d gradient entries.
    """

    value_net: ValueNet = Field(ValueNet.DEEPSET, description="deepset or the dense baseline")
    ff_depth: int = Field(2, ge=1, description="Hidden layers of the dense baseline")
    ff_width: Optional[int] = Field(None, ge=1, description="Dense width; 10 + N*d when unset")
    activation: Activation = Field(Activation.TANH, description="Value-net activation")
    phi_widths: List[int] = Field(default_factory=lambda: [32, 32, 64])
    latent_dim: int = Field(64, ge=1)
    psi_widths: List[int] = Field(default_factory=lambda: [64, 32])
    pooling: Pooling = Pooling.MEAN
    derivative: DerivativeMode = DerivativeMode.AD_SELF
    derivative_activation: Optional[Activation] = None
    derivative_phi_widths: Optional[List[int]] = None
    derivative_latent_dim: Optional[int] = Field(None, ge=1)
    derivative_psi_widths: Optional[List[int]] = None

    def dense_spec(self, n_particles: int, dim: int, activation: Activation) -> FeedforwardSpec:
        flat = n_particles * dim
        width = self.ff_width or 10 + flat
        return FeedforwardSpec.uniform(flat, self.ff_depth, width, 1, activation)

    def value_spec(
        self, dim: int, n_particles: Optional[int] = None
    ) -> Union[SymmetricNetSpec, FeedforwardSpec]:
        if self.value_net is ValueNet.FEEDFORWARD:
            if n_particles is None:
                raise ValueError("the dense value net needs the number of particles")
            return self.dense_spec(n_particles, dim, self.activation)
        return SymmetricNetSpec.deepset(
            dim,
            self.phi_widths,
            self.latent_dim,
            self.psi_widths,
            output_dim=1,
            activation=self.activation,
            pooling=self.pooling,
        )

    def derivative_spec(self, dim: int, n_particles: Optional[int] = None) -> DerivativeNetSpec:
        activation = self.derivative_activation or self.activation
        phi_widths = self.derivative_phi_widths or self.phi_widths
        latent = self.derivative_latent_dim or self.latent_dim
        psi_widths = self.derivative_psi_widths or self.psi_widths
        if self.value_net is ValueNet.FEEDFORWARD:
            if n_particles is None:
                raise ValueError("the dense derivative net needs the number of particles")
            if self.derivative is DerivativeMode.AD_SELF:
                own = self.dense_spec(n_particles, dim, self.activation)
                return DerivativeNetSpec.ad_feedforward(own)
            dense = self.dense_spec(n_particles, dim, activation)
            if self.derivative is DerivativeMode.AD_SECOND:
                return DerivativeNetSpec.ad_feedforward(dense)
            return DerivativeNetSpec.feedforward_baseline(
                n_particles, dim, dense.widths, activation
            )
        value = self.value_spec(dim)
        assert isinstance(value, SymmetricNetSpec)
        if self.derivative is DerivativeMode.AD_SELF:
            return DerivativeNetSpec.ad_deepset(value)
        if self.derivative is DerivativeMode.AD_SECOND:
            second = SymmetricNetSpec.deepset(
                dim, phi_widths, latent, psi_widths, 1, activation, self.pooling
            )
            return DerivativeNetSpec.ad_deepset(second)
        return DerivativeNetSpec.deepderset(
            dim, phi_widths, latent, psi_widths, activation, self.pooling
        )


class SolveConfig(StrictModel):
    """Time grid, budgets and optimizer settings of one backward solve."""

    n_steps: int = Field(10, ge=1, description="Number of time steps N_T")
    horizon: Optional[float] = Field(None, gt=0.0, description="T; the problem's when unset")
    start: float = Field(0.0, ge=0.0, description="First grid time; >0 starts from the optimal law")
    batch_size: int = Field(200, ge=1)
    iterations_per_epoch: int = Field(100, ge=1, description="Gradient steps per inner epoch")
    first_step_epochs: int = Field(300, ge=1, description="Outer epochs for the first step")
    step_epochs: int = Field(60, ge=1, description="Outer epochs for every later step")
    early_stop: Optional[float] = Field(None, gt=0.0, description="Validation loss threshold")
    lr_first: float = Field(1e-4, gt=0.0)
    lr_later: float = Field(5e-5, gt=0.0)
    lr_final: float = Field(5e-6, gt=0.0)
    validation_size: int = Field(1000, ge=1)
    eval_size: int = Field(1000, ge=1, description="Initial configurations averaged for U0")
    seed: int = Field(0, ge=0)
    runs: int = Field(1, ge=1)
    workers: int = Field(1, ge=1, description="Threads running independent runs")
    truncation_quantile: float = Field(1.0, gt=0.5, le=1.0)
    gamma_floor: float = Field(1e-3, gt=0.0, description="Relative floor on Gamma divisors")
    warm_start: bool = True
    project_terminal: bool = False
    terminal_epochs: int = Field(300, ge=1, description="Outer epochs of terminal projection")

    @model_validator(mode="after")
    def validate_grid(self) -> "SolveConfig":
        if self.horizon is not None and self.start >= self.horizon:
            raise ValueError(f"start {self.start} must lie before the horizon {self.horizon}")
        return self


class MixtureBounds(StrictModel):
    """Bounds of the random Gaussian mixtures used for exploration."""

    l_max: int = Field(3, ge=1)
    mu_max: float = Field(1.0, ge=0.0)
    var_max: float = Field(1.0, gt=0.0)


class ApproxConfig(StrictModel):
    """Settings of the approximation benchmark."""

    case: str = "space-1"
    net: ApproxNetKind = ApproxNetKind.DEEPSET
    n_particles: int = Field(100, ge=1)
    activation: Activation = Activation.RELU
    phi_widths: List[int] = Field(default_factory=lambda: [32, 32, 64])
    latent_dim: int = Field(64, ge=1)
    psi_widths: List[int] = Field(default_factory=lambda: [64, 32])
    feedforward_depth: int = Field(3, ge=1)
    batch_size: int = Field(300, ge=1)
    iterations_per_epoch: int = Field(100, ge=1)
    max_epochs: int = Field(200, ge=1)
    validation_size: int = Field(20000, ge=1)
    threshold: float = Field(1e-5, gt=0.0)
    lr_initial: Optional[float] = Field(None, gt=0.0, description="Defaults per case")
    lr_final: Optional[float] = Field(None, gt=0.0)
    zero_init: bool = False


class ProblemConfig(StrictModel):
    name: str = "toy"
    n_particles: int = Field(10, ge=1)
    params: Dict[str, float] = Field(default_factory=dict, description="Parameter overrides")


class OutputConfig(StrictModel):
    dir: str = "results"
    lions_times: List[float] = Field(default_factory=list)
    checkpoints: bool = False
    dump_paths: bool = False


class ExperimentConfig(StrictModel):
    """Everything one CLI invocation needs; validated before any computation."""

    command: Command = Command.SOLVE
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    net: NetConfig = Field(default_factory=NetConfig)
    train: SolveConfig = Field(default_factory=SolveConfig)
    mixture: MixtureBounds = Field(default_factory=MixtureBounds)
    approx: ApproxConfig = Field(default_factory=ApproxConfig)
    out: OutputConfig = Field(default_factory=OutputConfig)
