"""Symmetric network families: DeepSet, PointNet, time DeepSet, DeepDerSet, AD-DeepSet.

Parameters of a network live in one flat float64 vector; ``NetParams.layout``
maps every weight and bias to its slice. Batched inputs have shape
``(batch, N, d)``; the single-configuration helpers accept ``(N, d)`` too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .autodiff import ACTIVATIONS, Tape, Tensor, backward, concat, constant, grad
from .errors import ConfigError, DomainError, StructuralError, UnsupportedError
from .schemas import (
    DerivativeKind,
    DerivativeNetSpec,
    FeedforwardSpec,
    Pooling,
    SymmetricNetSpec,
)

NetSpec = Union[FeedforwardSpec, SymmetricNetSpec, DerivativeNetSpec]
Layout = Dict[str, Tuple[int, Tuple[int, ...]]]

CHECKPOINT_MAGIC = b"SYMPDE-NET-1\n"
_SPEC_TYPES = {cls.__name__: cls for cls in (FeedforwardSpec, SymmetricNetSpec, DerivativeNetSpec)}


# ---------------------------------------------------------------- params


def _feedforward_slots(spec: FeedforwardSpec, prefix: str) -> List[Tuple[str, Tuple[int, ...]]]:
    slots: List[Tuple[str, Tuple[int, ...]]] = []
    for i, layer in enumerate(spec.layers()):
        slots.append((f"{prefix}{i}.W", (layer.in_dim, layer.out_dim)))
        slots.append((f"{prefix}{i}.b", (layer.out_dim,)))
    return slots


def _slots(spec: NetSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    if isinstance(spec, FeedforwardSpec):
        return _feedforward_slots(spec, "ff.")
    if isinstance(spec, SymmetricNetSpec):
        return _feedforward_slots(spec.phi, "phi.") + _feedforward_slots(spec.psi, "psi.")
    if spec.kind is DerivativeKind.AD_DEEPSET:
        assert spec.value is not None
        return _slots(spec.value)
    if spec.kind is DerivativeKind.DEEPDERSET:
        assert spec.phi is not None and spec.psi is not None
        return _feedforward_slots(spec.phi, "phi.") + _feedforward_slots(spec.psi, "psi.")
    assert spec.feedforward is not None
    return _feedforward_slots(spec.feedforward, "ff.")


def make_layout(spec: NetSpec) -> Layout:
    layout: Layout = {}
    offset = 0
    for name, shape in _slots(spec):
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout


@dataclass(frozen=True)
class NetParams:
    """A network spec together with its flat parameter vector."""

    spec: NetSpec
    flat: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        expected = self.spec.n_params
        if self.flat.shape != (expected,):
            raise StructuralError(
                f"parameter vector has shape {self.flat.shape}, spec needs ({expected},)"
            )

    @property
    def n_params(self) -> int:
        return int(self.flat.size)

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return self.flat[offset : offset + int(np.prod(shape))].reshape(shape)

    def with_flat(self, flat: np.ndarray) -> "NetParams":
        return NetParams(self.spec, np.asarray(flat, dtype=np.float64).copy(), self.layout)

    def assign(self, arrays: Dict[str, np.ndarray]) -> "NetParams":
        """Copy with the named slots (``"phi.0.W"``) overwritten."""
        flat = self.flat.copy()
        for name, value in arrays.items():
            if name not in self.layout:
                raise StructuralError(f"no parameter slot {name!r}")
            offset, shape = self.layout[name]
            flat[offset : offset + int(np.prod(shape))] = np.broadcast_to(value, shape).ravel()
        return self.with_flat(flat)


def build(spec: NetSpec, init_seed: int, zero: bool = False) -> NetParams:
    """Glorot-uniform weights and zero biases (all zeros when ``zero``)."""
    layout = make_layout(spec)
    flat = np.zeros(spec.n_params)
    if not zero:
        rng = np.random.default_rng(init_seed)
        for name, (offset, shape) in layout.items():
            if name.endswith(".W"):
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                size = shape[0] * shape[1]
                flat[offset : offset + size] = rng.uniform(-bound, bound, size)
    return NetParams(spec, flat, layout)


class Weights:
    """Tensor views of the slots of a flat parameter tensor, sliced once each."""

    def __init__(self, theta: Tensor, layout: Layout):
        self.theta = theta
        self.layout = layout
        self._cache: Dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        if name not in self._cache:
            offset, shape = self.layout[name]
            size = int(np.prod(shape))
            self._cache[name] = self.theta[offset : offset + size].reshape(shape)
        return self._cache[name]

    @classmethod
    def frozen(cls, params: NetParams) -> "Weights":
        return cls(constant(params.flat), params.layout)


# ---------------------------------------------------------------- graphs


def feedforward_apply(spec: FeedforwardSpec, w: Weights, prefix: str, x: Tensor) -> Tensor:
    h = x
    for i, layer in enumerate(spec.layers()):
        h = h @ w[f"{prefix}{i}.W"] + w[f"{prefix}{i}.b"]
        h = ACTIVATIONS[layer.activation.value](h)
    return h


def pool(features: Tensor, pooling: Pooling) -> Tensor:
    """Reduce ``(batch, N, k)`` over the particle axis."""
    if pooling is Pooling.SUM:
        return features.sum(axis=1)
    if pooling is Pooling.MEAN:
        return features.mean(axis=1)
    return features.max(axis=1)


def pool_scale(pooling: Pooling, n_particles: int) -> float:
    """d pool / d phi(x_i) for the linear poolings."""
    if pooling is Pooling.MAX:
        raise ConfigError("max pooling has no constant pooling derivative")
    return 1.0 if pooling is Pooling.SUM else 1.0 / n_particles


def symmetric_apply(
    spec: SymmetricNetSpec, w: Weights, X: Tensor, t: Optional[Tensor] = None
) -> Tensor:
    """``(batch, N, d) -> (batch, d')``."""
    pooled = pool(feedforward_apply(spec.phi, w, "phi.", X), spec.pooling)
    if spec.time_augmented:
        if t is None:
            raise StructuralError("time-augmented net evaluated without a time input")
        pooled = concat([pooled, t], axis=-1)
    return feedforward_apply(spec.psi, w, "psi.", pooled)


def deepderset_field(spec: DerivativeNetSpec, w: Weights, pooled: Tensor, Y: Tensor) -> Tensor:
    """psi([s, y]) for pooled features ``pooled`` broadcast against points ``Y``."""
    assert spec.psi is not None
    if pooled.ndim == 2:
        batch, k = pooled.shape
        pooled = pooled.reshape(batch, 1, k).broadcast_to((batch, Y.shape[1], k))
    return feedforward_apply(spec.psi, w, "psi.", concat([pooled, Y], axis=-1))


def deepderset_apply(spec: DerivativeNetSpec, w: Weights, X: Tensor, Y: Tensor) -> Tensor:
    """``X: (batch, N, d)``, ``Y: (batch, M, d)`` -> ``(batch, M, d')``."""
    assert spec.phi is not None
    pooled = pool(feedforward_apply(spec.phi, w, "phi.", X), spec.pooling)
    return deepderset_field(spec, w, pooled, Y)


def ad_gradient_apply(
    spec: SymmetricNetSpec, w: Weights, X: Tensor, create_graph: bool = False
) -> Tensor:
    """Gradient of the summed DeepSet output with respect to the taped leaf ``X``."""
    out = symmetric_apply(spec, w, X)
    (z,) = grad(out.sum(), [X], create_graph=create_graph)
    return z


def derivative_apply(
    spec: DerivativeNetSpec, w: Weights, X: Tensor, create_graph: bool = False
) -> Tensor:
    """Z(X, x_i) for every particle: ``(batch, N, d)``.

    For the AD families ``X`` must be a taped leaf recorded with ``requires_grad``.
    """
    if spec.kind is DerivativeKind.AD_DEEPSET:
        assert spec.value is not None
        return ad_gradient_apply(spec.value, w, X, create_graph=create_graph)
    if spec.kind is DerivativeKind.DEEPDERSET:
        return deepderset_apply(spec, w, X, X)
    assert spec.feedforward is not None
    batch = X.shape[0]
    if spec.kind is DerivativeKind.AD_FEEDFORWARD:
        out = feedforward_apply(spec.feedforward, w, "ff.", X.reshape(batch, -1))
        (z,) = grad(out.sum(), [X], create_graph=create_graph)
        return z
    flat = feedforward_apply(spec.feedforward, w, "ff.", X.reshape(batch, -1))
    return flat.reshape(X.shape)


# ------------------------------------------------------- array interface


def _batched(X: np.ndarray, dim: int) -> Tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise StructuralError(f"expected (N, d) or (batch, N, d) input, got shape {X.shape}")
    if X.shape[1] == 0:
        raise DomainError("a configuration needs at least one particle")
    if X.shape[2] != dim:
        raise StructuralError(f"particle dimension {X.shape[2]} != network dimension {dim}")
    return X, single


def symmetric_forward(
    params: NetParams, X: np.ndarray, t: Optional[np.ndarray] = None
) -> np.ndarray:
    """Any symmetric net, whatever its pooling: ``(batch, N, d) -> (batch, d')``."""
    spec = params.spec
    if not isinstance(spec, SymmetricNetSpec):
        raise StructuralError(f"expected a SymmetricNetSpec, got {type(spec).__name__}")
    Xb, single = _batched(X, spec.dim)
    t_tensor = None
    if t is not None:
        times = np.broadcast_to(np.asarray(t, dtype=np.float64), (Xb.shape[0],))
        t_tensor = constant(times[:, None])
    out = symmetric_apply(spec, Weights.frozen(params), constant(Xb), t_tensor).data
    return out[0] if single else out


def deepset_forward(params: NetParams, X: np.ndarray) -> np.ndarray:
    """psi(pool(phi(x_i))) with sum or mean pooling."""
    assert isinstance(params.spec, SymmetricNetSpec)
    if params.spec.pooling is Pooling.MAX:
        raise ConfigError("deepset_forward needs sum or mean pooling; use pointnet_forward")
    return symmetric_forward(params, X)


def pointnet_forward(params: NetParams, X: np.ndarray) -> np.ndarray:
    assert isinstance(params.spec, SymmetricNetSpec)
    if params.spec.pooling is not Pooling.MAX:
        raise ConfigError("pointnet_forward needs max pooling")
    return symmetric_forward(params, X)


def time_deepset_forward(
    params: NetParams, t: Union[float, np.ndarray], X: np.ndarray
) -> np.ndarray:
    assert isinstance(params.spec, SymmetricNetSpec)
    if not params.spec.time_augmented:
        raise ConfigError("time_deepset_forward needs a time-augmented spec")
    return symmetric_forward(params, X, t)


def feedforward_forward(params: NetParams, x: np.ndarray) -> np.ndarray:
    assert isinstance(params.spec, FeedforwardSpec)
    return feedforward_apply(params.spec, Weights.frozen(params), "ff.", constant(x)).data


def deepderset_forward(params: NetParams, X: np.ndarray, x: np.ndarray) -> np.ndarray:
    """psi(pool(phi(x_i)), x). ``x`` is a point ``(d,)`` or points ``(batch, M, d)``."""
    spec = params.spec
    assert isinstance(spec, DerivativeNetSpec) and spec.kind is DerivativeKind.DEEPDERSET
    Xb, single = _batched(X, spec.dim)
    Y = np.asarray(x, dtype=np.float64)
    if Y.ndim == 1:
        Y = np.broadcast_to(Y, (Xb.shape[0], 1, Y.shape[0]))
    out = deepderset_apply(spec, Weights.frozen(params), constant(Xb), constant(Y)).data
    if np.asarray(x).ndim == 1:
        out = out[:, 0]
    return out[0] if single else out


def ad_deepset_gradient(U_params: NetParams, X: np.ndarray) -> np.ndarray:
    """D_{x_i} U(X) for every particle, by reverse mode through the pooled graph."""
    spec = U_params.spec
    if isinstance(spec, DerivativeNetSpec):
        assert spec.value is not None
        spec = spec.value
    assert isinstance(spec, SymmetricNetSpec)
    Xb, single = _batched(X, spec.dim)
    tape = Tape()
    theta = tape.leaf(U_params.flat, "theta", requires_grad=False)
    x_leaf = tape.leaf(Xb, "x")
    tape.set_root(symmetric_apply(spec, Weights(theta, U_params.layout), x_leaf))
    z = backward(tape)["x"]
    return z[0] if single else z


def derivative_forward(params: NetParams, X: np.ndarray) -> np.ndarray:
    """Z(X, x_i) at every particle of ``X`` for any derivative family."""
    spec = params.spec
    assert isinstance(spec, DerivativeNetSpec)
    if spec.kind is DerivativeKind.AD_DEEPSET:
        return ad_deepset_gradient(params, X)
    if spec.kind is DerivativeKind.DEEPDERSET:
        Xb, single = _batched(X, spec.dim)
        out = deepderset_apply(spec, Weights.frozen(params), constant(Xb), constant(Xb)).data
        return out[0] if single else out
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    Xb = X[None] if single else X
    if spec.kind is DerivativeKind.AD_FEEDFORWARD:
        tape = Tape()
        theta = tape.leaf(params.flat, "theta", requires_grad=False)
        x_leaf = tape.leaf(Xb, "x")
        out = derivative_apply(spec, Weights(theta, params.layout), x_leaf).data
    else:
        out = derivative_apply(spec, Weights.frozen(params), constant(Xb)).data
    return out[0] if single else out


def value_forward(params: NetParams, X: np.ndarray) -> np.ndarray:
    """Scalar value net at configurations ``(batch, N, d) -> (batch,)``, symmetric or dense."""
    spec = params.spec
    if isinstance(spec, FeedforwardSpec):
        Xb = np.asarray(X, dtype=np.float64)
        if Xb.ndim != 3 or Xb.shape[1] * Xb.shape[2] != spec.input_dim:
            raise StructuralError(
                f"dense value net needs {spec.input_dim} inputs per configuration"
            )
        return feedforward_forward(params, Xb.reshape(Xb.shape[0], -1))[:, 0]
    return symmetric_forward(params, X)[..., 0]


def _field_graph(
    spec: DerivativeNetSpec, w: Weights, s_rep: Tensor, Y: Tensor, scale: float
) -> Tensor:
    """Z as a function of the replicated pooled features and the free evaluation point."""
    if spec.kind is DerivativeKind.DEEPDERSET:
        return deepderset_field(spec, w, s_rep, Y)
    assert spec.value is not None
    value = spec.value
    (psi_grad,) = grad(
        feedforward_apply(value.psi, w, "psi.", s_rep).sum(), [s_rep], create_graph=True
    )
    features = feedforward_apply(value.phi, w, "phi.", Y)
    (field,) = grad((features * psi_grad).sum(), [Y], create_graph=True)
    return field * scale


def z_diag_derivative(Z_params: NetParams, X: np.ndarray) -> np.ndarray:
    """Diagonal blocks d Z(X, x) / dx at x = x_i, shape ``(N, d, d)`` or ``(batch, N, d, d)``.

    Row ``c`` of block ``i`` is the gradient of component ``c`` of Z_i. The
    total derivative splits into the explicit dependence on the evaluation
    point and the dependence through the pooled features of x_i itself.
    """
    spec = Z_params.spec
    if not isinstance(spec, DerivativeNetSpec) or spec.feedforward is not None:
        raise UnsupportedError("z_diag_derivative needs a DeepDerSet or an AD-DeepSet")
    if not spec.smooth:
        raise ConfigError("ReLU on the differentiated path: its derivative is a.e. constant")
    phi = spec.value.phi if spec.value is not None else spec.phi
    pooling = spec.value.pooling if spec.value is not None else spec.pooling
    assert phi is not None
    Xb, single = _batched(X, spec.dim)
    batch, n, d = Xb.shape
    scale = pool_scale(pooling, n)

    w = Weights.frozen(Z_params)
    pooled = pool(feedforward_apply(phi, w, "phi.", constant(Xb)), pooling).data
    k = pooled.shape[-1]

    tape = Tape()
    s_rep = tape.leaf(np.broadcast_to(pooled[:, None, :], (batch, n, k)).copy(), "s_rep")
    y = tape.leaf(Xb, "y")
    field = _field_graph(spec, w, s_rep, y, scale)

    blocks = np.zeros((batch, n, d, d))
    for c in range(field.shape[-1]):
        free, through_pool = grad(field[..., c].sum(), [y, s_rep])
        pool_tape = Tape()
        x_leaf = pool_tape.leaf(Xb, "x")
        features = feedforward_apply(phi, w, "phi.", x_leaf)
        (pool_term,) = grad((features * constant(through_pool.data)).sum(), [x_leaf])
        blocks[:, :, c, :] = free.data + scale * pool_term.data
    logger.debug(f"z_diag_derivative: {batch} configurations, N={n}, d={d}")
    return blocks[0] if single else blocks


# ------------------------------------------------------------ checkpoints


def save_params(params: NetParams, path: Union[str, Path]) -> None:
    """Write magic, a JSON spec header line, the uint64 count and the float64 vector."""
    header = json.dumps(
        {"spec_type": type(params.spec).__name__, "spec": params.spec.model_dump(mode="json")},
        sort_keys=True,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(header.encode("utf-8") + b"\n")
        f.write(np.asarray([params.n_params], dtype="<u8").tobytes())
        f.write(params.flat.astype("<f8").tobytes())


def load_params(path: Union[str, Path]) -> NetParams:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise StructuralError(f"{path} is not a SYMPDE-NET-1 checkpoint")
        header = json.loads(f.readline().decode("utf-8"))
        count = int(np.frombuffer(f.read(8), dtype="<u8")[0])
        flat = np.frombuffer(f.read(8 * count), dtype="<f8").astype(np.float64)
    spec_cls = _SPEC_TYPES.get(header.get("spec_type", ""))
    if spec_cls is None:
        raise StructuralError(f"unknown spec type in {path}: {header.get('spec_type')}")
    spec = spec_cls.model_validate(header["spec"])
    if flat.size != count:
        raise StructuralError(f"{path} is truncated: {flat.size} of {count} parameters")
    return NetParams(spec, flat, make_layout(spec))
