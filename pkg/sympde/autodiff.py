"""Define-by-run reverse-mode automatic differentiation on float64 numpy arrays.

A :class:`Tape` records primitive applications in topological order. Every
vector-Jacobian product is itself written with :class:`Tensor` operations, so
a gradient computed with ``create_graph=True`` is recorded on the same tape and
can be differentiated again (second derivatives for the fully nonlinear scheme).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .errors import NumericError, StructuralError, UsageError

ArrayLike = Union["Tensor", np.ndarray, float, int]
Index = Tuple[Any, ...]


@dataclass
class Node:
    """One recorded operation and its saved forward value."""

    op: str
    parents: Tuple[int, ...]
    attrs: Dict[str, Any]
    value: np.ndarray
    name: Optional[str] = None
    needs_grad: bool = False

    def label(self, index: int) -> str:
        return f"{self.op}#{index}" if self.name is None else f"{self.op}#{index}({self.name})"


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., Tuple[Optional["Tensor"], ...]]


_PRIMITIVES: Dict[str, Primitive] = {}


def primitive(name: str, forward: Callable[..., np.ndarray]) -> Callable:
    """Register ``forward`` under ``name`` with the decorated function as its VJP."""

    def register(vjp: Callable[..., Tuple[Optional["Tensor"], ...]]) -> Callable:
        _PRIMITIVES[name] = Primitive(name, forward, vjp)
        return vjp

    return register


class Tape:
    """Ordered record of primitive operations; parents always precede children."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.recording = True
        self.root_index: Optional[int] = None
        self.evaluated = False

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: ArrayLike, name: str, requires_grad: bool = True) -> "Tensor":
        """Record a named input or parameter leaf."""
        if name in self.leaf_names():
            raise StructuralError(f"leaf name {name!r} already recorded on this tape")
        data = _as_array(value)
        _check_finite(data, f"leaf({name})")
        index = self._append(Node("leaf", (), {}, data, name=name, needs_grad=requires_grad))
        return Tensor(tape=self, index=index)

    def constant(self, value: ArrayLike) -> "Tensor":
        data = _as_array(value)
        _check_finite(data, "const")
        return Tensor(tape=self, index=self._append(Node("const", (), {}, data)))

    def set_root(self, tensor: "Tensor") -> "Tensor":
        """Designate ``tensor`` as the value :func:`eval_graph` returns."""
        if tensor.tape is not self:
            raise StructuralError("root tensor belongs to a different tape")
        self.root_index = tensor.index
        self.evaluated = True
        return tensor

    def leaf_names(self) -> Dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name}

    @contextlib.contextmanager
    def paused(self) -> Iterator["Tape"]:
        """Evaluate eagerly without recording (operations return untaped tensors)."""
        previous = self.recording
        self.recording = False
        try:
            yield self
        finally:
            self.recording = previous

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _index_of(self, tensor: "Tensor") -> int:
        if tensor.tape is self:
            assert tensor.index is not None
            return tensor.index
        return self._append(Node("const", (), {}, tensor.data))


class Tensor:
    """Dense float64 array, optionally bound to a node of a :class:`Tape`."""

    __array_ufunc__ = None

    def __init__(
        self,
        data: Optional[ArrayLike] = None,
        tape: Optional[Tape] = None,
        index: Optional[int] = None,
    ):
        self.tape = tape
        self.index = index
        self._data = None if tape is not None else _as_array(data if data is not None else 0.0)

    @property
    def data(self) -> np.ndarray:
        if self.tape is not None:
            assert self.index is not None
            return self.tape.nodes[self.index].value
        assert self._data is not None
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise StructuralError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        where = "untaped" if self.tape is None else f"node {self.index}"
        return f"Tensor(shape={self.shape}, {where})"

    # arithmetic
    def __add__(self, other: ArrayLike) -> "Tensor":
        return _apply("add", self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return _apply("add", other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return _apply("sub", self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return _apply("sub", other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return _apply("mul", self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return _apply("mul", other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return _apply("div", self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return _apply("div", other, self)

    def __neg__(self) -> "Tensor":
        return _apply("neg", self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return _apply("matmul", self, other)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return _apply("matmul", other, self)

    def __getitem__(self, index: Any) -> "Tensor":
        return _apply("getitem", self, index=_normalize_index(index))

    # shape and reductions
    def sum(
        self, axis: Union[None, int, Sequence[int]] = None, keepdims: bool = False
    ) -> "Tensor":
        return _apply("sum", self, axis=_normalize_axes(axis, self.ndim), keepdims=keepdims)

    def mean(
        self, axis: Union[None, int, Sequence[int]] = None, keepdims: bool = False
    ) -> "Tensor":
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return self.sum(axes, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int) -> "Tensor":
        return _apply("max", self, axis=axis % self.ndim)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _apply("reshape", self, shape=tuple(int(s) for s in shape))

    def broadcast_to(self, shape: Sequence[int]) -> "Tensor":
        return _apply("broadcast_to", self, shape=tuple(int(s) for s in shape))

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return _apply("swapaxes", self, axis1=axis1, axis2=axis2)


# ---------------------------------------------------------------- helpers


def _as_array(value: ArrayLike) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=np.float64)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value: ArrayLike) -> Tensor:
    """An untaped tensor; it is lifted onto a tape the first time it meets a taped operand."""
    return Tensor(_as_array(value).copy())


def _check_finite(value: np.ndarray, label: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError("non-finite value produced", location=label)


def _normalize_axes(axis: Union[None, int, Sequence[int]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _normalize_index(index: Any) -> Index:
    index = index if isinstance(index, tuple) else (index,)
    for part in index:
        if not (isinstance(part, (int, slice, np.integer)) or part is Ellipsis):
            raise StructuralError(
                f"only basic indexing is differentiable, got {type(part).__name__}"
            )
    return tuple(int(p) if isinstance(p, np.integer) else p for p in index)


def _common_tape(tensors: Sequence[Tensor]) -> Optional[Tape]:
    tapes = {id(t.tape): t.tape for t in tensors if t.tape is not None}
    if len(tapes) > 1:
        raise StructuralError("operands are recorded on different tapes")
    return next(iter(tapes.values())) if tapes else None


def _apply(op: str, *inputs: ArrayLike, **attrs: Any) -> Tensor:
    prim = _PRIMITIVES[op]
    tensors = [as_tensor(x) for x in inputs]
    tape = _common_tape(tensors)
    try:
        with np.errstate(all="ignore"):
            value = np.asarray(prim.forward(*[t.data for t in tensors], **attrs), dtype=np.float64)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise StructuralError(f"{op} on shapes {shapes}: {exc}") from exc

    if tape is None or not tape.recording:
        _check_finite(value, op)
        return Tensor(value)

    parents = tuple(tape._index_of(t) for t in tensors)
    needs_grad = any(tape.nodes[p].needs_grad for p in parents)
    index = tape._append(Node(op, parents, attrs, value, needs_grad=needs_grad))
    _check_finite(value, tape.nodes[index].label(index))
    return Tensor(tape=tape, index=index)


def _unbroadcast(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _keepdims_shape(shape: Tuple[int, ...], axes: Tuple[int, ...]) -> Tuple[int, ...]:
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


# ------------------------------------------------------------- primitives


@primitive("add", np.add)
def _add_vjp(g: Tensor, out: Tensor, a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@primitive("sub", np.subtract)
def _sub_vjp(g: Tensor, out: Tensor, a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@primitive("mul", np.multiply)
def _mul_vjp(g: Tensor, out: Tensor, a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@primitive("div", np.divide)
def _div_vjp(g: Tensor, out: Tensor, a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    return _unbroadcast(g / b, a.shape), _unbroadcast(-(g * out) / b, b.shape)


@primitive("neg", np.negative)
def _neg_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (-g,)


def _matmul_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")
    return np.matmul(a, b)


@primitive("matmul", _matmul_forward)
def _matmul_vjp(g: Tensor, out: Tensor, a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    ga = g @ b.swapaxes(-1, -2)
    gb = a.swapaxes(-1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@primitive("swapaxes", lambda a, axis1, axis2: np.swapaxes(a, axis1, axis2))
def _swapaxes_vjp(g: Tensor, out: Tensor, a: Tensor, axis1: int, axis2: int) -> Tuple[Tensor]:
    return (g.swapaxes(axis1, axis2),)


@primitive("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims))
def _sum_vjp(
    g: Tensor, out: Tensor, a: Tensor, axis: Tuple[int, ...], keepdims: bool
) -> Tuple[Tensor]:
    if not keepdims:
        g = g.reshape(_keepdims_shape(a.shape, axis))
    return (g.broadcast_to(a.shape),)


@primitive("max", lambda a, axis: np.max(a, axis=axis))
def _max_vjp(g: Tensor, out: Tensor, a: Tensor, axis: int) -> Tuple[Tensor]:
    # np.argmax returns the first maximal index, so ties route to the lowest index
    winners = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    mask = np.zeros(a.shape)
    np.put_along_axis(mask, winners, 1.0, axis=axis)
    expanded = g.reshape(_keepdims_shape(a.shape, (axis,))).broadcast_to(a.shape)
    return (expanded * constant(mask),)


@primitive("broadcast_to", lambda a, shape: np.broadcast_to(a, shape).copy())
def _broadcast_vjp(g: Tensor, out: Tensor, a: Tensor, shape: Tuple[int, ...]) -> Tuple[Tensor]:
    return (_unbroadcast(g, a.shape),)


@primitive("reshape", lambda a, shape: np.reshape(a, shape).copy())
def _reshape_vjp(g: Tensor, out: Tensor, a: Tensor, shape: Tuple[int, ...]) -> Tuple[Tensor]:
    return (g.reshape(a.shape),)


def _concat_forward(*parts: np.ndarray, axis: int) -> np.ndarray:
    return np.concatenate(parts, axis=axis)


@primitive("concat", _concat_forward)
def _concat_vjp(g: Tensor, out: Tensor, *parts: Tensor, axis: int) -> Tuple[Tensor, ...]:
    grads = []
    start = 0
    for part in parts:
        stop = start + part.shape[axis]
        grads.append(g[(slice(None),) * axis + (slice(start, stop),)])
        start = stop
    return tuple(grads)


@primitive("getitem", lambda a, index: np.array(a[index], dtype=np.float64))
def _getitem_vjp(g: Tensor, out: Tensor, a: Tensor, index: Index) -> Tuple[Tensor]:
    return (_apply("scatter", g, index=index, shape=a.shape),)


def _scatter_forward(g: np.ndarray, index: Index, shape: Tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape)
    out[index] = g
    return out


@primitive("scatter", _scatter_forward)
def _scatter_vjp(
    g: Tensor, out: Tensor, a: Tensor, index: Index, shape: Tuple[int, ...]
) -> Tuple[Tensor]:
    return (g[index],)


@primitive("relu", lambda a: np.maximum(a, 0.0))
def _relu_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (g * constant((a.data > 0.0).astype(np.float64)),)


@primitive("tanh", np.tanh)
def _tanh_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (g * (1.0 - out * out),)


@primitive("sigmoid", lambda a: 0.5 * (1.0 + np.tanh(0.5 * a)))
def _sigmoid_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (g * out * (1.0 - out),)


@primitive("elu", lambda a: np.where(a > 0.0, a, np.expm1(np.minimum(a, 0.0))))
def _elu_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    positive = (a.data > 0.0).astype(np.float64)
    return (g * (constant(positive) + constant(1.0 - positive) * (out + 1.0)),)


@primitive("exp", np.exp)
def _exp_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (g * out,)


@primitive("sin", np.sin)
def _sin_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (g * cos(a),)


@primitive("cos", np.cos)
def _cos_vjp(g: Tensor, out: Tensor, a: Tensor) -> Tuple[Tensor]:
    return (-(g * sin(a)),)


@primitive("clamp_min", lambda a, floor: np.maximum(a, floor))
def _clamp_min_vjp(g: Tensor, out: Tensor, a: Tensor, floor: float) -> Tuple[Tensor]:
    return (g * constant((a.data > floor).astype(np.float64)),)


# ------------------------------------------------------ functional surface


def relu(x: ArrayLike) -> Tensor:
    return _apply("relu", x)


def tanh(x: ArrayLike) -> Tensor:
    return _apply("tanh", x)


def sigmoid(x: ArrayLike) -> Tensor:
    return _apply("sigmoid", x)


def elu(x: ArrayLike) -> Tensor:
    """ELU with alpha = 1."""
    return _apply("elu", x)


def identity(x: ArrayLike) -> Tensor:
    return as_tensor(x)


def exp(x: ArrayLike) -> Tensor:
    return _apply("exp", x)


def sin(x: ArrayLike) -> Tensor:
    return _apply("sin", x)


def cos(x: ArrayLike) -> Tensor:
    return _apply("cos", x)


def clamp_min(x: ArrayLike, floor: float) -> Tensor:
    return _apply("clamp_min", x, floor=float(floor))


def concat(parts: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(p) for p in parts]
    return _apply("concat", *tensors, axis=axis % tensors[0].ndim)


ACTIVATIONS: Dict[str, Callable[[ArrayLike], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "elu": elu,
    "sigmoid": sigmoid,
    "identity": identity,
}


# ------------------------------------------------------------ evaluation


def eval_graph(tape: Tape, inputs: Optional[Mapping[str, ArrayLike]] = None) -> Tensor:
    """Replay the recorded forward pass with ``inputs`` bound to named leaves.

    Leaves not named in ``inputs`` keep the value they were recorded with. The
    root is the tensor passed to :meth:`Tape.set_root`, else the last node.
    """
    if not tape.nodes:
        raise UsageError("cannot evaluate an empty tape")
    inputs = dict(inputs or {})
    leaves = tape.leaf_names()
    unknown = sorted(set(inputs) - set(leaves))
    if unknown:
        raise StructuralError(f"no leaves named {unknown} on this tape")

    root = tape.root_index if tape.root_index is not None else len(tape.nodes) - 1
    for i in range(root + 1):
        node = tape.nodes[i]
        if node.op == "const":
            continue
        if node.op == "leaf":
            if node.name in inputs:
                value = _as_array(inputs[node.name])
                if value.shape != node.value.shape:
                    raise StructuralError(
                        f"input {node.name!r} has shape {value.shape}, "
                        f"recorded {node.value.shape}"
                    )
                _check_finite(value, node.label(i))
                node.value = value.copy()
            continue
        parents = [tape.nodes[p].value for p in node.parents]
        with np.errstate(all="ignore"):
            value = np.asarray(
                _PRIMITIVES[node.op].forward(*parents, **node.attrs), dtype=np.float64
            )
        if value.shape != node.value.shape:
            raise StructuralError(f"{node.label(i)} changed shape on replay")
        _check_finite(value, node.label(i))
        node.value = value

    tape.root_index = root
    tape.evaluated = True
    return Tensor(tape=tape, index=root)


def _reverse(
    tape: Tape, root: int, seed: Tensor, create_graph: bool, keep: Sequence[int] = ()
) -> Dict[int, Tensor]:
    grads: Dict[int, Tensor] = {root: seed}
    context = contextlib.nullcontext(tape) if create_graph else tape.paused()
    with context:
        for i in range(root, -1, -1):
            node = tape.nodes[i]
            if node.op in ("leaf", "const") or not node.needs_grad or i not in grads:
                continue
            g = grads[i] if i in keep else grads.pop(i)
            inputs = [Tensor(tape=tape, index=p) for p in node.parents]
            contributions = _PRIMITIVES[node.op].vjp(
                g, Tensor(tape=tape, index=i), *inputs, **node.attrs
            )
            for parent, contribution in zip(node.parents, contributions):
                if contribution is None or not tape.nodes[parent].needs_grad:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + contribution
                else:
                    grads[parent] = contribution
    return grads


def grad(
    output: Tensor,
    wrt: Sequence[Tensor],
    seed: Optional[ArrayLike] = None,
    create_graph: bool = False,
) -> List[Tensor]:
    """Vector-Jacobian product of ``output`` with respect to each tensor in ``wrt``.

    With ``create_graph`` the returned gradients are recorded on the tape and
    are themselves differentiable; otherwise they are untaped.
    """
    tape = output.tape
    seed_tensor = constant(np.ones(output.shape)) if seed is None else as_tensor(seed)
    if seed_tensor.shape != output.shape:
        raise StructuralError(f"seed shape {seed_tensor.shape} != output shape {output.shape}")
    if tape is None:
        return [constant(np.zeros(w.shape)) for w in wrt]
    for w in wrt:
        if w.tape is not tape:
            raise StructuralError("gradient requested with respect to a tensor of another tape")

    assert output.index is not None
    wanted = [w.index for w in wrt if w.index is not None]
    grads = _reverse(tape, output.index, seed_tensor, create_graph, keep=wanted)
    result = []
    for w in wrt:
        g = grads.get(w.index) if w.index is not None else None
        result.append(g if g is not None else constant(np.zeros(w.shape)))
    return result


def backward(tape: Tape, seed: Optional[ArrayLike] = None) -> Dict[str, np.ndarray]:
    """Gradients of the root with respect to every named leaf of ``tape``.

    Leaves the root does not depend on (or that were recorded with
    ``requires_grad=False``) receive zeros.
    """
    if not tape.evaluated or tape.root_index is None:
        raise UsageError("backward called before the tape was evaluated")
    root = Tensor(tape=tape, index=tape.root_index)
    leaves = tape.leaf_names()
    names = list(leaves)
    tensors = [Tensor(tape=tape, index=leaves[n]) for n in names]
    grads = grad(root, tensors, seed=seed)
    logger.debug(f"backward over {len(tape)} nodes for {len(names)} leaves")
    return {name: g.numpy() for name, g in zip(names, grads)}
