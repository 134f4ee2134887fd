"""Dense float64 tensors with taped reverse-mode differentiation.

The kernel is deliberately small: row-major dense storage, the handful of
operations the three forecasters need, and a define-by-run tape. A ``Graph``
is opened as a context manager for one forward pass; every operation executed
inside appends a node (op inputs + the saved arrays its backward needs) to an
append-only tape whose order is already topological. ``Graph.backward`` then
walks the tape once in reverse.

Outside any active graph the same operations run eagerly with nothing
recorded, which is how inference and finite-difference probing work.

Broadcasting is restricted to last-axis bias addition (``add_bias``) plus
constant operands (``add_const`` / ``mul_const``), which never receive
gradients. Elementwise ops require exact shape agreement.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateAttentionError, ShapeError

__all__ = [
    "Tensor",
    "Graph",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "add_bias",
    "add_const",
    "mul_const",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "masked_softmax",
    "layer_norm",
    "reshape",
    "transpose_last",
    "slice_last",
    "concat_last",
    "sum_all",
    "mean_all",
]


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        return arr  # ascontiguousarray would promote 0-d to shape (1,)
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense float64 array plus its slot on the active computation graph.

    ``grad`` is populated by ``Graph.backward`` and has the same shape as
    ``data``. ``node_id`` / ``graph`` identify the tensor's node on the graph
    it last participated in; both are managed by the recording machinery.
    """

    __slots__ = ("data", "grad", "node_id", "graph")

    def __init__(self, data):
        self.data = _as_f64(data)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.graph: Optional["Graph"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Thin operator sugar over the module-level ops.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -np.asarray(other, dtype=np.float64))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_STACK = threading.local()


def _graph_stack() -> list:
    stack = getattr(_STACK, "graphs", None)
    if stack is None:
        stack = []
        _STACK.graphs = stack
    return stack


def _active_graph() -> Optional["Graph"]:
    stack = _graph_stack()
    return stack[-1] if stack else None


class _Node:
    """One tape entry: the node's input ids, its backward closure, and the
    output tensor it produced (leaf nodes have no backward)."""

    __slots__ = ("inputs", "backward", "tensor")

    def __init__(self, inputs, backward, tensor):
        self.inputs = inputs
        self.backward = backward
        self.tensor = tensor


class Graph:
    """Append-only tape of operations for one forward pass.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded. Tensors created elsewhere (parameters, constants) are
    attached as leaf nodes the first time an op touches them, so node order
    on the tape is topological by construction.

    ``backward`` is idempotent: gradient buffers are rebuilt from scratch on
    every call, so calling it twice without re-recording yields identical
    grads.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _graph_stack().pop()
        assert popped is self, "graph context exited out of order"

    def __len__(self) -> int:
        return len(self._nodes)

    def _attach(self, t: Tensor) -> int:
        """Return t's node id on this graph, registering a leaf if needed."""
        if t.graph is self and t.node_id is not None:
            return t.node_id
        node_id = len(self._nodes)
        self._nodes.append(_Node((), None, t))
        t.graph = self
        t.node_id = node_id
        return node_id

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        ids = tuple(self._attach(t) for t in inputs)
        out.graph = self
        out.node_id = len(self._nodes)
        self._nodes.append(_Node(ids, backward, out))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` for every tensor attached to this graph.

        The loss must be a scalar produced on this graph. Tensors not
        reachable from the loss get zero gradients.
        """
        if loss.graph is not self or loss.node_id is None:
            raise ValueError("loss tensor was not produced on this graph")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        buffers: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        buffers[loss.node_id] = np.ones_like(loss.data)

        for node_id in range(len(self._nodes) - 1, -1, -1):
            grad_out = buffers[node_id]
            if grad_out is None:
                continue
            node = self._nodes[node_id]
            if node.backward is None:
                continue
            input_grads = node.backward(grad_out)
            for input_id, g in zip(node.inputs, input_grads):
                if g is None:
                    continue
                # Accumulation is out-of-place, so handing the same array to
                # several inputs (e.g. add's backward) is safe.
                if buffers[input_id] is None:
                    buffers[input_id] = g
                else:
                    buffers[input_id] = buffers[input_id] + g

        for node_id, node in enumerate(self._nodes):
            t = node.tensor
            buf = buffers[node_id]
            t.grad = buf if buf is not None else np.zeros_like(t.data)


def _emit(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    g = _active_graph()
    if g is not None:
        g._record(out, inputs, backward)
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports 2D@2D, batched 3D@3D, and 3D@2D."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} vs {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} vs {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"matmul batch/inner dimensions disagree: {ad.shape} vs {bd.shape}")
    else:
        raise ShapeError(f"matmul supports 2D@2D, 3D@2D and 3D@3D, got {ad.shape} @ {bd.shape}")

    def backward(g: np.ndarray):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 3 and bd.ndim == 2:
            # weight grad sums over the batch dimension
            k = ad.shape[2]
            p = g.shape[2]
            return g @ bd.T, ad.reshape(-1, k).T @ g.reshape(-1, p)
        return g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g

    return _emit(ad @ bd, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (Hadamard); shapes must match exactly."""
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(x: Tensor) -> Tensor:
    return _emit(-x.data, (x,), lambda g: (-g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector ``b`` along the last axis of ``x`` (the one permitted
    broadcast)."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias needs a vector matching the last axis: {x.shape} + {b.shape}")
    width = b.data.shape[0]

    def backward(g: np.ndarray):
        return g, g.reshape(-1, width).sum(axis=0)

    return _emit(x.data + b.data, (x, b), backward)


def add_const(x: Tensor, c) -> Tensor:
    """Add a non-differentiable constant (scalar or broadcastable array)."""
    out_data = x.data + np.asarray(c, dtype=np.float64)
    if out_data.shape != x.data.shape:
        raise ShapeError(f"add_const must preserve shape: {x.shape} + constant {np.shape(c)}")
    return _emit(out_data, (x,), lambda g: (g,))


def mul_const(x: Tensor, c) -> Tensor:
    """Multiply by a non-differentiable constant (dropout masks, 1/sqrt(dk))."""
    carr = np.asarray(c, dtype=np.float64)
    out_data = x.data * carr
    if out_data.shape != x.data.shape:
        raise ShapeError(f"mul_const must preserve shape: {x.shape} * constant {np.shape(c)}")
    return _emit(out_data, (x,), lambda g: (g * carr,))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0.0),))


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    return _emit(out_data, (x,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # Branch on sign so exp only ever sees non-positive arguments.
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def _check_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for a {ndim}-dimensional tensor")
    return axis % ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``: exp(x - max) / sum(exp(x - max))."""
    axis = _check_axis(axis, x.data.ndim, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _emit(out_data, (x,), backward)


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` where only ``mask``-allowed entries compete.

    ``mask`` is a boolean array broadcastable to ``x``; True marks allowed
    positions. Disallowed positions get weight exactly 0.0. A slice with no
    allowed entry is rejected.
    """
    axis = _check_axis(axis, x.data.ndim, "masked_softmax")
    mask_full = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    if not mask_full.any(axis=axis).all():
        raise DegenerateAttentionError("mask leaves a softmax slice with no allowed entries")
    filled = np.where(mask_full, x.data, -np.inf)
    # Max over allowed entries is finite, so exp(-inf - max) is exactly 0.
    shifted = filled - filled.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _emit(out_data, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each last-axis slice, then scale by gamma and shift by beta."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm needs gamma/beta of shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    if not eps > 0.0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd = gamma.data
    out_data = xhat * gd + beta.data

    def backward(g: np.ndarray):
        gl = g * gd
        # d/dx of (x - mu)/sqrt(var + eps): remove the per-slice mean and the
        # component along xhat, then rescale.
        dx = inv * (
            gl
            - gl.mean(axis=-1, keepdims=True)
            - xhat * (gl * xhat).mean(axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        return dx, dgamma, dbeta

    return _emit(out_data, (x, gamma, beta), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old_shape = x.data.shape
    try:
        out_data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old_shape} to {shape}") from exc
    return _emit(out_data.copy(), (x,), lambda g: (g.reshape(old_shape),))


def transpose_last(x: Tensor) -> Tensor:
    """Swap the last two axes (matrix transpose, batched for 3D)."""
    if x.data.ndim < 2:
        raise ShapeError(f"transpose_last needs at least 2 dimensions, got {x.shape}")
    out_data = np.ascontiguousarray(x.data.swapaxes(-1, -2))
    return _emit(out_data, (x,), lambda g: (np.ascontiguousarray(g.swapaxes(-1, -2)),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Take columns [start, stop) of the last axis."""
    width = x.data.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice_last [{start}:{stop}] invalid for last axis of length {width}")
    xd = x.data

    def backward(g: np.ndarray):
        full = np.zeros_like(xd)
        full[..., start:stop] = g
        return (full,)

    return _emit(np.ascontiguousarray(xd[..., start:stop]), (x,), backward)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along the last axis."""
    if not parts:
        raise ShapeError("concat_last needs at least one tensor")
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last needs equal leading dims, got {[p.shape for p in parts]}"
            )
    widths = [p.data.shape[-1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=-1)

    def backward(g: np.ndarray):
        grads = []
        offset = 0
        for w in widths:
            grads.append(np.ascontiguousarray(g[..., offset:offset + w]))
            offset += w
        return tuple(grads)

    return _emit(out_data, tuple(parts), backward)


def sum_all(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(np.asarray(xd.sum()), (x,), lambda g: (np.full_like(xd, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    xd = x.data
    n = xd.size
    return _emit(np.asarray(xd.mean()), (x,), lambda g: (np.full_like(xd, float(g) / n),))
