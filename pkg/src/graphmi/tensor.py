"""Dense-matrix reverse-mode automatic differentiation and Adam.

Tensors are 2-D float64 matrices. Each operation records its inputs and a
backward closure on the produced tensor (a dynamic tape); ``backward`` on a
1x1 loss walks the tape once in reverse topological order and accumulates
gradients additively into every reachable tensor. Gradients persist until
``zero_grads`` is called, so repeated backward passes add up.

Scope is deliberately small: no broadcasting beyond scalar-vs-matrix, no
higher-order derivatives, no views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

Params = list[tuple[str, "Tensor"]]


class Tensor:
    """A 2-D float64 value node on the tape.

    ``grad`` is allocated on first use and has the same shape as ``values``.
    """

    __slots__ = ("values", "grad", "_inputs", "_backward", "_op")

    def __init__(self, values, op: str = "leaf", inputs: tuple = ()):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D; got array of shape {arr.shape}")
        self.values = arr
        self.grad: np.ndarray | None = None
        self._inputs = inputs
        self._backward = None
        self._op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    # Operator sugar; the named functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def _is_scalar(t: Tensor) -> bool:
    return t.shape == (1, 1)


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # Undo scalar-vs-matrix broadcasting: a 1x1 operand collects the full sum.
    if shape == (1, 1) and g.shape != (1, 1):
        return np.array([[g.sum()]])
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with dA = dC @ B^T and dB = A^T @ dC."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(a.values @ b.values, "matmul", (a, b))

    def backward():
        a.accumulate(out.grad @ b.values.T)
        b.accumulate(a.values.T @ out.grad)

    out._backward = backward
    return out


def _binary(op: str, a: Tensor, b: Tensor, values, da, db) -> Tensor:
    out = Tensor(values, op, (a, b))

    def backward():
        a.accumulate(_reduce_to(da(out.grad), a.shape))
        b.accumulate(_reduce_to(db(out.grad), b.shape))

    out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("add", a, b)
    return _binary("add", a, b, a.values + b.values, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("sub", a, b)
    return _binary("sub", a, b, a.values - b.values, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("mul", a, b)
    return _binary(
        "mul", a, b, a.values * b.values,
        lambda g: g * b.values, lambda g: g * a.values,
    )


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain float constant (not a tape node)."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.values * c, "scale", (a,))

    def backward():
        a.accumulate(out.grad * c)

    out._backward = backward
    return out


def negate(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, 0.0), "relu", (a,))

    def backward():
        a.accumulate(out.grad * (a.values > 0.0))

    out._backward = backward
    return out


def _softplus_values(z: np.ndarray) -> np.ndarray:
    # Stable form: max(z, 0) + log(1 + e^{-|z|}); never overflows.
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid_values(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^z), computed in overflow-safe form; d/dz = sigmoid(z)."""
    a = _as_tensor(a)
    out = Tensor(_softplus_values(a.values), "softplus", (a,))

    def backward():
        a.accumulate(out.grad * _sigmoid_values(a.values))

    out._backward = backward
    return out


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values * a.values, "square", (a,))

    def backward():
        a.accumulate(out.grad * 2.0 * a.values)

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.T.copy(), "transpose", (a,))

    def backward():
        a.accumulate(out.grad.T)

    out._backward = backward
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1xd row vector to every row of an mxd matrix."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.shape[0] != 1 or b.shape[1] != x.shape[1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")
    out = Tensor(x.values + b.values, "add_bias", (x, b))

    def backward():
        x.accumulate(out.grad)
        b.accumulate(out.grad.sum(axis=0, keepdims=True))

    out._backward = backward
    return out


def concat_cols(tensors: list[Tensor]) -> Tensor:
    """Column-wise concatenation; backward slices gradients back to inputs."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_cols: need at least one tensor")
    rows = tensors[0].shape[0]
    for t in tensors[1:]:
        if t.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {tensors[0].shape} vs {t.shape}"
            )
    out = Tensor(np.concatenate([t.values for t in tensors], axis=1),
                 "concat_cols", tuple(tensors))

    def backward():
        col = 0
        for t in tensors:
            w = t.shape[1]
            t.accumulate(out.grad[:, col:col + w])
            col += w

    out._backward = backward
    return out


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows x[idx]; backward scatter-adds gradients to the sources."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(
            f"gather_rows: index out of range for {x.shape[0]} rows"
        )
    out = Tensor(x.values[idx], "gather_rows", (x,))

    def backward():
        g = np.zeros_like(x.values)
        np.add.at(g, idx, out.grad)
        x.accumulate(g)

    out._backward = backward
    return out


def segment_sum(x: Tensor, seg, num_segments: int) -> Tensor:
    """Row s of the result is the sum of rows of x whose segment id is s.

    Empty segments yield zero rows. Backward scatters the output gradient
    back along the segment ids.
    """
    x = _as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    if seg.ndim != 1 or seg.shape[0] != x.shape[0]:
        raise ShapeError(
            f"segment_sum: segment vector length {seg.shape} does not match rows of {x.shape}"
        )
    if num_segments < 1:
        raise ShapeError(f"segment_sum: need at least 1 segment, got {num_segments}")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise IndexError(
            f"segment_sum: segment id out of range [0, {num_segments})"
        )
    values = np.zeros((num_segments, x.shape[1]))
    np.add.at(values, seg, x.values)
    out = Tensor(values, "segment_sum", (x,))

    def backward():
        x.accumulate(out.grad[seg])

    out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    a = _as_tensor(a)
    out = Tensor(np.array([[a.values.sum()]]), "sum_all", (a,))

    def backward():
        a.accumulate(np.full_like(a.values, out.grad[0, 0]))

    out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a 1x1 loss.

    Gradients accumulate; call ``zero_grads`` between optimization steps.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1x1, got {loss.shape}")
    # Iterative post-order DFS; recursion would overflow on deep tapes.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._inputs:
            if id(child) not in visited:
                stack.append((child, False))
    loss.accumulate(np.ones((1, 1)))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


def zero_grads(params: Params) -> None:
    """Zero gradient buffers in place (buffers never allocated stay absent)."""
    for _, p in params:
        if p.grad is not None:
            p.grad.fill(0.0)


def glorot(rows: int, cols: int, rng: np.random.Generator) -> Tensor:
    """Weight matrix drawn uniformly from +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)))


def zeros(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)))


@dataclass
class AdamState:
    """First/second moment buffers and step counter for a parameter list."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.values) for _, p in params],
            v=[np.zeros_like(p.values) for _, p in params],
        )


def adam_step(params: Params, state: AdamState, lr: float) -> None:
    """One Adam update with bias correction; gradients are left untouched."""
    if len(state.m) != len(params):
        raise ShapeError(
            f"adam_step: state tracks {len(state.m)} parameters, got {len(params)}"
        )
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for i, (name, p) in enumerate(params):
        # A never-allocated buffer means zero gradient; the moments must
        # still decay so behaviour is independent of buffer allocation.
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
