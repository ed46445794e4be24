"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable computation in this package is expressed through the
primitives below. Forward values live in numpy arrays (always float64,
row-major); each primitive that sees a gradient-requiring input records its
parents and an adjoint function, so the implicit tape is the operation graph
itself. `backward(root)` replays that graph once in reverse topological
order and accumulates dRoot/dTensor into every tensor built with
`requires_grad=True`.

Gradient conventions at kinks: clamp is zero outside [min, max], abs uses
sign (0 at 0), relu uses 0 at 0. Dropout is inverted dropout (scaled by
1/(1-p) while active, identity otherwise).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeMismatchError

Array = np.ndarray


class DiffTensor:
    """Multi-dimensional float64 value participating in differentiation.

    Attributes:
        values: the forward value, np.float64, row-major.
        grad: same-shape gradient buffer, populated by backward(); repeated
            backward calls accumulate until the caller resets it to None.
        requires_grad: whether backward() should deposit a gradient here.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_adjoint")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        _parents: tuple = (),
        _adjoint: Callable[[Array], tuple] | None = None,
    ):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents = _parents
        self._adjoint = _adjoint

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operators lift plain numbers/arrays to constant tensors.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return mul(self, as_tensor(-1.0))


def as_tensor(x) -> DiffTensor:
    """Lift scalars/arrays to a constant DiffTensor; pass tensors through."""
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(x)


def parameter(values) -> DiffTensor:
    """A leaf tensor that receives gradients."""
    return DiffTensor(np.array(values, dtype=np.float64), requires_grad=True)


def _node(values: Array, parents: Sequence[DiffTensor], adjoint) -> DiffTensor:
    """Build an op output; constants are pruned from the graph."""
    if any(p.requires_grad for p in parents):
        return DiffTensor(values, True, tuple(parents), adjoint)
    return DiffTensor(values)


def backward(root: DiffTensor):
    """Accumulate dRoot/dTensor into every reachable requires_grad tensor.

    The root must be scalar. Nothing is written when the root does not
    depend on any gradient-requiring tensor.
    """
    if root.values.size != 1:
        raise ContractError(f"backward() root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return

    # Topological order of the recorded operations (iterative DFS; graphs
    # from long training batches can exceed the recursion limit).
    order: list[DiffTensor] = []
    visited: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    # Reverse sweep. Adjoints are held in a local table so repeated
    # backward() calls accumulate cleanly into .grad.
    adjoints: dict[int, Array] = {id(root): np.ones_like(root.values)}
    for node in reversed(order):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._adjoint is None:
            continue
        parent_grads = node._adjoint(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            pid = id(p)
            if pid in adjoints:
                adjoints[pid] = adjoints[pid] + pg
            else:
                adjoints[pid] = pg


def _reduce_to(grad: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_values(op: str, a: DiffTensor, b: DiffTensor, fn) -> Array:
    try:
        return fn(a.values, b.values)
    except ValueError:
        raise ShapeMismatchError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# Elementwise arithmetic (numpy broadcasting allowed)
# ---------------------------------------------------------------------------

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = _broadcast_values("add", a, b, np.add)

    def adjoint(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _node(out, (a, b), adjoint)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = _broadcast_values("sub", a, b, np.subtract)

    def adjoint(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _node(out, (a, b), adjoint)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = _broadcast_values("mul", a, b, np.multiply)

    def adjoint(g):
        return _reduce_to(g * b.values, a.shape), _reduce_to(g * a.values, b.shape)

    return _node(out, (a, b), adjoint)


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if np.any(b.values == 0.0):
        raise DomainError("div: denominator contains an exact zero element")
    out = _broadcast_values("div", a, b, np.divide)

    def adjoint(g):
        ga = _reduce_to(g / b.values, a.shape)
        gb = _reduce_to(-g * a.values / (b.values * b.values), b.shape)
        return ga, gb

    return _node(out, (a, b), adjoint)


def square(x: DiffTensor) -> DiffTensor:
    out = x.values * x.values

    def adjoint(g):
        return (2.0 * x.values * g,)

    return _node(out, (x,), adjoint)


def sqrt(x: DiffTensor) -> DiffTensor:
    if np.any(x.values < 0.0):
        raise DomainError("sqrt: negative input element")
    out = np.sqrt(x.values)

    def adjoint(g):
        # Gradient domain is x > 0; callers keep inputs off zero.
        return (g * 0.5 / out,)

    return _node(out, (x,), adjoint)


def absolute(x: DiffTensor) -> DiffTensor:
    out = np.abs(x.values)
    sign = np.sign(x.values)  # subgradient 0 at 0

    def adjoint(g):
        return (g * sign,)

    return _node(out, (x,), adjoint)


def clamp(x: DiffTensor, min_value: float | None = None, max_value: float | None = None) -> DiffTensor:
    out = np.clip(x.values, min_value, max_value)
    mask = np.ones_like(x.values)
    if min_value is not None:
        mask *= x.values >= min_value
    if max_value is not None:
        mask *= x.values <= max_value

    def adjoint(g):
        return (g * mask,)

    return _node(out, (x,), adjoint)


def relu(x: DiffTensor) -> DiffTensor:
    out = np.maximum(x.values, 0.0)
    mask = x.values > 0.0

    def adjoint(g):
        return (g * mask,)

    return _node(out, (x,), adjoint)


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------

def sum_axis(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * x.values.ndim), x.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _node(out, (x,), adjoint)


def mean_all(x: DiffTensor) -> DiffTensor:
    """Scalar mean of all elements (composition of sum and scale)."""
    return mul(sum_axis(x), as_tensor(1.0 / x.values.size))


def concat(tensors: Iterable[DiffTensor], axis: int = 0) -> DiffTensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatchError(
            "concat", ts[0].shape, ts[-1].shape, f"along axis {axis}"
        ) from None
    sizes = [t.values.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(ts), adjoint)


def take_axis(x: DiffTensor, indices, axis: int) -> DiffTensor:
    """Gather `indices` along `axis`; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(x.values, idx, axis=axis)

    def adjoint(g):
        gx = np.zeros_like(x.values)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _node(out, (x,), adjoint)


def reshape(x: DiffTensor, shape) -> DiffTensor:
    out = x.values.reshape(shape)

    def adjoint(g):
        return (g.reshape(x.shape),)

    return _node(out, (x,), adjoint)


def transpose(x: DiffTensor, axes) -> DiffTensor:
    axes = tuple(axes)
    out = x.values.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def adjoint(g):
        return (g.transpose(inverse),)

    return _node(out, (x,), adjoint)


def euclidean_norm_lastaxis(x: DiffTensor) -> DiffTensor:
    """L2 norm over the last axis: (..., D) -> (...)."""
    sq = np.sum(x.values * x.values, axis=-1)
    out = np.sqrt(sq)

    def adjoint(g):
        # Zero-length vectors get subgradient 0 to keep grads finite.
        safe = np.where(out > 0.0, out, 1.0)
        return (g[..., None] * x.values / safe[..., None] * (out > 0.0)[..., None],)

    return _node(out, (x,), adjoint)


# ---------------------------------------------------------------------------
# Linear algebra and neural-net primitives
# ---------------------------------------------------------------------------

def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeMismatchError("matmul", a.shape, b.shape, "operands must be >= 2-D")
    out = _broadcast_values("matmul", a, b, np.matmul)

    def adjoint(g):
        ga = _reduce_to(np.matmul(g, np.swapaxes(b.values, -1, -2)), a.shape)
        gb = _reduce_to(np.matmul(np.swapaxes(a.values, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, (a, b), adjoint)


def conv1d_dilated(x: DiffTensor, weight: DiffTensor, dilation: int = 1) -> DiffTensor:
    """Temporal convolution without padding.

    Args:
        x: (N, C_in, L) input sequence.
        weight: (C_out, C_in, K) kernel.
        dilation: spacing between kernel taps.

    Returns:
        (N, C_out, L_out) with L_out = L - dilation * (K - 1).
    """
    if x.values.ndim != 3 or weight.values.ndim != 3:
        raise ShapeMismatchError("conv1d_dilated", x.shape, weight.shape,
                                 "expected (N,C_in,L) and (C_out,C_in,K)")
    n, c_in, length = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in != c_in_w:
        raise ShapeMismatchError("conv1d_dilated", x.shape, weight.shape,
                                 "channel mismatch")
    if dilation < 1:
        raise ContractError(f"conv1d_dilated: dilation must be >= 1, got {dilation}")
    l_out = length - dilation * (k - 1)
    if l_out < 1:
        raise ShapeMismatchError(
            "conv1d_dilated", x.shape, weight.shape,
            f"input length {length} shorter than receptive field {dilation * (k - 1) + 1}")

    # Unoptimized einsum keeps the per-position accumulation order
    # independent of the sequence length, so running the stack over a long
    # sequence is bit-identical to running each window separately (BLAS
    # matmul picks different kernels per shape and loses that property).
    out = np.zeros((n, c_out, l_out))
    for i in range(k):
        out += np.einsum("oc,ncl->nol", weight.values[:, :, i],
                         x.values[:, :, i * dilation:i * dilation + l_out])

    def adjoint(g):
        gx = np.zeros_like(x.values)
        gw = np.zeros_like(weight.values)
        for i in range(k):
            sl = slice(i * dilation, i * dilation + l_out)
            gx[:, :, sl] += np.einsum("oc,nol->ncl", weight.values[:, :, i], g)
            gw[:, :, i] = np.einsum("nol,ncl->oc", g, x.values[:, :, sl])
        return gx, gw

    return _node(out, (x, weight), adjoint)


def batchnorm_1d(
    x: DiffTensor,
    gamma: DiffTensor,
    beta: DiffTensor,
    running_mean: Array,
    running_var: Array,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> DiffTensor:
    """Per-channel batch normalization over (batch x time).

    Args:
        x: (N, C, L).
        gamma, beta: (C,) learnable scale/shift.
        running_mean, running_var: (C,) buffers, updated in place when
            training (biased variance, momentum 0.1).
        training: batch statistics (gradients flow through them) when True,
            running averages (affine transform) when False.
    """
    if x.values.ndim != 3:
        raise ShapeMismatchError("batchnorm_1d", x.shape, gamma.shape,
                                 "expected (N,C,L) input")
    if training:
        mean = x.values.mean(axis=(0, 2))
        var = x.values.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma.values[None, :, None] * xhat + beta.values[None, :, None]

    def adjoint(g):
        g_gamma = np.sum(g * xhat, axis=(0, 2))
        g_beta = np.sum(g, axis=(0, 2))
        g_xhat = g * gamma.values[None, :, None]
        if training:
            m = x.shape[0] * x.shape[2]
            gx = (inv_std[None, :, None] / m) * (
                m * g_xhat
                - np.sum(g_xhat, axis=(0, 2))[None, :, None]
                - xhat * np.sum(g_xhat * xhat, axis=(0, 2))[None, :, None]
            )
        else:
            gx = g_xhat * inv_std[None, :, None]
        return gx, g_gamma, g_beta

    return _node(out, (x, gamma, beta), adjoint)


def dropout(x: DiffTensor, p: float, rng: np.random.Generator | None, training: bool) -> DiffTensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: training mode needs a seeded Generator")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    out = x.values * scale

    def adjoint(g):
        return (g * scale,)

    return _node(out, (x,), adjoint)
