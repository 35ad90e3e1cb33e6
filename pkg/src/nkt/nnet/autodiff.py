"""Reverse-mode differentiation over a small, closed op set.

Every op builds a node in a dynamic tape; backward() walks the tape in
reverse topological order and accumulates exact adjoints. The op set is
deliberately closed: adding an op means writing its adjoint here, which
keeps every gradient in the package auditable against finite
differences.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, StateError

__all__ = [
    "Tensor",
    "Parameter",
    "constant",
    "add",
    "mul",
    "matmul",
    "affine",
    "conv1d",
    "bias_add",
    "asinh",
    "tanh",
    "sigmoid",
    "relu",
    "identity",
    "dropout",
    "concat",
    "crop",
    "reshape",
    "transpose",
    "mean_all",
    "sum_all",
    "embedding",
    "channel_embedding",
    "channel_mix",
    "softmax_cross_entropy",
    "mse",
    "backward",
    "softmax",
    "glorot_uniform",
    "gradient_check",
]


class Tensor:
    """A tape node: a float64 value plus the closure that propagates
    its adjoint to its parents."""

    __slots__ = ("value", "grad", "parents", "back", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, parents=(), back=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.back = back
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape


class Parameter(Tensor):
    """A named leaf tensor that optimizers update in place."""

    def __init__(self, value, name):
        super().__init__(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape` to undo numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _node(value, parents, back, name=None) -> Tensor:
    return Tensor(value, parents=parents, back=back, name=name)


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g, out):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g, out):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (N, F) @ (F, G)."""

    def back(g, out):
        return g @ b.value.T, a.value.T @ g

    return _node(a.value @ b.value, (a, b), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (N, F) @ w (F, G) + b (G,)."""
    if x.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
        raise ShapeError(
            f"affine: input {x.value.shape} incompatible with weights {w.value.shape}"
        )

    def back(g, out):
        return g @ w.value.T, x.value.T @ g, g.sum(axis=0)

    return _node(x.value @ w.value + b.value, (x, w, b), back)


def conv1d(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Causal dilated convolution.

    x is (N, C_in, T), w is (C_out, C_in, K); output is
    (N, C_out, T - (K-1) * dilation). Kernel tap k reads the input at
    offset k * dilation, so the highest tap aligns with the newest
    sample of each window.
    """
    n, c_in, T = x.value.shape
    c_out, c_in_w, K = w.value.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d: {c_in} input channels vs kernel expecting {c_in_w}")
    t_out = T - (K - 1) * dilation
    if t_out < 1:
        raise ShapeError(
            f"conv1d: length {T} too short for kernel {K} at dilation {dilation}"
        )
    out = np.zeros((n, c_out, t_out))
    for k in range(K):
        seg = x.value[:, :, k * dilation : k * dilation + t_out]
        out += np.einsum("oi,nit->not", w.value[:, :, k], seg, optimize=True)

    def back(g, node):
        gx = np.zeros_like(x.value)
        gw = np.zeros_like(w.value)
        for k in range(K):
            sl = slice(k * dilation, k * dilation + t_out)
            gx[:, :, sl] += np.einsum("oi,not->nit", w.value[:, :, k], g, optimize=True)
            gw[:, :, k] = np.einsum("not,nit->oi", g, x.value[:, :, sl], optimize=True)
        return gx, gw

    return _node(out, (x, w), back)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias (C,) to a (N, C, T) tensor."""

    def back(g, out):
        return g, g.sum(axis=(0, 2))

    return _node(x.value + b.value[None, :, None], (x, b), back)


def _elementwise(x: Tensor, fn, dfn) -> Tensor:
    value = fn(x.value)

    def back(g, out):
        return (g * dfn(x.value, value),)

    return _node(value, (x,), back)


def asinh(x: Tensor) -> Tensor:
    return _elementwise(x, np.arcsinh, lambda v, y: 1.0 / np.sqrt(v * v + 1.0))


def tanh(x: Tensor) -> Tensor:
    return _elementwise(x, np.tanh, lambda v, y: 1.0 - y * y)


def sigmoid(x: Tensor) -> Tensor:
    return _elementwise(
        x, lambda v: 1.0 / (1.0 + np.exp(-v)), lambda v, y: y * (1.0 - y)
    )


def relu(x: Tensor) -> Tensor:
    return _elementwise(x, lambda v: np.maximum(v, 0.0), lambda v, y: (v > 0).astype(float))


def identity(x: Tensor) -> Tensor:
    return _elementwise(x, lambda v: v, lambda v, y: np.ones_like(v))


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-rate) at train time."""
    if not training or rate == 0.0:
        return identity(x)
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)

    def back(g, out):
        return (g * mask,)

    return _node(x.value * mask, (x,), back)


def concat(tensors, axis: int) -> Tensor:
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g, out):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), back)


def crop(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start:stop) along one axis; the adjoint zero-pads."""
    idx = [slice(None)] * x.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def back(g, out):
        gx = np.zeros_like(x.value)
        gx[idx] = g
        return (gx,)

    return _node(x.value[idx], (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.value.shape

    def back(g, out):
        return (g.reshape(old),)

    return _node(x.value.reshape(shape), (x,), back)


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def back(g, out):
        return (g.transpose(inverse),)

    return _node(x.value.transpose(axes), (x,), back)


def mean_all(x: Tensor) -> Tensor:
    size = x.value.size

    def back(g, out):
        return (np.full(x.value.shape, g / size),)

    return _node(x.value.mean(), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    def back(g, out):
        return (np.full(x.value.shape, g),)

    return _node(x.value.sum(), (x,), back)


def embedding(table: Tensor, indices) -> Tensor:
    """Gather rows: table (V, E) indexed by an integer array."""
    indices = np.asarray(indices)

    def back(g, out):
        gt = np.zeros_like(table.value)
        np.add.at(gt, indices, g)
        return (gt,)

    return _node(table.value[indices], (table,), back)


def channel_embedding(tables: Tensor, tokens) -> Tensor:
    """Per-channel gather: tables (C, V, E), tokens (C, T) -> (C, T, E)."""
    tokens = np.asarray(tokens)
    c_idx = np.arange(tokens.shape[0])[:, None]

    def back(g, out):
        gt = np.zeros_like(tables.value)
        np.add.at(gt, (c_idx, tokens), g)
        return (gt,)

    return _node(tables.value[c_idx, tokens], (tables,), back)


def channel_mix(x: Tensor, m: Tensor) -> Tensor:
    """Mix the leading axis: out[c'] = sum_c m[c', c] x[c] for (C, ...) input."""

    def back(g, out):
        gx = np.tensordot(m.value.T, g, axes=(1, 0))
        gm = np.tensordot(g.reshape(g.shape[0], -1), x.value.reshape(x.value.shape[0], -1).T, axes=(1, 0))
        return gx, gm

    return _node(np.tensordot(m.value, x.value, axes=(1, 0)), (x, m), back)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax for evaluation paths."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of (N, K) logits against integer labels (N,)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.value.shape[0],):
        raise ShapeError(
            f"cross-entropy needs (N, K) logits and (N,) labels, got "
            f"{logits.value.shape} and {labels.shape}"
        )
    n = labels.shape[0]
    probs = softmax(logits.value, axis=1)
    nll = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300))

    def back(g, out):
        gl = probs.copy()
        gl[np.arange(n), labels] -= 1.0
        return (g * gl / n,)

    return _node(nll.mean(), (logits,), back)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target array."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.value.shape:
        raise ShapeError(f"mse: prediction {pred.value.shape} vs target {target.shape}")
    diff = pred.value - target

    def back(g, out):
        return (g * 2.0 * diff / diff.size,)

    return _node(np.mean(diff**2), (pred,), back)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d node into .grad over every reachable node."""
    if loss.value.ndim != 0:
        raise ShapeError("backward starts from a scalar loss")
    if loss.back is None and not loss.parents:
        raise StateError("backward called on a leaf: run a forward pass first")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.back is None or node.grad is None:
            continue
        grads = node.back(node.grad, node)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad and parent.back is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + g


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def gradient_check(build_loss, params, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    build_loss() must rebuild the forward pass from the current
    parameter values and return the scalar loss tensor. Relative error
    uses max(1, |analytic|, |numeric|) as the denominator per entry.
    """
    loss = build_loss()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = build_loss().value
            flat[i] = orig - h
            lo = build_loss().value
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
