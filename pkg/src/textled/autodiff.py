"""Minimal dense-tensor math with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays.  Ops record parents and a backward
closure; `backward` walks the graph once in reverse topological order.
Every public op checks its output for NaN/Inf and raises ShapeMismatch on
incompatible operands.
"""

import math

import numpy as np

from .errors import DoubleBackward, NonScalarLoss, ShapeMismatch

LOG_CLAMP = 1e-12

# clamp events in log_clamped since the last reset; reported by training
_clamp_events = 0


def clamp_event_count() -> int:
    return _clamp_events


def reset_clamp_events() -> None:
    global _clamp_events
    _clamp_events = 0


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def in_graph(self):
        return self.requires_grad or self._backward_fn is not None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    # a sum is finite iff no NaN/Inf is present (opposite infinities sum to NaN)
    if not math.isfinite(float(data.sum())):
        raise ShapeMismatch("non-finite values produced; numerical contract violated")
    out = Tensor(data)
    if any(p.in_graph for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- elementwise and linear algebra ---

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from None
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul operands must have >= 2 dims")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: {a.shape} vs {b.shape}") from None

    def backward(g):
        # batched activations against a shared 2-D weight: collapse the batch
        # so the weight gradient is one 2-D product instead of a stacked
        # product followed by a sum
        if b.data.ndim == 2 and a.data.ndim > 2:
            ga = np.matmul(g, b.data.T)
            gb = a.data.reshape(-1, a.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), backward)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: {old} -> {shape}") from None
    return _make(data, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat: incompatible shapes") from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tensors, backward)


def concat_rows(tensors) -> Tensor:
    return concat(tensors, axis=-2)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeMismatch(f"narrow: [{start},{start + length}) outside axis of size {a.data.shape[axis]}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(a.data[index], (a,), backward)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    return narrow(a, a.data.ndim - 2, start, stop - start)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# --- nonlinearities and normalization ---

def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _make(out, (a,), backward)


def log_clamped(a, eps: float = LOG_CLAMP) -> Tensor:
    """log with the argument clamped at `eps`; clamped entries get zero
    gradient and are counted in the module clamp counter."""
    global _clamp_events
    a = _as_tensor(a)
    clamped = a.data < eps
    _clamp_events += int(clamped.sum())
    safe = np.maximum(a.data, eps)

    def backward(g):
        grad = g / safe
        grad[clamped] = 0.0
        return (grad,)

    return _make(np.log(safe), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh-approximation GELU (smooth, so finite-difference checks behave)."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dt = (1.0 - t**2) * dinner
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _make(out, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatch(f"layer_norm affine {gain.shape}/{bias.shape} vs features {x.shape[-1:]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gain.data * xhat + bias.data

    def backward(g):
        sum_axes = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=sum_axes)
        g_bias = g.sum(axis=sum_axes)
        g_xhat = g * gain.data
        m1 = g_xhat.mean(axis=-1, keepdims=True)
        m2 = (g_xhat * xhat).mean(axis=-1, keepdims=True)
        g_x = inv_std * (g_xhat - m1 - xhat * m2)
        return g_x, g_gain, g_bias

    return _make(out, (x, gain, bias), backward)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; gradient scatter-adds."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.data.shape[0]:
        raise ShapeMismatch(f"embedding ids outside table of {table.data.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(table.data[ids], (table,), backward)


def cross_entropy(probs, one_hot, weights=None) -> Tensor:
    """Mean negative log-likelihood over scored rows.

    `one_hot` selects the target class per row; `weights` (optional, same
    leading shape) zeroes out padded rows.  N is the number of scored rows.
    """
    probs = _as_tensor(probs)
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if one_hot.shape != probs.shape:
        raise ShapeMismatch(f"cross_entropy: targets {one_hot.shape} vs probs {probs.shape}")
    picked = mul(log_clamped(probs), Tensor(one_hot))
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        picked = mul(picked, Tensor(weights[..., None]))
        n_scored = weights.sum()
    else:
        n_scored = float(np.prod(probs.shape[:-1]))
    if n_scored <= 0:
        raise ShapeMismatch("cross_entropy: no scored positions")
    return scale(tensor_sum(picked), -1.0 / n_scored)


# --- graph walking ---

def backward(loss: Tensor) -> None:
    """Populate `.grad` on every graph tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}, expected a scalar")
    if loss._consumed:
        raise DoubleBackward("backward already ran on this graph")
    loss._consumed = True

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.in_graph and id(parent) not in visited:
                stack.append((parent, False))

    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.in_graph:
                continue
            # never mutate in place: returned arrays may be shared or views
            parent.grad = g if parent.grad is None else parent.grad + g


def grad_check(scalar_function, params: dict, eps: float = 1e-5, sample: int = 0, rng=None,
               select: str = "random") -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `scalar_function` recomputes the loss from the current parameter values.
    `sample` > 0 checks that many coordinates per parameter (all coordinates
    when 0): chosen randomly with `rng` when `select` is "random", or the
    largest-magnitude analytic gradients when `select` is "largest".  The
    latter avoids coordinates whose true gradient sits below the rounding
    noise of the finite differences, where the comparison is meaningless.
    """
    loss = scalar_function()
    backward(loss)
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        if sample and sample < size:
            if select == "largest":
                gflat = np.abs(grads[name].reshape(-1))
                coords = [c for c in np.argsort(gflat)[-sample:] if gflat[c] > 1e-8]
                # a parameter can have a structurally zero gradient (an
                # attention key bias shifts every score equally, so softmax
                # cancels it); finite differences there measure only
                # rounding noise, so such coordinates are skipped
            else:
                coords = rng.choice(size, size=sample, replace=False)
        else:
            coords = range(size)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + eps
            up = scalar_function().item()
            flat[idx] = original - eps
            down = scalar_function().item()
            flat[idx] = original
            fd = (up - down) / (2 * eps)
            ad = grads[name].reshape(-1)[idx]
            rel = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            worst = max(worst, rel)
    return worst
