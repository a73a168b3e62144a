"""Dense float64 tensors with reverse-mode gradients.

Every primitive returns a :class:`Node` holding its forward value and a
closure mapping the output gradient to one gradient per parent. Parents that
do not require gradients are dropped at construction time, so inference
builds no graph at all.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteResult, NotScalarLoss, ShapeMismatch

DTYPE = np.float64
LN_EPS = 1e-5
RMS_EPS = 1e-5


class Node:
    __slots__ = ("value", "_grad", "parents", "backward_fn", "requires_grad", "name", "visits")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_fn: Callable | None = None,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=DTYPE)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self._grad = None
        self.visits = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def parameter(value, name: str | None = None) -> Node:
    return Node(np.array(value, dtype=DTYPE), requires_grad=True, name=name)


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _require_finite(value: np.ndarray, op: str) -> None:
    if not np.isfinite(value).all():
        raise NonFiniteResult(f"{op} produced NaN or Inf")


def _result(value, parents: Sequence[Node], backward_fn, op: str) -> Node:
    value = np.asarray(value, dtype=DTYPE)
    _require_finite(value, op)
    if not any(p.requires_grad for p in parents):
        return Node(value)
    return Node(value, parents, backward_fn, requires_grad=True, name=op)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- elementwise binary ---------------------------------------------------


def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "add")
    return _result(
        a.value + b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


broadcast_add = add


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        a.value - b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        a.value * b.value,
        (a, b),
        lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)),
        "mul",
    )


def matmul(a, b) -> Node:
    """``a @ b`` for a of shape (..., n) and a 2-D b of shape (n, m)."""
    a, b = constant(a), constant(b)
    if b.value.ndim != 2 or a.value.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    n, m = b.shape

    def backward(g):
        ga = g @ b.value.T
        gb = a.value.reshape(-1, n).T @ g.reshape(-1, m)
        return ga, gb

    return _result(a.value @ b.value, (a, b), backward, "matmul")


# --- elementwise unary ----------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def exp(x) -> Node:
    x = constant(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def tanh(x) -> Node:
    x = constant(x)
    y = np.tanh(x.value)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Node:
    x = constant(x)
    y = _sigmoid(x.value)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softplus(x) -> Node:
    x = constant(x)
    return _result(
        np.logaddexp(0.0, x.value), (x,), lambda g: (g * _sigmoid(x.value),), "softplus"
    )


def silu(x) -> Node:
    x = constant(x)
    s = _sigmoid(x.value)
    return _result(
        x.value * s, (x,), lambda g: (g * (s + x.value * s * (1.0 - s)),), "silu"
    )


def mish(x) -> Node:
    """x * tanh(softplus(x))."""
    x = constant(x)
    t = np.tanh(np.logaddexp(0.0, x.value))

    def backward(g):
        return (g * (t + x.value * (1.0 - t * t) * _sigmoid(x.value)),)

    return _result(x.value * t, (x,), backward, "mish")


# --- reductions and reshaping ---------------------------------------------


def sum_(x, axis=None) -> Node:
    x = constant(x)
    y = x.value.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(y, (x,), backward, "sum")


def mean(x, axis=None) -> Node:
    x = constant(x)
    count = x.value.size if axis is None else x.shape[axis]
    y = x.value.mean(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(y, (x,), backward, "mean")


mean_over_axis = mean


def slice_(x, key) -> Node:
    x = constant(x)

    def backward(g):
        out = np.zeros_like(x.value)
        if _has_fancy(key):
            np.add.at(out, key, g)
        else:
            out[key] = g
        return (out,)

    return _result(x.value[key], (x,), backward, "slice")


def _has_fancy(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def concat(xs: Sequence, axis: int = 0) -> Node:
    xs = [constant(x) for x in xs]
    try:
        y = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _result(y, xs, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def transpose(x, axes: Sequence[int] | None = None) -> Node:
    x = constant(x)
    axes = tuple(reversed(range(x.value.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(
        np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def reshape(x, shape: Sequence[int]) -> Node:
    x = constant(x)
    try:
        y = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {exc}") from None
    return _result(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


# --- normalization --------------------------------------------------------


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Node:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = constant(x), constant(gain), constant(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatch(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore"):
        var = x.value.var(axis=-1, keepdims=True)
    _require_finite(var, "layer_norm variance")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv_std

    def backward(g):
        gx_hat = g * gain.value
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.value.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gain.value + bias.value, (x, gain, bias), backward, "layer_norm")


def rms_norm(x, gain, eps: float = RMS_EPS) -> Node:
    x, gain = constant(x), constant(gain)
    if gain.shape != x.shape[-1:]:
        raise ShapeMismatch(f"rms_norm: x {x.shape}, gain {gain.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        ms = (x.value * x.value).mean(axis=-1, keepdims=True)
    _require_finite(ms, "rms_norm mean square")
    inv_rms = 1.0 / np.sqrt(ms + eps)
    xn = x.value * inv_rms

    def backward(g):
        gxn = g * gain.value
        gx = inv_rms * (gxn - xn * (gxn * xn).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.value.ndim - 1))
        return gx, (g * xn).sum(axis=lead)

    return _result(xn * gain.value, (x, gain), backward, "rms_norm")


# --- convolutions ---------------------------------------------------------


def conv1d(x, w, b=None, stride: int = 1, padding: int | str = "same") -> Node:
    """Convolve a (time, channels_in) signal with (channels_out, channels_in, kernel) weights.

    ``padding="same"`` zero-pads (kernel - 1) // 2 frames on each side.
    """
    x, w = constant(x), constant(w)
    if x.value.ndim != 2 or w.value.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape}, weight {w.shape}")
    c_out, c_in, k = w.shape
    pad = (k - 1) // 2 if padding == "same" else int(padding)
    t_in = x.shape[0]
    t_pad = t_in + 2 * pad
    if t_pad < k:
        raise ShapeMismatch(f"conv1d: padded length {t_pad} shorter than kernel {k}")
    xp = np.pad(x.value, ((pad, pad), (0, 0)))
    # windows[t, c, j] = xp[t * stride + j, c]
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride]
    t_out = windows.shape[0]
    y = np.einsum("tcj,ocj->to", windows, w.value)
    parents = [x, w]
    if b is not None:
        b = constant(b)
        if b.shape != (c_out,):
            raise ShapeMismatch(f"conv1d: bias {b.shape}, expected ({c_out},)")
        y = y + b.value
        parents.append(b)

    def backward(g):
        gw = np.einsum("to,tcj->ocj", g, windows)
        gwin = np.einsum("to,ocj->tjc", g, w.value)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j : j + stride * (t_out - 1) + 1 : stride] += gwin[:, j]
        grads = [gxp[pad : pad + t_in], gw]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _result(y, parents, backward, "conv1d")


def causal_depthwise_conv1d(x, w, b) -> Node:
    """Per-channel causal convolution: y[t, c] = b[c] + sum_j w[c, j] x[t - K + 1 + j, c]."""
    x, w, b = constant(x), constant(w), constant(b)
    if x.value.ndim != 2 or w.shape[0] != x.shape[1] or b.shape != (x.shape[1],):
        raise ShapeMismatch(f"depthwise conv: input {x.shape}, weight {w.shape}, bias {b.shape}")
    k = w.shape[1]
    t_in = x.shape[0]
    xp = np.pad(x.value, ((k - 1, 0), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, C, K)
    y = np.einsum("tcj,cj->tc", windows, w.value) + b.value

    def backward(g):
        gw = np.einsum("tc,tcj->cj", g, windows)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j : j + t_in] += g * w.value[:, j]
        return gxp[k - 1 :], gw, g.sum(axis=0)

    return _result(y, (x, w, b), backward, "causal_depthwise_conv1d")


# --- selective scan -------------------------------------------------------


def selective_scan(x, dt, a, bmat, cmat) -> Node:
    """Causal scan with one scalar decay per head.

    Shapes: x (T, H, P), dt (T, H), a (H,), bmat (T, N), cmat (T, N).
    State per head is (P, N):

        state_t = exp(dt_t * a) * state_{t-1} + dt_t * outer(x_t, B_t)
        y_t     = state_t @ C_t
    """
    x, dt, a, bmat, cmat = (constant(v) for v in (x, dt, a, bmat, cmat))
    t_len, heads, p = x.shape if x.value.ndim == 3 else (None, None, None)
    if (
        t_len is None
        or dt.shape != (t_len, heads)
        or a.shape != (heads,)
        or bmat.value.ndim != 2
        or bmat.shape[0] != t_len
        or cmat.shape != bmat.shape
    ):
        raise ShapeMismatch(
            f"selective_scan: x {x.shape}, dt {dt.shape}, a {a.shape}, "
            f"B {bmat.shape}, C {cmat.shape}"
        )
    n = bmat.shape[1]
    X, DT, A, B, C = x.value, dt.value, a.value, bmat.value, cmat.value
    decay = np.exp(DT * A)  # (T, H)
    inp = (DT[:, :, None] * X)[:, :, :, None] * B[:, None, None, :]  # (T, H, P, N)
    states = np.empty((t_len, heads, p, n))
    h = np.zeros((heads, p, n))
    for t in range(t_len):
        h = decay[t][:, None, None] * h + inp[t]
        states[t] = h
    y = np.einsum("thpn,tn->thp", states, C)

    def backward(gy):
        gstates = np.empty_like(states)
        gh = np.zeros((heads, p, n))
        for t in range(t_len - 1, -1, -1):
            gh = gy[t][:, :, None] * C[t] + (
                gh * decay[t + 1][:, None, None] if t + 1 < t_len else 0.0
            )
            gstates[t] = gh
        prev = np.concatenate([np.zeros((1, heads, p, n)), states[:-1]])
        g_decay = np.einsum("thpn,thpn->th", gstates, prev) * decay
        gs_b = np.einsum("thpn,tn->thp", gstates, B)
        gx = DT[:, :, None] * gs_b
        gdt = np.einsum("thp,thp->th", X, gs_b) + g_decay * A
        ga = (g_decay * DT).sum(axis=0)
        gb = np.einsum("thpn,thp->tn", gstates, DT[:, :, None] * X)
        gc = np.einsum("thp,thpn->tn", gy, states)
        return gx, gdt, ga, gb, gc

    return _result(y, (x, dt, a, bmat, cmat), backward, "selective_scan")


# --- backward -------------------------------------------------------------


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """Propagate d(loss)/d(node) to every reachable node.

    Each node's ``grad`` is overwritten (not accumulated across calls).
    Returns the gradients of the leaf nodes that require them.
    """
    if loss.value.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[Node, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node))
        node.grad = g
        node.visits += 1
        if node.backward_fn is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves

