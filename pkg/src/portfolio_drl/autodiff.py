"""A small reverse-mode autodiff engine over numpy float64 arrays.

Each op returns a :class:`Tensor` holding the forward value and a closure
that maps the output gradient onto its inputs. ``backward`` runs the
closures once in reverse topological order and then releases the graph;
a second ``backward`` on the same graph raises :class:`GraphError`.

Only the ops the actor-critic network and the PPO loss need are provided.
"""

from __future__ import annotations

import builtins
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._released = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents and self._backward is None and not self._released

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if not self.requires_grad:
            raise GraphError("tensor is not attached to any parameter (detached graph)")
        if self._released:
            raise GraphError("graph already consumed by backward(); run the forward pass again")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops ops from recording a graph."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev, _GRAD_ENABLED = _GRAD_ENABLED, False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


_BRANCHES = None


class record_branches:
    """Collect the discrete choices (relu masks, clamp masks, min/max picks,
    pool argmaxes) made by ops inside the block. Two forward passes with equal
    records ran through the same piecewise-smooth region."""

    def __enter__(self):
        global _BRANCHES
        self._prev, _BRANCHES = _BRANCHES, []
        return _BRANCHES

    def __exit__(self, *exc):
        global _BRANCHES
        _BRANCHES = self._prev


def _branch(choice):
    if _BRANCHES is not None:
        _BRANCHES.append(np.asarray(choice).copy())


def _node(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape)))) if g.ndim > len(shape) else g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


# ---- elementwise -------------------------------------------------------

def add(a, b):
    a, b = tensor(a), tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = tensor(a), tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = tensor(a), tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = tensor(a), tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def exp(a):
    a = tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a):
    a = tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a):
    a = tensor(a)
    mask = a.data > 0
    _branch(mask)
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
    a = tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    _branch(inside)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = tensor(a), tensor(b)
    pick_a = a.data <= b.data
    _branch(pick_a)
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = tensor(a), tensor(b)
    pick_a = a.data >= b.data
    _branch(pick_a)
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


# ---- reductions and shape ----------------------------------------------

def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(out, (a,), back)


def mean(a, axis=None):
    a = tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def reshape(a, shape):
    a = tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a, b):
    a, b = tensor(a), tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# ---- layers --------------------------------------------------------------

def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape (N, in) and ``weight`` (out, in)."""
    x, weight = tensor(x), tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        bias = tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def back(g):
        grads = [g @ wd if x.requires_grad else None, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _node(out, parents, back)


def conv2d(x, kernel, bias=None):
    """3x3-style cross-correlation, stride 1, zero same-padding.

    ``x``: (N, C, H, W); ``kernel``: (O, C, kh, kw) with odd kh, kw.
    """
    x, kernel = tensor(x), tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d needs odd kernel sizes")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # (N, C, H, W, kh, kw) -> (N*H*W, C*kh*kw)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, -1)
    kmat = kernel.data.reshape(o, -1)
    out = cols @ kmat.T
    parents = [x, kernel]
    if bias is not None:
        bias = tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {o} output channels")
        out = out + bias.data
        parents.append(bias)
    out = out.reshape(n, h, w, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, o)
        gk = (g2.T @ cols).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(n, h, w, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _node(out, parents, back)


def max_pool2d(x, pool_shape=(1, 2)):
    """Non-overlapping max pool over the last two axes of (N, C, H, W).

    Ragged edges are padded with -inf on the bottom/right. The gradient goes
    to the first maximum of each window in row-major order.
    """
    x = tensor(x)
    ph, pw = pool_shape
    n, c, h, w = x.shape
    if (ph, pw) == (1, 1):
        return x
    oh, ow = -(-h // ph), -(-w // pw)
    xp = x.data
    if oh * ph != h or ow * pw != w:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, oh * ph - h), (0, ow * pw - w)), constant_values=-np.inf)
    win = xp.reshape(n, c, oh, ph, ow, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, ph * pw)
    idx = win.argmax(axis=-1)[..., None]
    _branch(idx)
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def back(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gp = gw.reshape(n, c, oh, ow, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * ph, ow * pw)
        return (gp[:, :, :h, :w],)

    return _node(out, (x,), back)


# ---- optimisation ----------------------------------------------------------

def global_norm(grads) -> float:
    return math.sqrt(builtins.sum(float(np.vdot(g, g)) for g in grads))


class Adam:
    """Adam with optional global gradient-norm clipping."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, max_grad_norm=None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = global_norm(grads)
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_dict(self):
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
