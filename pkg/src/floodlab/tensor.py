"""A small float64 tensor with reverse-mode automatic differentiation.

Only what the transformer detector needs: broadcasting arithmetic, batched
matmul, reshapes, reductions, softmax, exact GELU, sigmoid, batch norm,
dropout, fused scaled-dot-product attention and BCE-with-logits.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the graph once in reverse
topological order. Randomness is never drawn here except from generators the
caller passes in.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np
from scipy.special import erf

from floodlab.errors import DegenerateData, InvalidArgument, ShapeError

DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise arithmetic -------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


# shape ops ---------------------------------------------------------------------

def matmul(a, b):
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as e:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from e

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from e
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


# activations -------------------------------------------------------------------

def sigmoid_np(x):
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = sigmoid_np(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result(out, (a,), backward)


def softmax_np(x, axis=-1):
    y = x - x.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    return y


def softmax(a, axis=-1):
    a = as_tensor(a)
    out = softmax_np(a.data, axis)

    def backward(g):
        t = g * out
        t -= out * t.sum(axis=axis, keepdims=True)
        return (t,)

    return _result(out, (a,), backward)


def _take_buffer(shape):
    pool = getattr(_state, "pool", None)
    if pool:
        for i, buf in enumerate(pool):
            if buf.shape == shape:
                return pool.pop(i)
    return np.empty(shape, dtype=DTYPE)


def _give_buffer(buf):
    # Recycling the probability buffer avoids re-faulting ~100 MB of fresh
    # pages on every training step.
    pool = getattr(_state, "pool", None)
    if pool is None:
        pool = _state.pool = []
    pool.append(buf)
    del pool[:-2]


def attention(q, k, v, chunk=2, return_weights=False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes.

    Mathematically identical to composing matmul/softmax/matmul, but runs over
    ``chunk`` score matrices at a time so each piece stays cache-resident. The
    attention probabilities are kept for the backward pass (or returned).
    Backward may run only once per forward: it recycles the stored
    probabilities.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim < 2 or q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ShapeError(f"attention batch shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention operand shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    lead = q.shape[:-2]
    lq, dk = q.shape[-2:]
    lk, dv = v.shape[-2:]
    scale = 1.0 / math.sqrt(dk)
    qf = q.data.reshape(-1, lq, dk)
    kf = k.data.reshape(-1, lk, dk)
    vf = v.data.reshape(-1, lk, dv)
    nb = qf.shape[0]
    track = grad_enabled() and (q.requires_grad or k.requires_grad or v.requires_grad)
    if return_weights:
        probs = np.empty((nb, lq, lk), dtype=DTYPE)
    elif track:
        probs = _take_buffer((nb, lq, lk))
    else:
        probs = None
    out = np.empty((nb, lq, dv), dtype=DTYPE)
    for i in range(0, nb, chunk):
        s = probs[i:i + chunk] if probs is not None else None
        s = np.matmul(qf[i:i + chunk] * scale, kf[i:i + chunk].transpose(0, 2, 1), out=s)
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        np.matmul(s, vf[i:i + chunk], out=out[i:i + chunk])

    def backward(g):
        gf = g.reshape(-1, lq, dv)
        gq = np.empty_like(qf)
        gk = np.empty_like(kf)
        gv = np.empty_like(vf)
        for i in range(0, nb, chunk):
            p = probs[i:i + chunk]
            gc = gf[i:i + chunk]
            gp = gc @ vf[i:i + chunk].transpose(0, 2, 1)
            gv[i:i + chunk] = p.transpose(0, 2, 1) @ gc
            gp -= np.einsum("bij,bij->bi", gp, p)[..., None]
            gp *= p
            gq[i:i + chunk] = gp @ kf[i:i + chunk]
            gk[i:i + chunk] = gp.transpose(0, 2, 1) @ qf[i:i + chunk]
        gq *= scale
        gk *= scale
        if not return_weights:
            _give_buffer(probs)
        return gq.reshape(q.shape), gk.reshape(k.shape), gv.reshape(v.shape)

    res = _result(out.reshape(*lead, lq, dv), (q, k, v), backward)
    if return_weights:
        return res, probs.reshape(*lead, lq, lk)
    return res


# regularization / normalization -------------------------------------------------

def dropout(a, p, rng=None, training=True):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0 <= p < 1:
        raise InvalidArgument(f"dropout probability must lie in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0:
        return a
    if rng is None:
        raise InvalidArgument("training-mode dropout needs a random generator")
    mask = (rng.random(a.shape) >= p) * (1.0 / (1.0 - p))
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


class BatchNormState:
    """Running statistics of one batch-norm layer (not trainable)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state: BatchNormState, training=True):
    """Per-channel normalization of ``x[..., C]`` over every other axis.

    Train mode uses batch statistics (biased variance) and folds them into the
    running estimates with ``state.momentum``; eval mode uses the running ones.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm parameters must have shape ({c},), got {gamma.shape} and {beta.shape}")
    xf = x.data.reshape(-1, c)
    n = xf.shape[0]
    if training:
        if n < 2:
            raise DegenerateData("batch_norm in train mode needs more than one value per channel")
        mu = xf.mean(axis=0)
        var = xf.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xf - mu) * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def backward(g):
        gf = g.reshape(-1, c)
        gg = (gf * xhat).sum(axis=0) if gamma.requires_grad else None
        gb = gf.sum(axis=0) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = gf * gamma.data
            if training:
                gx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                gx = dxhat * inv
            gx = gx.reshape(x.shape)
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward)


# loss --------------------------------------------------------------------------

def bce_with_logits(logits, targets):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets, overflow-free."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError(f"targets {t.shape} do not match logits {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        return (g * (sigmoid_np(z) - t) / n,)

    return _result(np.asarray(loss.mean()), (logits,), backward)


# verification -----------------------------------------------------------------

def grad_check(fn, x, eps=1e-5):
    """Max over coordinates of |analytic - numeric| / max(1e-12, |numeric|).

    ``fn`` maps a Tensor shaped like ``x`` to a scalar Tensor. Numeric
    gradients are central differences with step ``eps``.
    """
    base = np.array(as_tensor(x).data, dtype=DTYPE)
    xt = Tensor(base.copy(), requires_grad=True)
    out = fn(xt)
    if out.data.size != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)
    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(Tensor(base.copy())).data)
            flat[i] = orig - eps
            fm = float(fn(Tensor(base.copy())).data)
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
