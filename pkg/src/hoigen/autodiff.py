"""Reverse-mode automatic differentiation over dense float32 arrays.

A single flat tape records ops in creation order, which is already a
topological order (parents are created before children). backward() walks
the tape once in reverse from the loss node. The tape is rebuilt every
training step; call clear_tape() (or Adam.step, which does it for you)
between steps so saved activations get released.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tape:
    """Ordered op records: (output tensor, parent tensors, backward fn)."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


_TAPE = Tape()
_GRAD_ENABLED = True


def tape() -> Tape:
    return _TAPE


def clear_tape():
    _TAPE.clear()


class no_grad:
    """Context manager disabling tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "node_id", "requires_grad", "needs_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.node_id = None
        self.requires_grad = requires_grad
        self.needs_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, needs_grad={self.needs_grad})"

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, c):
        return power(self, c)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _record(out: Tensor, parents, bwd) -> Tensor:
    if _GRAD_ENABLED and any(p.needs_grad for p in parents):
        out.needs_grad = True
        out.node_id = len(_TAPE.nodes)
        _TAPE.nodes.append((out, parents, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g, dtype=np.float32).reshape(shape)


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.data.shape} and {b.data.shape}")


# -- elementwise arithmetic ----------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                           _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def power(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data ** np.float32(c))
    return _record(out, (a,), lambda g: (g * np.float32(c) * a.data ** np.float32(c - 1.0),))


# -- transcendental / activations ----------------------------------------

def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * np.float32(0.5) / y,))


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data))
    return _record(out, (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data))
    return _record(out, (a,), lambda g: (-g * np.sin(a.data),))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_stable(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(np.float32(0.0), a.data).astype(np.float32))
    s = _sigmoid_stable(a.data)
    return _record(out, (a,), lambda g: (g * s,))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_stable(a.data)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * (s * (1.0 + a.data * (1.0 - s))),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0),))


def tabs(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


# -- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    need_a, need_b = a.needs_grad, b.needs_grad  # skip dead GEMMs in backward

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if need_a else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if need_b else None
        return ga, gb

    return _record(out, (a, b), bwd)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    y = (x.data - mu) * inv
    out = Tensor(y * gamma.data + beta.data)
    n = x.data.shape[-1]

    def bwd(g):
        gy = g * gamma.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True)
                    - y * (gy * y).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        ggamma = (g * y).sum(axis=red).astype(np.float32)
        gbeta = g.sum(axis=red).astype(np.float32)
        return gx.astype(np.float32), _unbroadcast(ggamma, gamma.shape), _unbroadcast(gbeta, beta.shape)

    return _record(out, (x, gamma, beta), bwd)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (a,), bwd)


def l2norm(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Euclidean norm along the last axis (eps keeps the gradient finite at 0)."""
    sq = (a.data * a.data).sum(axis=-1)
    n = np.sqrt(sq + np.float32(eps))
    out = Tensor(n)

    def bwd(g):
        return ((g / n)[..., None] * a.data,)

    return _record(out, (a,), bwd)


# -- reductions ------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=ax, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).astype(np.float32),)

    return _record(out, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    cnt = np.prod([a.shape[i] for i in ax]) if ax else 1
    out = Tensor(a.data.mean(axis=ax, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return ((np.broadcast_to(g, a.shape) / np.float32(cnt)).astype(np.float32),)

    return _record(out, (a,), bwd)


def tmin(a: Tensor, axis: int) -> Tensor:
    """Min along one axis; gradient flows to the (first) argmin."""
    axis = axis % a.ndim
    idx = a.data.argmin(axis=axis)
    out = Tensor(a.data.min(axis=axis))

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _record(out, (a,), bwd)


def tmax(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.ndim
    idx = a.data.argmax(axis=axis)
    out = Tensor(a.data.max(axis=axis))

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _record(out, (a,), bwd)


# -- shape ops -------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(np.swapaxes(a.data, ax1, ax2))
    return _record(out, (a,), lambda g: (np.ascontiguousarray(np.swapaxes(g, ax1, ax2)),))


def tslice(a: Tensor, key) -> Tensor:
    out = Tensor(a.data[key])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _record(out, (a,), bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bwd(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.ascontiguousarray(p.squeeze(axis=axis)) for p in parts)

    return _record(out, tuple(tensors), bwd)


# -- cumulative scan --------------------------------------------------------

def _scan_forward(decay: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    """Inclusive linear recurrence h_t = decay_t * h_{t-1} + x_t (h_{-1}=0).

    Hillis-Steele doubling over the affine monoid; O(T log T) vectorized work.
    """
    a = np.array(decay, dtype=np.float32)
    h = np.array(x, dtype=np.float32)
    T = h.shape[axis]
    shift = 1
    idx_to = [slice(None)] * h.ndim
    idx_from = [slice(None)] * h.ndim
    while shift < T:
        idx_to[axis] = slice(shift, None)
        idx_from[axis] = slice(None, T - shift)
        to, frm = tuple(idx_to), tuple(idx_from)
        h[to] = h[to] + a[to] * h[frm]
        a[to] = a[to] * a[frm]
        shift *= 2
    return h


def scan_sequential(decay: np.ndarray, x: np.ndarray, axis: int = 1) -> np.ndarray:
    """Reference loop implementation of the same recurrence."""
    decay = np.moveaxis(np.asarray(decay, dtype=np.float32), axis, 0)
    x = np.moveaxis(np.asarray(x, dtype=np.float32), axis, 0)
    h = np.zeros_like(x[0])
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        h = decay[t] * h + x[t]
        out[t] = h
    return np.moveaxis(out, 0, axis)


def scan(decay: Tensor, x: Tensor, axis: int = 1) -> Tensor:
    """Differentiable cumulative scan h_t = decay_t * h_{t-1} + x_t along `axis`."""
    if decay.shape != x.shape:
        raise ShapeError(f"scan: decay shape {decay.shape} != input shape {x.shape}")
    axis = axis % x.ndim
    h = _scan_forward(decay.data, x.data, axis)
    out = Tensor(h)

    def bwd(g):
        # adjoint lam_t = g_t + decay_{t+1} * lam_{t+1}: a reverse scan
        a_flip = np.flip(decay.data, axis=axis)
        d = np.roll(a_flip, 1, axis=axis)
        lam = np.flip(_scan_forward(d, np.flip(g, axis=axis), axis), axis=axis)
        h_prev = np.roll(h, 1, axis=axis)
        sl = [slice(None)] * h.ndim
        sl[axis] = slice(0, 1)
        h_prev[tuple(sl)] = 0.0
        return (lam * h_prev, np.ascontiguousarray(lam))

    return _record(out, (decay, x), bwd)


# -- backward ----------------------------------------------------------------

def backward(loss: Tensor):
    """Populate .grad for every needs-grad tensor the loss depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.node_id is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return
    loss.grad = np.ones_like(loss.data)
    nodes = _TAPE.nodes
    for idx in range(loss.node_id, -1, -1):
        out, parents, bwd = nodes[idx]
        if out.grad is None:
            continue
        grads = bwd(out.grad)
        for p, gp in zip(parents, grads):
            if gp is None or not p.needs_grad:
                continue
            if p.grad is None:
                p.grad = gp.astype(np.float32, copy=True)
            else:
                p.grad += gp


# -- finite-difference checking -----------------------------------------------

def gradcheck(fn, inputs, h: float = 1e-3, tol: float = 1e-3) -> float:
    """Compare reverse-mode grads of fn(*inputs) against central differences.

    Returns the worst relative error, normalized by max(1, |analytic|, |fd|).
    """
    clear_tape()
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]
    for t in inputs:
        t.grad = None
    clear_tape()

    worst = 0.0
    with no_grad():
        for t, an in zip(inputs, analytic):
            if an is None:
                an = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = float(fn(*inputs).data)
                flat[i] = orig - h
                lm = float(fn(*inputs).data)
                flat[i] = orig
                fd = (lp - lm) / (2.0 * h)
                a = float(an.reshape(-1)[i])
                rel = abs(a - fd) / max(1.0, abs(a), abs(fd))
                worst = max(worst, rel)
    if worst >= tol:
        raise AssertionError(f"gradcheck failed: worst relative error {worst:.2e} >= {tol:.0e}")
    return worst


def gradcheck_dir(fn, params: list[Tensor], rng: np.random.Generator,
                  n_dirs: int = 4, h: float = 1e-2, tol: float = 1e-2) -> float:
    """Directional finite-difference check for large parameter sets: compares
    sum(grad . v) against the central difference along random unit directions.
    Returns the worst relative error."""
    clear_tape()
    for t in params:
        t.grad = None
    loss = fn()
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in params]
    clear_tape()
    worst = 0.0
    with no_grad():
        for _ in range(n_dirs):
            dirs = [rng.standard_normal(t.data.shape).astype(np.float32) for t in params]
            scale = np.sqrt(sum(float((d * d).sum()) for d in dirs))
            dirs = [d / scale for d in dirs]
            analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
            for t, d in zip(params, dirs):
                t.data += h * d
            lp = float(fn().data)
            for t, d in zip(params, dirs):
                t.data -= 2 * h * d
            lm = float(fn().data)
            for t, d in zip(params, dirs):
                t.data += h * d
            fd = (lp - lm) / (2.0 * h)
            rel = abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))
            worst = max(worst, rel)
    if worst >= tol:
        raise AssertionError(f"directional gradcheck failed: {worst:.2e} >= {tol:.0e}")
    return worst
