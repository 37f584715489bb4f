"""Small reverse-mode differentiable array engine on top of numpy.

Every value is a float64 :class:`DiffArray`. Operations record their parents
and a closure mapping the output gradient to parent gradients; calling
:meth:`DiffArray.backward` on a scalar walks the graph in reverse
topological order. Only leaves flagged ``trainable`` keep a ``grad``.

The engine covers exactly what the encoder and the losses need, including
a radix-2 FFT and the circular convolution built on it.
"""

from functools import lru_cache

import numpy as np

from .errors import DegenerateVectorError, DimensionError, EvaluationError

DTYPE = np.float64

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that stops graph recording (forward-only evaluation)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev


class DiffArray:
    __slots__ = ("values", "grad", "trainable", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, trainable=False, name=None, _parents=(), _backward=None):
        self.values = np.asarray(values, dtype=DTYPE)
        self.trainable = trainable
        self.grad = np.zeros_like(self.values) if trainable else None
        if _parents:
            self.requires_grad = _GRAD_ENABLED[0] and any(p.requires_grad for p in _parents)
        else:
            self.requires_grad = trainable
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    @property
    def ndim(self):
        return self.values.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffArray(shape={self.shape}{tag})"

    def item(self):
        return float(self.values)

    def numpy(self):
        return self.values

    def zero_grad(self):
        if self.trainable:
            self.grad = np.zeros_like(self.values)

    def detach(self):
        return DiffArray(self.values.copy())

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every trainable leaf's ``grad``."""
        if grad is None:
            if self.values.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.values)
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.trainable:
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _topological(root):
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


def as_diff(x):
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(values, parents, backward):
    return DiffArray(values, _parents=tuple(parents), _backward=backward)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_diff(a), as_diff(b)
    sa, sb = a.shape, b.shape
    return _node(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_diff(a), as_diff(b)
    sa, sb = a.shape, b.shape
    return _node(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_diff(a), as_diff(b)
    av, bv = a.values, b.values
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    a, b = as_diff(a), as_diff(b)
    av, bv = a.values, b.values
    out = av / bv
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def square(a):
    a = as_diff(a)
    av = a.values
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def sigmoid(a):
    a = as_diff(a)
    out = 1.0 / (1.0 + np.exp(-a.values))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Tanh-approximated GELU."""
    a = as_diff(a)
    x = a.values
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------- structural

def matmul(a, b):
    a, b = as_diff(a), as_diff(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def total(a, axis=None):
    a = as_diff(a)
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.values.sum(axis=axis), (a,), backward)


def mean(a, axis=None):
    a = as_diff(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(total(a, axis), 1.0 / n)


def reshape(a, shape):
    a = as_diff(a)
    old = a.shape
    return _node(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1, ax2):
    a = as_diff(a)
    return _node(np.swapaxes(a.values, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def take(a, idx, axis=0):
    """Gather slices of ``a`` along ``axis`` (repeated indices allowed)."""
    a = as_diff(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(np.moveaxis(out, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(np.take(a.values, idx, axis=axis), (a,), backward)


def stack(items):
    items = [as_diff(x) for x in items]
    return _node(np.stack([x.values for x in items]), items,
                 lambda g: tuple(g[i] for i in range(len(items))))


# ---------------------------------------------------------------- fused layers

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean and unit variance, then apply ``gamma``/``beta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, gamma, beta = as_diff(x), as_diff(gamma), as_diff(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"gamma/beta must have shape ({d},)")
    xv = x.values
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gamma.values

    def backward(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(xhat * gv + beta.values, (x, gamma, beta), backward)


def depthwise_conv(u, w):
    """Centred per-channel convolution along axis 0 with zero boundaries.

    ``u`` is (L, C); ``w`` is (C, W) with W odd, tap ``t`` reading offset ``t - W // 2``.
    """
    u, w = as_diff(u), as_diff(w)
    L, C = u.shape
    if w.ndim != 2 or w.shape[0] != C or w.shape[1] % 2 == 0:
        raise DimensionError(f"depthwise kernel must be ({C}, odd width), got {w.shape}")
    width = w.shape[1]
    h = width // 2
    up = np.pad(u.values, ((h, h), (0, 0)))
    wv = w.values
    out = np.zeros((L, C))
    for t in range(width):
        out += up[t:t + L] * wv[:, t]

    def backward(g):
        dup = np.zeros_like(up)
        dw = np.empty_like(wv)
        for t in range(width):
            dup[t:t + L] += g * wv[:, t]
            dw[:, t] = (g * up[t:t + L]).sum(axis=0)
        return dup[h:h + L], dw

    return _node(out, (u, w), backward)


_MUL_COUNT = [0]


def multiplication_count():
    """Scalar multiplications performed by :func:`block_matmul` since the last reset."""
    return _MUL_COUNT[0]


def reset_multiplication_count():
    _MUL_COUNT[0] = 0


def block_matmul(blocks, x):
    """Apply block ``i`` of ``blocks`` (b, p, q) to ``x[..., i, :]`` (..., b, q)."""
    blocks, x = as_diff(blocks), as_diff(x)
    bv, xv = blocks.values, x.values
    if bv.ndim != 3 or xv.shape[-2:] != (bv.shape[0], bv.shape[2]):
        raise DimensionError(f"cannot apply blocks {bv.shape} to {xv.shape}")
    _MUL_COUNT[0] += int(np.prod(xv.shape[:-1])) * bv.shape[1] * bv.shape[2]
    out = np.einsum("ipq,...iq->...ip", bv, xv)

    def backward(g):
        dx = np.einsum("ipq,...ip->...iq", bv, g)
        db = np.einsum("nip,niq->ipq", g.reshape(-1, *g.shape[-2:]), xv.reshape(-1, *xv.shape[-2:]))
        return db, dx

    return _node(out, (blocks, x), backward)


# ---------------------------------------------------------------- FFT

@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@lru_cache(maxsize=None)
def _twiddles(n, inverse):
    sign = 1.0 if inverse else -1.0
    out, m = [], 1
    while m < n:
        out.append(np.exp(sign * 1j * np.pi * np.arange(m) / m))
        m *= 2
    return tuple(out)


def is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def fft(x, inverse=False):
    """Iterative radix-2 Cooley-Tukey transform along the last axis.

    The inverse includes the 1/n factor. Length must be a power of two.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise DimensionError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)]
    m = 1
    for w in _twiddles(n, inverse):
        y = y.reshape(*lead, n // (2 * m), 2, m)
        even = y[..., 0, :]
        odd = y[..., 1, :] * w
        y = np.concatenate((even + odd, even - odd), axis=-1)
        m *= 2
    y = y.reshape(*lead, n)
    return y / n if inverse else y


def ifft(x):
    return fft(x, inverse=True)


def circular_conv_fft(u, k):
    """Circular convolution along the last axis: ``y[i] = sum_j u[j] k[(i - j) mod L]``.

    Works for single sequences (L,) and channel stacks (C, L) alike.
    """
    u, k = as_diff(u), as_diff(k)
    if u.shape != k.shape:
        raise DimensionError(f"convolution operands differ in shape: {u.shape} vs {k.shape}")
    fu, fk = fft(u.values), fft(k.values)
    out = ifft(fu * fk).real

    def backward(g):
        fg = fft(g)
        # adjoint of convolution is circular correlation
        du = ifft(fg * np.conj(fk)).real if u.requires_grad else None
        dk = ifft(fg * np.conj(fu)).real if k.requires_grad else None
        return du, dk

    return _node(out, (u, k), backward)


def circular_conv_direct(u, k):
    """O(L^2) reference for :func:`circular_conv_fft` on plain arrays."""
    u, k = np.asarray(u, dtype=DTYPE), np.asarray(k, dtype=DTYPE)
    L = u.shape[-1]
    out = np.zeros_like(u)
    for i in range(L):
        for j in range(L):
            out[..., i] += u[..., j] * k[..., (i - j) % L]
    return out


# ---------------------------------------------------------------- vectors and losses

def _norm_checked(v):
    n = float(np.sqrt(v @ v))
    if not n > 0.0:
        raise DegenerateVectorError("vector has zero norm")
    return n


def l2_normalize(a):
    a = as_diff(a)
    if a.ndim != 1:
        raise DimensionError("l2_normalize expects a vector")
    n = _norm_checked(a.values)
    y = a.values / n
    return _node(y, (a,), lambda g: ((g - y * (y @ g)) / n,))


def dot(a, b):
    a, b = as_diff(a), as_diff(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot expects equal-length vectors, got {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _node(np.array(av @ bv), (a, b), lambda g: (g * bv, g * av))


def cosine_sim(a, b):
    """Cosine similarity of two vectors as a differentiable scalar."""
    a, b = as_diff(a), as_diff(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_sim expects equal-length vectors, got {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    na, nb = _norm_checked(av), _norm_checked(bv)
    c = float(av @ bv) / (na * nb)
    c = min(1.0, max(-1.0, c))

    def backward(g):
        return (g * (bv / (na * nb) - c * av / na ** 2),
                g * (av / (na * nb) - c * bv / nb ** 2))

    return _node(np.array(c), (a, b), backward)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(scores, target):
    """``-log softmax(scores)[target]`` for a single score vector."""
    scores = as_diff(scores)
    if scores.ndim != 1:
        raise DimensionError("scores must be a vector")
    n = scores.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} scores")
    logp = _log_softmax(scores.values)

    def backward(g):
        d = np.exp(logp)
        d[target] -= 1.0
        return (g * d,)

    return _node(np.array(-logp[target]), (scores,), backward)


IGNORE_INDEX = -100


def cross_entropy_rows(logits, targets):
    """Mean cross-entropy over rows of ``logits`` whose target is not ``IGNORE_INDEX``."""
    logits = as_diff(logits)
    targets = np.asarray(targets)
    rows = np.flatnonzero(targets != IGNORE_INDEX)
    if rows.size == 0:
        return DiffArray(0.0)
    sel = take(logits, rows, axis=0)
    logp = _log_softmax(sel.values)
    t = targets[rows]
    loss = -logp[np.arange(rows.size), t].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(rows.size), t] -= 1.0
        return (g * d / rows.size,)

    return _node(np.array(loss), (sel,), backward)


# ---------------------------------------------------------------- gradient checking

def grad_check(f, params, h=1e-4):
    """Worst relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and builds a scalar :class:`DiffArray` from the
    current values of ``params`` (trainable leaves). Relative error per entry
    is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.values).all():
        raise EvaluationError("function value is not finite")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().values)
            flat[i] = orig - h
            fm = float(f().values)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError("function value is not finite")
            num = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
        p.zero_grad()
    return worst
