"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Tensors are immutable once created (only ``grad`` is written later), every
primitive checks its output for NaN/Inf, and the recorded DAG of parent
links is the execution graph: ``backward`` walks it once in reverse
topological order. Convolutions and the monotonic-path likelihood are
delegated to :mod:`prosotts.kernels` (compiled core or numpy fallback).

Gradient conventions at non-smooth points: ``abs`` uses subgradient 0 at
zero, ``leaky_relu`` uses the negative-side slope at zero.
"""

import contextlib

import numpy as np

from . import kernels


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, op, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class NonFiniteError(AutodiffError):
    """A primitive produced NaN or Inf."""

    def __init__(self, op):
        self.op = op
        super().__init__(f"{op}: non-finite values in output")


class GradStateError(AutodiffError):
    """backward() called while stale gradients are still populated."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference fast path)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """Dense float64 array node in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None
        self.parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err(t):
    raise AutodiffError(f"item() on non-scalar tensor of shape {t.data.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, data, parents, vjp):
    """Record one executed primitive and finite-check its output."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out.op = op
        out.parents = tuple(parents)
        out._vjp = vjp
        return out
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# --- elementwise and linear primitives ---

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch("sub", a.shape, b.shape)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", data, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make("mul", data, (a, b), vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make("matmul", data, (a, b), vjp)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose", a.shape, a.shape)
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.shape
    return _make("reshape", a.data.reshape(shape).copy(), (a,),
                 lambda g: (g.reshape(orig),))


def leaky_relu(a, slope=0.1):
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def abs_(a):
    a = as_tensor(a)
    sign = np.sign(a.data)  # subgradient 0 at 0
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a):
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make("exp", data, (a,), lambda g: (g * data,))


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make("log", data, (a,), lambda g: (g / a.data,))


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make("softmax", y, (a,), vjp)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", y, (a,), vjp)


def layer_norm(a, axis=-1, eps=1e-5):
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (a.data - mu) / sigma

    def vjp(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gy) / sigma,)

    return _make("layer_norm", y, (a,), vjp)


def _reduce_vjp(a, axis, keepdims, scale):
    shape = a.shape

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) * scale,)

    return vjp


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _make("sum", data, (a,), _reduce_vjp(a, axis, keepdims, 1.0))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]
    return _make("mean", data, (a,), _reduce_vjp(a, axis, keepdims, 1.0 / count))


def gather(a, indices):
    """Select rows of a 2-D (or 1-D) tensor; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise AutodiffError("gather: indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise AutodiffError(f"gather: index out of range for axis of size {a.shape[0]}")
    data = a.data[idx]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make("gather", data, (a,), vjp)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", data, tuple(ts), vjp)


def stop_gradient(a):
    """Forward identity that blocks all gradient flow into its input."""
    a = as_tensor(a)
    return Tensor(a.data)


# --- structured primitives backed by prosotts.kernels ---

def conv1d(x, w, bias=None, dilation=1):
    """Same-padding dilated 1-D convolution.

    x is (T, C_in), w is (K, C_in, C_out) with odd K so the output keeps
    length T, bias is (C_out,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch("conv1d", x.shape, w.shape)
    if w.shape[0] % 2 == 0:
        raise AutodiffError(f"conv1d: kernel size {w.shape[0]} must be odd for same padding")
    if dilation < 1:
        raise AutodiffError("conv1d: dilation must be >= 1")
    b = as_tensor(bias) if bias is not None else None
    if b is not None and b.shape != (w.shape[2],):
        raise ShapeMismatch("conv1d", b.shape, (w.shape[2],))
    data = kernels.conv1d_fwd(np.ascontiguousarray(x.data),
                              np.ascontiguousarray(w.data),
                              None if b is None else np.ascontiguousarray(b.data),
                              dilation)
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx, gw, gb = kernels.conv1d_bwd(np.ascontiguousarray(x.data),
                                        np.ascontiguousarray(w.data),
                                        np.ascontiguousarray(g), dilation)
        if b is None:
            return gx, gw
        return gx, gw, gb

    return _make("conv1d", data, parents, vjp)


def conv_transpose1d(x, w, bias=None, stride=1):
    """Strided transposed 1-D convolution upsampling T to T*stride.

    Requires kernel size >= stride with (K - stride) even, so the output
    crops symmetrically to exactly T*stride samples.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch("conv_transpose1d", x.shape, w.shape)
    k = w.shape[0]
    if stride < 1 or k < stride or (k - stride) % 2 != 0:
        raise AutodiffError(
            f"conv_transpose1d: need kernel >= stride and (kernel - stride) even, "
            f"got kernel {k} stride {stride}")
    b = as_tensor(bias) if bias is not None else None
    if b is not None and b.shape != (w.shape[2],):
        raise ShapeMismatch("conv_transpose1d", b.shape, (w.shape[2],))
    data = kernels.convt1d_fwd(np.ascontiguousarray(x.data),
                               np.ascontiguousarray(w.data),
                               None if b is None else np.ascontiguousarray(b.data),
                               stride)
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx, gw, gb = kernels.convt1d_bwd(np.ascontiguousarray(x.data),
                                         np.ascontiguousarray(w.data),
                                         np.ascontiguousarray(g), stride)
        if b is None:
            return gx, gw
        return gx, gw, gb

    return _make("conv_transpose1d", data, parents, vjp)


def monotonic_forward_sum(log_probs):
    """Negative log-likelihood of all monotonic column-paths through a
    (T, N) matrix of log-probabilities.

    Paths start at column 0, end at column N-1, and advance by 0 or 1
    columns per row. The gradient is minus the cell-occupancy posterior,
    computed by the forward-backward recursion inside the kernel.
    """
    lp = as_tensor(log_probs)
    if lp.data.ndim != 2:
        raise ShapeMismatch("monotonic_forward_sum", lp.shape, ("T", "N"))
    t_len, n_len = lp.shape
    if t_len < n_len:
        raise AutodiffError(
            f"monotonic_forward_sum: impossible alignment, {t_len} frames < {n_len} columns")
    nll, post = kernels.forward_sum_fb(np.ascontiguousarray(lp.data))

    def vjp(g):
        return (-float(g) * post,)

    return _make("monotonic_forward_sum", np.float64(nll), (lp,), vjp)


_window_cache = {}


def _hann(win_length):
    if win_length not in _window_cache:
        n = np.arange(win_length)
        _window_cache[win_length] = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)
    return _window_cache[win_length]


def stft_magnitude(x, n_fft=1024, win_length=1024, hop=256):
    """Differentiable Hann-windowed STFT magnitude of a 1-D signal.

    Returns (T, n_fft // 2 + 1) with T = (len(x) - win_length) // hop + 1
    (no center padding). Magnitudes are smoothed by a 1e-12 floor so the
    gradient exists at exact zeros.
    """
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeMismatch("stft_magnitude", x.shape, ("L",))
    length = x.shape[0]
    if length < win_length:
        raise AutodiffError(
            f"stft_magnitude: signal length {length} shorter than window {win_length}")
    t_len = (length - win_length) // hop + 1
    window = _hann(win_length)
    idx = hop * np.arange(t_len)[:, None] + np.arange(win_length)[None, :]
    frames = x.data[idx] * window
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    mag = np.sqrt(spec.real ** 2 + spec.imag ** 2 + 1e-24)

    def vjp(g):
        gspec = (g / mag) * spec
        full = np.zeros((t_len, n_fft), dtype=complex)
        full[:, :gspec.shape[1]] = gspec
        gframes = np.real(np.fft.ifft(full, axis=1)) * n_fft
        gx = np.zeros(length)
        np.add.at(gx, idx, gframes[:, :win_length] * window)
        return (gx,)

    return _make("stft_magnitude", mag, (x,), vjp)


# --- backward pass and checking ---

def graph_nodes(root):
    """Reachable graph of ``root`` in topological order (parents first)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss, accumulate=False, reset=False):
    """Populate ``grad`` on every requires_grad tensor reachable from loss.

    A second backward into tensors that still hold gradients raises
    GradStateError: pass ``accumulate=True`` to add into them, or
    ``reset=True`` to clear them first.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise AutodiffError("backward: loss must be a scalar tensor")
    if not loss.parents:
        raise AutodiffError("backward: empty graph (loss records no primitives)")
    order = graph_nodes(loss)
    if reset:
        for node in order:
            node.grad = None
    elif not accumulate:
        for node in order:
            if node.grad is not None:
                raise GradStateError(
                    "backward: stale gradients present; zero them first or pass "
                    "accumulate=True / reset=True")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(node.grad)):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"{node.op} (backward)")
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64)
            else:
                parent.grad = parent.grad + pg


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def grad_check(f, x, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map the tensor ``x`` (typically closing over further
    tensors) to a scalar Tensor deterministically. Elements of ``x`` are
    perturbed in place and restored.
    """
    x.grad = None
    out = f(x)
    backward(out, reset=True)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).copy()
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
