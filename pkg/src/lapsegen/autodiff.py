"""Reverse-mode automatic differentiation over dense numpy tensors.

A ``Tensor`` wraps a float32/float64 ndarray plus an optional gradient
buffer. Ops build a DAG through per-node backward closures;
``Tensor.backward()`` runs them in reverse topological order. The op
set is exactly what the generator/discriminator architectures need:
strided conv/deconv, batch norm, dense layers, an LSTM step, pointwise
nonlinearities, and the reductions/slicing the losses are made of.

Conventions:
 - images and feature maps are NHWC, conv kernels are [kh, kw, cin, cout],
   deconv kernels [kh, kw, cout, cin];
 - every op validates shapes and raises ``InvalidArgument`` on mismatch;
 - every op checks its output for NaN/Inf and raises ``NumericError``
   (disable locally with ``no_nan_guard`` if an op is probed on purpose);
 - gradients accumulate with ``old + new`` (never in-place) so backward
   closures may hand out views safely.

Training runs float32; float64 exists for gradient checking.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import backend
from .errors import InvalidArgument, NumericError

_FLOAT_DTYPES = (np.float32, np.float64)

# module switches (mutated only via the context managers below)
_grad_enabled = True
_nan_guard = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def no_nan_guard():
    global _nan_guard
    prev, _nan_guard = _nan_guard, False
    try:
        yield
    finally:
        _nan_guard = prev


def _check_finite(arr, what):
    if not _nan_guard or arr.size == 0:
        return
    # min/max propagate NaN and expose both infinities; cheaper than isfinite().all()
    if not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise NumericError(f"non-finite values produced by {what}")


def _as_array(data):
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """Dense array node of the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- constructors -------------------------------------------------
    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad)

    # -- bookkeeping ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        """Same data, severed from the graph."""
        return Tensor(self.data, requires_grad=False)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype},"
                f" requires_grad={self.requires_grad})")

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    # -- backward pass ---------------------------------------------------
    def backward(self):
        if self.size != 1:
            raise InvalidArgument("backward() requires a scalar loss")
        order, seen, stack = [], set(), [(self, False)]
        while stack:  # iterative topo sort; graphs can be deep (recurrent rollouts)
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node._backward = None
                node._parents = ()


def _accumulate(t, g):
    t.grad = g if t.grad is None else t.grad + g


def _node(data, parents, backward_fn, what):
    _check_finite(data, what)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _scalar(value, dtype):
    return dtype.type(value)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce_pair(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.dtype != b.dtype:
        raise InvalidArgument(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    return a, b


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    if isinstance(b, (int, float)):
        s = _scalar(b, a.dtype)

        def bwd(gy):
            _accumulate(a, gy)

        return _node(a.data + s, (a,), bwd, "add")
    a, b = _coerce_pair(a, b)

    def bwd(gy):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(gy, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(gy, b.shape))

    return _node(a.data + b.data, (a, b), bwd, "add")


def sub(a, b):
    if isinstance(b, (int, float)):
        return add(a, -b)
    a, b = _coerce_pair(a, b)

    def bwd(gy):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(gy, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-gy, b.shape))

    return _node(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b):
    if isinstance(b, (int, float)):
        s = _scalar(b, a.dtype)

        def bwd(gy):
            _accumulate(a, gy * s)

        return _node(a.data * s, (a,), bwd, "mul")
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def bwd(gy):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(gy * bd, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(gy * ad, b.shape))

    return _node(ad * bd, (a, b), bwd, "mul")


def square(x):
    xd = x.data

    def bwd(gy):
        _accumulate(x, gy * (xd + xd))

    return _node(xd * xd, (x,), bwd, "square")


def log(x):
    xd = x.data

    def bwd(gy):
        _accumulate(x, gy / xd)

    return _node(np.log(xd), (x,), bwd, "log")


def clip(x, lo, hi):
    """Clamp values; gradient passes only through unclamped entries."""
    lo_ = _scalar(lo, x.dtype)
    hi_ = _scalar(hi, x.dtype)
    y = np.clip(x.data, lo_, hi_)
    mask = (x.data > lo_) & (x.data < hi_)

    def bwd(gy):
        _accumulate(x, gy * mask)

    return _node(y, (x,), bwd, "clip")


def tsum(x):
    shape = x.shape

    def bwd(gy):
        _accumulate(x, np.broadcast_to(gy, shape))

    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), bwd, "sum")


def tmean(x):
    shape = x.shape
    inv = _scalar(1.0 / x.size, x.dtype)

    def bwd(gy):
        _accumulate(x, np.broadcast_to(gy * inv, shape))

    return _node(np.asarray(x.data.mean(), dtype=x.dtype), (x,), bwd, "mean")


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape):
    old = x.shape

    def bwd(gy):
        _accumulate(x, gy.reshape(old))

    return _node(x.data.reshape(shape), (x,), bwd, "reshape")


def concat(tensors, axis):
    if not tensors:
        raise InvalidArgument("concat of zero tensors")
    dtype = tensors[0].dtype
    if any(t.dtype != dtype for t in tensors):
        raise InvalidArgument("concat dtype mismatch")
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(gy):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * gy.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, gy[tuple(idx)])

    return _node(np.concatenate(datas, axis=axis), tuple(tensors), bwd, "concat")


def narrow(x, axis, start, length):
    """Contiguous slice along one axis (used to split LSTM gate blocks)."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def bwd(gy):
        g = np.zeros(shape, dtype=dtype)
        g[idx] = gy
        _accumulate(x, g)

    return _node(np.ascontiguousarray(x.data[idx]), (x,), bwd, "narrow")


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def relu(x):
    y = np.maximum(x.data, 0)
    mask = x.data > 0

    def bwd(gy):
        _accumulate(x, gy * mask)

    return _node(y, (x,), bwd, "relu")


def tanh(x):
    y = np.tanh(x.data)

    def bwd(gy):
        _accumulate(x, gy * (1.0 - y * y))

    return _node(y, (x,), bwd, "tanh")


def sigmoid(x):
    # stable two-sided form
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    y[~pos] = e / (1.0 + e)

    def bwd(gy):
        _accumulate(x, gy * (y * (1.0 - y)))

    return _node(y, (x,), bwd, "sigmoid")


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x, kind):
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise InvalidArgument(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# dense / convolutional layers
# ---------------------------------------------------------------------------

def linear(x, weight, bias=None):
    """y = x @ weight (+ bias); x: [N, Din], weight: [Din, Dout]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise InvalidArgument(
            f"linear shapes incompatible: {x.shape} @ {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise InvalidArgument(f"linear bias shape {bias.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(gy):
        if x.requires_grad:
            _accumulate(x, gy @ wd.T)
        if weight.requires_grad:
            _accumulate(weight, xd.T @ gy)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gy.sum(axis=0))

    return _node(y, parents, bwd, "linear")


def same_pads(extent, k, stride):
    """Leading/trailing zero padding so that out = extent // stride.

    For the 5x5 stride-2 layers this is (1, 2): total pad 3, small half
    first. The same pair serves the doubling deconv (extent = output
    size there).
    """
    out = extent // stride
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def _conv_geometry(H, W, kh, kw, stride):
    pt, _ = same_pads(H, kh, stride)
    pl, _ = same_pads(W, kw, stride)
    return H // stride, W // stride, pt, pl


def conv2d(x, kernel, bias=None, stride=2):
    """Strided correlation, NHWC in, NHWC out; spatial extent divides by stride.

    x: [N,H,W,Cin], kernel: [kh,kw,Cin,Cout] -> [N,H/s,W/s,Cout].
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise InvalidArgument("conv2d expects 4-D input and kernel")
    n, H, W, ci = x.shape
    kh, kw, kci, co = kernel.shape
    if kci != ci:
        raise InvalidArgument(f"conv2d channels: input {ci}, kernel {kci}")
    if H % stride or W % stride or H < stride or W < stride:
        raise InvalidArgument(f"conv2d spatial extent {H}x{W} not divisible by stride {stride}")
    if bias is not None and bias.shape != (co,):
        raise InvalidArgument(f"conv2d bias shape {bias.shape}")
    _check_finite(x.data, "conv2d input")
    oh, ow, pt, pl = _conv_geometry(H, W, kh, kw, stride)
    xd = np.ascontiguousarray(x.data)
    cols = np.empty((n, oh, ow, kh, kw, ci), dtype=xd.dtype)
    backend.im2col(xd, kh, kw, stride, pt, pl, cols)
    cols_mat = cols.reshape(n * oh * ow, kh * kw * ci)
    kmat = kernel.data.reshape(kh * kw * ci, co)
    y = cols_mat @ kmat
    if bias is not None:
        y = y + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(gy):
        gym = gy.reshape(n * oh * ow, co)
        if kernel.requires_grad:
            _accumulate(kernel, (cols_mat.T @ gym).reshape(kernel.shape))
        if x.requires_grad:
            gcols = (gym @ kmat.T).reshape(n, oh, ow, kh, kw, ci)
            gx = np.zeros((n, H, W, ci), dtype=gy.dtype)
            backend.col2im(gcols, stride, pt, pl, gx)
            _accumulate(x, gx)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gym.sum(axis=0))

    return _node(y.reshape(n, oh, ow, co), parents, bwd, "conv2d")


def deconv2d(x, kernel, bias=None, stride=2):
    """Transposed strided conv; exact adjoint of conv2d -- spatial extent times stride.

    x: [N,h,w,Cin], kernel: [kh,kw,Cout,Cin] -> [N,h*s,w*s,Cout].
    Reading a conv kernel [kh,kw,Ci,Co] as a deconv kernel [kh,kw,Cout,Cin]
    (no reordering) gives <conv2d(a,K), b> == <a, deconv2d(b,K)>.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise InvalidArgument("deconv2d expects 4-D input and kernel")
    n, h, w, ci = x.shape
    kh, kw, co, kci = kernel.shape
    if kci != ci:
        raise InvalidArgument(f"deconv2d channels: input {ci}, kernel {kci}")
    if h < 1 or w < 1:
        raise InvalidArgument("deconv2d needs spatial extent >= 1")
    if bias is not None and bias.shape != (co,):
        raise InvalidArgument(f"deconv2d bias shape {bias.shape}")
    _check_finite(x.data, "deconv2d input")
    H, W = h * stride, w * stride
    _, _, pt, pl = _conv_geometry(H, W, kh, kw, stride)
    kmat = kernel.data.reshape(kh * kw * co, ci)
    xmat = x.data.reshape(n * h * w, ci)
    gcols = (xmat @ kmat.T).reshape(n, h, w, kh, kw, co)
    y = np.zeros((n, H, W, co), dtype=x.dtype)
    backend.col2im(gcols, stride, pt, pl, y)
    if bias is not None:
        y = y + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(gy):
        gy = np.ascontiguousarray(gy)
        cols = np.empty((n, h, w, kh, kw, co), dtype=gy.dtype)
        backend.im2col(gy, kh, kw, stride, pt, pl, cols)
        cols_mat = cols.reshape(n * h * w, kh * kw * co)
        if x.requires_grad:
            _accumulate(x, (cols_mat @ kmat).reshape(n, h, w, ci))
        if kernel.requires_grad:
            _accumulate(kernel, (cols_mat.T @ xmat).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gy.sum(axis=(0, 1, 2)))

    return _node(y, parents, bwd, "deconv2d")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Running statistics (not trainable, but persisted in checkpoints)."""

    __slots__ = ("running_mean", "running_var", "momentum", "eps", "updating")

    def __init__(self, channels, dtype=np.float32, momentum=0.9, eps=1e-5):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.updating = True  # gate for stat updates while in train mode


def batch_norm(x, gamma, beta, state, training):
    """Per-channel (last axis) normalization with affine output."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise InvalidArgument("batch_norm gamma/beta must be per-channel")
    axes = tuple(range(x.ndim - 1))
    xd = x.data
    if training:
        if x.shape[0] < 2:
            raise InvalidArgument("batch_norm in train mode needs batch >= 2")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if state.updating:
            m = state.momentum
            state.running_mean = (m * state.running_mean + (1.0 - m) * mu).astype(xd.dtype)
            state.running_var = (m * state.running_var + (1.0 - m) * var).astype(xd.dtype)
    else:
        mu = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(state.eps))
    xhat = (xd - mu) * inv
    y = gamma.data * xhat + beta.data

    def bwd(gy):
        if gamma.requires_grad:
            _accumulate(gamma, (gy * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accumulate(beta, gy.sum(axis=axes))
        if x.requires_grad:
            gxhat = gy * gamma.data
            if training:
                m = gxhat.mean(axis=axes)
                mx = (gxhat * xhat).mean(axis=axes)
                _accumulate(x, inv * (gxhat - m - xhat * mx))
            else:
                _accumulate(x, gxhat * inv)

    return _node(y, (x, gamma, beta), bwd, "batch_norm")


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

def lstm_step(x, h, c, params):
    """One standard LSTM cell step.

    ``params`` carries wx [Din, 4H], wh [H, 4H], b [4H]; gate blocks are
    ordered (input, forget, candidate, output). Returns (h', c').
    """
    hid = h.shape[-1]
    if c.shape != h.shape or x.shape[0] != h.shape[0]:
        raise InvalidArgument("lstm_step batch/state shapes disagree")
    if params.wx.shape != (x.shape[1], 4 * hid) or params.wh.shape != (hid, 4 * hid) \
            or params.b.shape != (4 * hid,):
        raise InvalidArgument("lstm_step parameter shapes inconsistent with hidden size")
    gates = add(linear(x, params.wx), linear(h, params.wh, params.b))
    i = sigmoid(narrow(gates, 1, 0, hid))
    f = sigmoid(narrow(gates, 1, hid, hid))
    g = tanh(narrow(gates, 1, 2 * hid, hid))
    o = sigmoid(narrow(gates, 1, 3 * hid, hid))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn, x, eps=1e-4, coords=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a Tensor to a Tensor (summed internally if not scalar);
    the check differentiates w.r.t. ``x``. ``coords=None`` probes every
    coordinate; an integer probes that many seeded random coordinates
    (needed to keep whole-model checks fast). Run in float64.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise InvalidArgument("grad_check eps must lie in [1e-6, 1e-3]")

    def scalar_of(t):
        out = fn(t)
        return out if out.size == 1 else tsum(out)

    probe = Tensor(x.data.copy(), requires_grad=True)
    scalar_of(probe).backward()
    analytic = probe.grad.reshape(-1)

    flat = x.data.reshape(-1).copy()
    n = flat.size
    if coords is None:
        idx = np.arange(n)
    else:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(n, size=min(coords, n), replace=False)

    base = Tensor(flat.reshape(x.shape))
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar_of(base).item()
            flat[i] = orig - eps
            fm = scalar_of(base).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = analytic[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def grad_check_params(loss_fn, params, eps=1e-4, coords_per_param=4, rng=None):
    """Finite-difference check of d(loss)/d(param) for a dict of parameters.

    ``loss_fn()`` re-runs the forward pass and returns a scalar Tensor.
    One analytic backward is shared by all probes; per parameter only a
    seeded sample of coordinates is probed so whole-model checks stay
    fast. Returns {param_name: max relative error}.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    for p in params.values():
        p.zero_grad()

    errors = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            ana = analytic[name].reshape(-1)
            idx = rng.choice(flat.size, size=min(coords_per_param, flat.size),
                             replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_fn().item()
                flat[i] = orig - eps
                fm = loss_fn().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                rel = abs(ana[i] - num) / max(abs(ana[i]), abs(num), 1e-8)
                worst = max(worst, rel)
            errors[name] = worst
    return errors
