"""Dense float tensors with a reverse-mode differentiation tape.

Values are numpy arrays, float32 by default with a float64 path for
gradient checking. An operation executed while a Tape is active appends
a backward closure to it; ``backward`` then walks the tape once in
reverse insertion order, which is a valid topological order because
tensors are immutable once created. Gradient accumulation is additive,
so a value consumed k times receives the sum of k contributions.

Layout is NCHW row-major throughout.
"""

import numpy as np

DEFAULT_DTYPE = np.float32
LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class EvaluationError(ArithmeticError):
    """A checked function produced a non-finite value."""


_TAPES = []


def active_tape():
    return _TAPES[-1] if _TAPES else None


class Tape:
    """Append-only record of executed operations, in execution order."""

    def __init__(self):
        self._entries = []      # (out, parents, backward_fn, op name)
        self._produced = set()  # id() of tensors created on this tape
        self.leaves = []        # requires_grad inputs in first-use order
        self._leaf_ids = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out, parents, backward_fn, name):
        for p in parents:
            pid = id(p)
            if p.requires_grad and pid not in self._produced and pid not in self._leaf_ids:
                self._leaf_ids.add(pid)
                self.leaves.append(p)
        self._produced.add(id(out))
        self._entries.append((out, parents, backward_fn, name))

    def produced(self, t):
        return id(t) in self._produced


class Tensor:
    """Immutable dense array of 32- or 64-bit floats.

    ``grad`` is bookkeeping owned by ``backward`` and is the only
    mutable attribute; ``data`` must never be written in place (the
    trainer rebinds it wholesale when stepping parameters).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

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

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name})"

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
        return neg(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def zeros(shape, dtype=DEFAULT_DTYPE):
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=DEFAULT_DTYPE):
    return Tensor(np.ones(shape, dtype=dtype))


def zeros_like(t):
    return Tensor(np.zeros_like(t.data))


def _apply(name, parents, out_data, backward_fn):
    """Wrap a forward result, recording onto the active tape if needed."""
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(out, tuple(parents), backward_fn, name)
    return out


def _unbroadcast(g, shape):
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_check(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} are not compatible") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _apply("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _apply("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "mul")
    ad, bd = a.data, b.data
    return _apply("mul", (a, b), ad * bd,
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _apply("div", (a, b), out, bwd)


def neg(a):
    a = as_tensor(a)
    return _apply("neg", (a,), -a.data, lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _apply("square", (a,), ad * ad, lambda g: (2.0 * ad * g,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _apply("sqrt", (a,), out, lambda g: (g * (0.5 / out),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _apply("exp", (a,), out, lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _apply("log", (a,), np.log(ad), lambda g: (g / ad,))


def absolute(a):
    a = as_tensor(a)
    ad = a.data
    return _apply("abs", (a,), np.abs(ad), lambda g: (g * np.sign(ad),))


# ---------------------------------------------------------------------------
# activations


def relu(a):
    a = as_tensor(a)
    ad = a.data
    return _apply("relu", (a,), np.maximum(ad, 0), lambda g: (g * (ad > 0),))


def leaky_relu(a):
    a = as_tensor(a)
    ad = a.data
    factor = np.where(ad > 0, 1.0, LEAKY_SLOPE).astype(ad.dtype)
    return _apply("leaky_relu", (a,), ad * factor, lambda g: (g * factor,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _apply("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softplus(a):
    """log(1 + e^x), computed without overflow; gradient is sigmoid(x)."""
    a = as_tensor(a)
    ad = a.data
    out = np.maximum(ad, 0) + np.log1p(np.exp(-np.abs(ad)))
    return _apply("softplus", (a,), out, lambda g: (g * _sigmoid(ad),))


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def activation(kind, a):
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind '{kind}'")
    return ACTIVATIONS[kind](a)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a):
    a = as_tensor(a)
    shape = a.shape
    return _apply("sum", (a,), np.asarray(a.data.sum()),
                  lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=False),))


def mean(a):
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return _apply("mean", (a,), np.asarray(a.data.mean()),
                  lambda g: (np.broadcast_to(g / n, shape).astype(g.dtype, copy=False),))


def sum_axes(a, axes, keepdims=True):
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def bwd(g):
        return (np.broadcast_to(g.reshape(kshape), shape).astype(g.dtype, copy=False),)

    return _apply("sum_axes", (a,), out, bwd)


def mean_axes(a, axes, keepdims=True):
    a = as_tensor(a)
    shape = a.shape
    n = int(np.prod([shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def bwd(g):
        return (np.broadcast_to(g.reshape(kshape) / n, shape).astype(g.dtype, copy=False),)

    return _apply("mean_axes", (a,), out, bwd)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _apply("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def concat_channels(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _apply("concat_channels", (a, b), out,
                  lambda g: (g[:, :ca], g[:, ca:]))


def slice_channels(a, start, stop):
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _apply("slice_channels", (a,), a.data[:, start:stop].copy(), bwd)


def take(a, i):
    """Scalar element of a 1-D tensor, with scatter gradient."""
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g
        return (full,)

    return _apply("take", (a,), np.asarray(a.data[i]), bwd)


# ---------------------------------------------------------------------------
# structured ops


def softmax_channels(a):
    """Softmax over axis 1 of an NCHW tensor, stabilized by max-subtraction.

    At every (sample, pixel) the outputs over the channel axis are
    positive and sum to 1. The subtracted max is a constant shift and
    does not alter the function or its gradient.
    """
    a = as_tensor(a)
    m = a.data.max(axis=1, keepdims=True)
    e = exp(sub(a, Tensor(m)))
    s = sum_axes(e, (1,), keepdims=True)
    return div(e, s)


def _im2col(xp, kh, kw, stride, oh, ow):
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, oh, ow),
        (s0, s1, s2, s3, s2 * stride, s3 * stride), writeable=False)
    return windows.reshape(n, c * kh * kw, oh * ow)


def conv2d(x, kernel, bias=None, stride=1, pad=0):
    """Cross-correlation of an NCHW input with an OIHW kernel.

    Zero padding, no kernel flip; output spatial size is
    floor((H + 2*pad - kH)/stride) + 1. Gradients are defined for the
    input, the kernel and the bias.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: need NCHW input and OIHW kernel, got {tuple(x.shape)} and {tuple(kernel.shape)}")
    n, c, h, w = x.shape
    o, i, kh, kw = kernel.shape
    if i != c:
        raise ShapeError(f"conv2d: input has {c} channels (shape {tuple(x.shape)}) but kernel expects {i} (shape {tuple(kernel.shape)})")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if pad < 0:
        raise ValueError("conv2d: pad must be >= 0")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: empty output for input {tuple(x.shape)}, kernel {tuple(kernel.shape)}, stride {stride}, pad {pad}")

    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    w2 = kernel.data.reshape(o, -1)
    out = np.matmul(w2, cols).reshape(n, o, oh, ow)
    if bias is not None:
        bias = as_tensor(bias)
        np.add(out, bias.data.reshape(1, o, 1, 1), out=out)

    kshape = kernel.shape

    def bwd(g):
        g2 = g.reshape(n, o, oh * ow)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kshape)
        # input gradient: full correlation of the (dilated, padded) output
        # gradient with the flipped kernel, as one gemm
        dil_h = stride * (oh - 1) + 1
        dil_w = stride * (ow - 1) + 1
        buf = np.zeros((n, o, dil_h + 2 * (kh - 1), dil_w + 2 * (kw - 1)), dtype=g.dtype)
        buf[:, :, kh - 1:kh - 1 + dil_h:stride, kw - 1:kw - 1 + dil_w:stride] = g
        ch = dil_h + kh - 1  # correlation output spatial size
        cw = dil_w + kw - 1
        gcols = _im2col(buf, kh, kw, 1, ch, cw)
        wrot = np.ascontiguousarray(
            kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]).reshape(c, -1)
        corr = np.matmul(wrot, gcols).reshape(n, c, ch, cw)
        hp, wp = h + 2 * pad, w + 2 * pad
        if (ch, cw) != (hp, wp):  # stride left trailing rows/cols unvisited
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            gxp[:, :, :ch, :cw] = corr
        else:
            gxp = corr
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _apply("conv2d", parents, out, bwd)


def upsample_nearest(x, factor):
    """Replicate each pixel factor x factor; the gradient sums the block."""
    x = as_tensor(x)
    if int(factor) != factor or factor < 1:
        raise ValueError("upsample_nearest: factor must be an integer >= 1")
    factor = int(factor)
    if factor == 1:
        return _apply("upsample_nearest", (x,), x.data.copy(), lambda g: (g,))
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _apply("upsample_nearest", (x,), out, bwd)


def instance_norm(x, gain, bias, eps=1e-5):
    """Per-sample, per-channel standardization over H*W, then affine.

    A constant channel maps to the bias (the eps guard keeps the
    zero-variance case finite). Built from primitive ops so the
    gradient comes from the tape.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ValueError("instance_norm: eps must be > 0")
    c = x.shape[1]
    mu = mean_axes(x, (2, 3))
    xc = sub(x, mu)
    var = mean_axes(square(xc), (2, 3))
    xhat = div(xc, sqrt(add(var, float(eps))))
    g4 = reshape(gain, (1, c, 1, 1))
    b4 = reshape(bias, (1, c, 1, 1))
    return add(mul(xhat, g4), b4)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(tape, loss):
    """Walk the tape once in reverse, seeding 1.0 at the scalar loss.

    Returns a map from every requires_grad leaf that participated in
    the tape to its gradient array (zeros for leaves the loss does not
    reach). Also leaves ``.grad`` populated on reached tensors.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {tuple(loss.shape)}")
    if not tape.produced(loss) and loss.requires_grad:
        raise ValueError("backward: loss was not produced on this tape")
    for out, parents, _, _ in tape._entries:
        out.grad = None
        for p in parents:
            p.grad = None
    loss.grad = np.ones_like(loss.data)
    for out, parents, bwd, _ in reversed(tape._entries):
        g = out.grad
        if g is None:
            continue
        contribs = bwd(g)
        for p, contrib in zip(parents, contribs):
            if contrib is None or not p.requires_grad:
                continue
            p.grad = contrib if p.grad is None else p.grad + contrib
    return {t: (t.grad if t.grad is not None else np.zeros_like(t.data)) for t in tape.leaves}


def grad_check(f, x, eps=1e-3, coords=None):
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a Tensor to a scalar Tensor and is evaluated in 64-bit
    mode. Error per coordinate is |a - b| / max(|a|, |b|, 1e-8); the
    finite-difference probes run off-tape.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be > 0")
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(x64)
    if y.size != 1:
        raise ValueError("grad_check: function must return a scalar")
    if not np.isfinite(y.item()):
        raise EvaluationError("grad_check: function value is not finite")
    g = backward(tape, y).get(x64)
    if g is None:
        g = np.zeros_like(x64.data)
    g = g.ravel()
    base = x64.data.ravel()
    idxs = range(base.size) if coords is None else coords
    worst = 0.0
    for i in idxs:
        xp = base.copy()
        xp[i] += eps
        xm = base.copy()
        xm[i] -= eps
        fp = f(Tensor(xp.reshape(x64.shape), dtype=np.float64)).item()
        fm = f(Tensor(xm.reshape(x64.shape), dtype=np.float64)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError("grad_check: perturbed function value is not finite")
        num = (fp - fm) / (2.0 * eps)
        err = abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-8)
        worst = max(worst, err)
    return worst
