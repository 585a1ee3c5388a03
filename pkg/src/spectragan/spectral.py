"""2D discrete Fourier transforms and the frequency-domain toolbox.

Radix-2 Cooley-Tukey, rows then columns, power-of-two sizes only.
Convention: unnormalized forward transform, 1/(H*W) on the inverse.
All internal arithmetic runs in complex128 so conjugate-symmetry
residuals stay at rounding level even inside a float32 pipeline.

The differentiable entry points (suffix ``_t``) operate on Tensors and
exploit that the adjoint of the forward transform is H*W times the
inverse transform, so the backward pass is itself an FFT.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .rng import SplitMix64
from .tensor import (Tensor, Tape, as_tensor, add, mul, square, sqrt, tsum,
                     grad_check, _apply)

EPS_AMP = 1e-8  # smoothed-modulus floor; removes the gradient singularity at 0


def _require_pow2(n, name):
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"{name} dimension {n} is not a power of two")


@lru_cache(maxsize=None)
def _bitrev(n):
    r = np.zeros(n, dtype=np.intp)
    for i in range(1, n):
        r[i] = (r[i >> 1] >> 1) | ((i & 1) * (n >> 1))
    return r


def _fft_last(a, sign):
    """Iterative radix-2 butterflies along the last axis; sign=-1 forward."""
    n = a.shape[-1]
    out = np.ascontiguousarray(a[..., _bitrev(n)], dtype=np.complex128)
    span = 1
    while span < n:
        w = np.exp(sign * 1j * np.pi * np.arange(span) / span)
        v = out.reshape(out.shape[:-1] + (n // (2 * span), 2 * span))
        even = v[..., :span].copy()
        odd = v[..., span:] * w
        v[..., :span] = even + odd
        v[..., span:] = even - odd
        span *= 2
    return out


def _fft2_core(z, sign):
    """Unnormalized 2D transform over the last two axes (rows, then columns)."""
    _require_pow2(z.shape[-1], "width")
    _require_pow2(z.shape[-2], "height")
    z = _fft_last(z, sign)
    return _fft_last(z.swapaxes(-1, -2), sign).swapaxes(-1, -2)


def _conj_flip(a):
    """a[(-u) mod H, (-v) mod W] over the last two axes."""
    flipped = a[..., ::-1, ::-1]
    return np.roll(flipped, (1, 1), axis=(-2, -1))


# ---------------------------------------------------------------------------
# plain-array API


@dataclass
class ComplexGrid:
    """Paired real/imaginary grids for one frequency-domain channel."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real/imag shapes differ: {self.real.shape} vs {self.imag.shape}")

    def to_complex(self):
        return self.real + 1j * self.imag


@dataclass
class SpectralMask:
    """Nonnegative frequency-bin weights, conjugate-pair symmetric."""

    values: np.ndarray


def fft2d(grid):
    """Forward DFT of a real H x W grid (unnormalized)."""
    arr = np.asarray(grid, dtype=np.float64)
    z = _fft2_core(arr.astype(np.complex128), -1)
    return ComplexGrid(z.real.copy(), z.imag.copy())


def ifft2d(z):
    """Inverse DFT with the 1/(H*W) factor."""
    c = z.to_complex()
    h, w = c.shape[-2:]
    out = _fft2_core(c, +1) / (h * w)
    return ComplexGrid(out.real.copy(), out.imag.copy())


def amplitude(z):
    """Smoothed modulus sqrt(re^2 + im^2 + EPS_AMP^2), differentiable at 0."""
    return np.sqrt(z.real * z.real + z.imag * z.imag + EPS_AMP * EPS_AMP)


def phase(z):
    """atan2(im, re); the origin maps to 0 by convention.

    Phase is plumbing, never on the tape: only the constant phase of
    the input image is ever consumed downstream.
    """
    return np.arctan2(z.imag, z.real)


def polar_recombine(amp, ph):
    """(amp*cos(ph), amp*sin(ph)) as a ComplexGrid; amp must be >= 0."""
    amp = np.asarray(amp, dtype=np.float64)
    ph = np.asarray(ph, dtype=np.float64)
    if amp.shape != ph.shape:
        raise ValueError(f"amplitude/phase shapes differ: {amp.shape} vs {ph.shape}")
    if amp.min() < 0:
        raise ValueError("polar_recombine: amplitude must be nonnegative")
    return ComplexGrid(amp * np.cos(ph), amp * np.sin(ph))


def symmetrize_mask(mask):
    """Average each bin with its conjugate partner; idempotent.

    A symmetric mask keeps the filtered spectrum of a real image
    conjugate-symmetric, so its inverse transform stays real.
    """
    m = np.asarray(mask, dtype=np.float64)
    _require_pow2(m.shape[-1], "width")
    _require_pow2(m.shape[-2], "height")
    return SpectralMask((m + _conj_flip(m)) * 0.5)


def spectral_profile(image):
    """Radial energy histogram of the centered spectrum.

    Returns (hist, high_freq_ratio): hist[r] sums |F|^2 over bins at
    integer radius r from the centered DC; high_freq_ratio is the
    energy at radius > min(H, W)/4 over the total excluding DC
    (0 when everything sits in DC).
    """
    arr = np.asarray(image, dtype=np.float64)
    h, w = arr.shape
    power = np.abs(_fft2_core(arr.astype(np.complex128), -1)) ** 2
    centered = np.roll(power, (h // 2, w // 2), axis=(0, 1))
    dy = np.arange(h) - h // 2
    dx = np.arange(w) - w // 2
    radius = np.floor(np.sqrt(dy[:, None] ** 2 + dx[None, :] ** 2)).astype(int)
    hist = np.bincount(radius.ravel(), weights=centered.ravel(), minlength=radius.max() + 1)
    dc = centered[h // 2, w // 2]
    denom = hist.sum() - dc
    if denom <= 1e-12 * max(dc, 1.0):
        return hist, 0.0
    cut = min(h, w) // 4
    high = hist[cut + 1:].sum()
    return hist, float(high / denom)


# ---------------------------------------------------------------------------
# differentiable (tape) API


def fft2d_t(x):
    """Forward DFT of a real Tensor (..., H, W) -> (real, imag) Tensors.

    The gradient is H*W times the real part of the inverse transform of
    the upstream gradient, one inverse FFT per output grid.
    """
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    z = _fft2_core(x.data.astype(np.complex128), -1)
    hw = h * w
    dt = x.dtype

    def bwd_re(g):
        return ((_fft2_core(g.astype(np.complex128), +1).real).astype(dt),)

    def bwd_im(g):
        return ((_fft2_core(1j * g.astype(np.complex128), +1).real).astype(dt),)

    # adjoint = hw * ifft = hw * (core(+1)/hw) = core(+1)
    re = _apply("fft2d.re", (x,), z.real.astype(dt), bwd_re)
    im = _apply("fft2d.im", (x,), z.imag.astype(dt), bwd_im)
    return re, im


def ifft2d_t(re, im):
    """Inverse DFT of a Tensor pair -> (real, imag) Tensors, 1/(H*W) scaled."""
    re, im = as_tensor(re), as_tensor(im)
    h, w = re.shape[-2], re.shape[-1]
    hw = h * w
    z = _fft2_core(re.data.astype(np.complex128) + 1j * im.data.astype(np.complex128), +1) / hw
    dt = re.dtype

    def bwd_out_re(g):
        gz = _fft2_core(g.astype(np.complex128), -1) / hw
        return (gz.real.astype(dt), gz.imag.astype(dt))

    def bwd_out_im(g):
        gz = _fft2_core(1j * g.astype(np.complex128), -1) / hw
        return (gz.real.astype(dt), gz.imag.astype(dt))

    out_re = _apply("ifft2d.re", (re, im), z.real.astype(dt), bwd_out_re)
    out_im = _apply("ifft2d.im", (re, im), z.imag.astype(dt), bwd_out_im)
    return out_re, out_im


def amplitude_t(re, im):
    """Differentiable smoothed modulus of a Tensor pair."""
    return sqrt(add(add(square(re), square(im)), EPS_AMP * EPS_AMP))


def polar_recombine_t(amp, ph):
    """Tensor amplitude with a constant phase array -> (real, imag) Tensors."""
    ph = np.asarray(ph, dtype=np.float64)
    cos = Tensor(np.cos(ph).astype(amp.dtype))
    sin = Tensor(np.sin(ph).astype(amp.dtype))
    return mul(amp, cos), mul(amp, sin)


def symmetrize_t(m):
    """Tape version of symmetrize_mask; the averaging is self-adjoint."""
    m = as_tensor(m)
    _require_pow2(m.shape[-1], "width")
    _require_pow2(m.shape[-2], "height")
    out = (m.data + _conj_flip(m.data)) * 0.5
    return _apply("symmetrize", (m,), out.astype(m.dtype),
                  lambda g: ((g + _conj_flip(g)) * 0.5,))


def fft_adjoint_check(seed=0, size=8, eps=1e-3):
    """Gradient-check f(x) = sum |mask . FFT(x)|^2; returns max rel. error.

    Passing this verifies that the tape gradient through the forward
    transform equals the (scaled) inverse transform of the upstream
    gradient.
    """
    rng = SplitMix64(seed)
    mask = Tensor(rng.uniform(size * size).reshape(size, size), dtype=np.float64)
    x0 = Tensor(rng.normal((size, size)), dtype=np.float64)

    def f(x):
        re, im = fft2d_t(x)
        return tsum(add(square(mul(re, mask)), square(mul(im, mask))))

    return grad_check(f, x0, eps=eps)
