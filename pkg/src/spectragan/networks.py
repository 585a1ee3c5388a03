"""Attention-guided translation generator and patch discriminator.

The generator encodes the input once and decodes it through parallel
branches: per-pixel spatial attention over n layers, n-1 generated
content layers (the n-th content is the input itself), per-frequency
spectral attention, and (in the independent-amplitude configuration) a
dedicated amplitude decoder. Both attention families are softmax
normalized over their n channels, so they sum to one at every
location. Spectral masks and generated amplitudes are conjugate-pair
symmetrized, which keeps every inverse transform real.

Composition of the branches happens in ``compose_outputs``; a small
convolutional fuser then blends the composed image with the input and
produces the final tanh-bounded output.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .spectral import (EPS_AMP, _conj_flip, _fft2_core, _require_pow2,
                       amplitude_t, fft2d_t, ifft2d_t, polar_recombine_t,
                       symmetrize_t)
from .tensor import (ShapeError, Tensor, add, as_tensor, concat_channels,
                     conv2d, instance_norm, leaky_relu, mul, relu, reshape,
                     slice_channels, softmax_channels, take, tanh,
                     upsample_nearest)

WEIGHT_STD = 0.02
FUSER_WIDTH = 16


class GenConfig(enum.Enum):
    """How the per-layer spectrum entering the spectral branch is built."""

    DIRECT_SPECTRUM_A = "a-direct"      # transform of the content layer
    PHASE_RECOMBINED_A = "a-phase"      # content amplitude + input phase
    INDEPENDENT_AMPLITUDE_B = "b"       # decoded amplitude + input phase

    @classmethod
    def from_string(cls, s):
        for cfg in cls:
            if cfg.value == s:
                return cfg
        raise ValueError(f"unknown generator config '{s}' (choose from {[c.value for c in cls]})")


# ---------------------------------------------------------------------------
# layers


class Conv:
    def __init__(self, rng, cin, cout, k, stride=1, pad=0, dtype=np.float32, w_scale=1.0):
        w = rng.normal((cout, cin, k, k)) * (WEIGHT_STD * w_scale)
        self.w = Tensor(w.astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        return conv2d(x, self.w, self.b, self.stride, self.pad)

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class InstNorm:
    def __init__(self, c, dtype=np.float32, eps=1e-5):
        self.g = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return instance_norm(x, self.g, self.b, self.eps)

    def named(self, prefix):
        return {f"{prefix}.g": self.g, f"{prefix}.b": self.b}


class ResBlock:
    def __init__(self, rng, c, dtype=np.float32):
        self.c1 = Conv(rng, c, c, 3, 1, 1, dtype)
        self.n1 = InstNorm(c, dtype)
        self.c2 = Conv(rng, c, c, 3, 1, 1, dtype)
        self.n2 = InstNorm(c, dtype)

    def __call__(self, x):
        h = relu(self.n1(self.c1(x)))
        return add(x, self.n2(self.c2(h)))

    def named(self, prefix):
        out = {}
        for name, part in (("c1", self.c1), ("n1", self.n1), ("c2", self.c2), ("n2", self.n2)):
            out.update(part.named(f"{prefix}.{name}"))
        return out


class Encoder:
    """7x7 stem, two stride-2 stages, two residual blocks at 4*w channels."""

    def __init__(self, rng, w, dtype=np.float32):
        self.c1 = Conv(rng, 3, w, 7, 1, 3, dtype)
        self.n1 = InstNorm(w, dtype)
        self.c2 = Conv(rng, w, 2 * w, 3, 2, 1, dtype)
        self.n2 = InstNorm(2 * w, dtype)
        self.c3 = Conv(rng, 2 * w, 4 * w, 3, 2, 1, dtype)
        self.n3 = InstNorm(4 * w, dtype)
        self.r1 = ResBlock(rng, 4 * w, dtype)
        self.r2 = ResBlock(rng, 4 * w, dtype)

    def __call__(self, x):
        h = relu(self.n1(self.c1(x)))
        h = relu(self.n2(self.c2(h)))
        h = relu(self.n3(self.c3(h)))
        return self.r2(self.r1(h))

    def named(self, prefix):
        out = {}
        for name in ("c1", "n1", "c2", "n2", "c3", "n3", "r1", "r2"):
            out.update(getattr(self, name).named(f"{prefix}.{name}"))
        return out


class DecoderBranch:
    """Two residual blocks, two nearest-upsample + conv stages, 7x7 head."""

    def __init__(self, rng, w, out_channels, dtype=np.float32):
        self.r1 = ResBlock(rng, 4 * w, dtype)
        self.r2 = ResBlock(rng, 4 * w, dtype)
        self.u1 = Conv(rng, 4 * w, 2 * w, 3, 1, 1, dtype)
        self.n1 = InstNorm(2 * w, dtype)
        self.u2 = Conv(rng, 2 * w, w, 3, 1, 1, dtype)
        self.n2 = InstNorm(w, dtype)
        self.head = Conv(rng, w, out_channels, 7, 1, 3, dtype)

    def __call__(self, e):
        h = self.r2(self.r1(e))
        h = relu(self.n1(self.u1(upsample_nearest(h, 2))))
        h = relu(self.n2(self.u2(upsample_nearest(h, 2))))
        return self.head(h)

    def named(self, prefix):
        out = {}
        for name in ("r1", "r2", "u1", "n1", "u2", "n2", "head"):
            out.update(getattr(self, name).named(f"{prefix}.{name}"))
        return out


# ---------------------------------------------------------------------------
# parameter bundles


class _Bundle:
    def named_tensors(self):
        out = {}
        for name, part in self._children():
            if isinstance(part, Tensor):
                out[name] = part
            else:
                out.update(part.named(name))
        return out

    def param_count(self):
        return sum(t.size for t in self.named_tensors().values())

    def set_trainable(self, flag):
        for t in self.named_tensors().values():
            t.requires_grad = bool(flag)


class GeneratorParams(_Bundle):
    """All learnable weights of one mapping direction.

    Parameter count for base width w, attention channels n (every conv
    carries a bias, every instance norm a gain and a bias):

      encoder               666 w^2 + 216 w
      branch with k outputs 666 w^2 +  57 w + k (49 w + 1)
      fuser                 1315
      lambdas               2 n

    with branches for k = n (spatial attention), k = n (spectral
    attention), k = 3(n-1) (contents) and, in the independent-amplitude
    configuration, another k = 3(n-1) (amplitudes).
    """

    def __init__(self, rng, n, config, base_width, learn_lambdas=False, dtype=np.float32):
        if n < 2:
            raise ValueError(f"attention channel count n must be >= 2, got {n}")
        if base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {base_width}")
        self.n = n
        self.config = config
        self.base_width = base_width
        self.learn_lambdas = bool(learn_lambdas)
        w = base_width
        self.encoder = Encoder(rng, w, dtype)
        self.dec_spatial = DecoderBranch(rng, w, n, dtype)
        self.dec_content = DecoderBranch(rng, w, 3 * (n - 1), dtype)
        self.dec_spectral = DecoderBranch(rng, w, n, dtype)
        self.dec_amplitude = None
        if config is GenConfig.INDEPENDENT_AMPLITUDE_B:
            self.dec_amplitude = DecoderBranch(rng, w, 3 * (n - 1), dtype)
        self.fuse1 = Conv(rng, 6, FUSER_WIDTH, 3, 1, 1, dtype)
        # near-zero last layer: the fuser starts as ~tanh(pre_fuser), so
        # early training stays close to the raw attention composition
        # (kept nonzero so every weight receives gradient from step one)
        self.fuse2 = Conv(rng, FUSER_WIDTH, 3, 3, 1, 1, dtype, w_scale=0.01)
        self.lam_a = Tensor(np.full(n, 0.5, dtype=dtype), requires_grad=self.learn_lambdas)
        self.lam_s = Tensor(np.full(n, 0.5, dtype=dtype), requires_grad=self.learn_lambdas)

    def _children(self):
        kids = [("enc", self.encoder), ("att_a", self.dec_spatial),
                ("content", self.dec_content), ("att_s", self.dec_spectral)]
        if self.dec_amplitude is not None:
            kids.append(("amp", self.dec_amplitude))
        kids += [("fuse1", self.fuse1), ("fuse2", self.fuse2),
                 ("lam_a", self.lam_a), ("lam_s", self.lam_s)]
        return kids

    def set_trainable(self, flag):
        for name, t in self.named_tensors().items():
            if name in ("lam_a", "lam_s"):
                t.requires_grad = bool(flag) and self.learn_lambdas
            else:
                t.requires_grad = bool(flag)

    def copy_cast(self, dtype):
        clone = GeneratorParams(SplitMix64(0), self.n, self.config,
                                self.base_width, self.learn_lambdas, dtype)
        src = self.named_tensors()
        for name, t in clone.named_tensors().items():
            t.data = src[name].data.astype(dtype)
        return clone


class DiscriminatorParams(_Bundle):
    """Patch discriminator: strides 2,2,2,1 then a 1-channel head.

    Parameter count for base width w: conv4(3,w) + conv4(w,2w) + IN(2w)
    + conv4(2w,4w) + IN(4w) + conv4(4w,8w) + conv4(8w,1); a 64x64 input
    yields a 6x6 logit map.
    """

    def __init__(self, rng, base_width, dtype=np.float32):
        if base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {base_width}")
        self.base_width = base_width
        w = base_width
        self.c1 = Conv(rng, 3, w, 4, 2, 1, dtype)
        self.c2 = Conv(rng, w, 2 * w, 4, 2, 1, dtype)
        self.n2 = InstNorm(2 * w, dtype)
        self.c3 = Conv(rng, 2 * w, 4 * w, 4, 2, 1, dtype)
        self.n3 = InstNorm(4 * w, dtype)
        self.c4 = Conv(rng, 4 * w, 8 * w, 4, 1, 1, dtype)
        self.c5 = Conv(rng, 8 * w, 1, 4, 1, 1, dtype)

    def _children(self):
        return [(name, getattr(self, name)) for name in ("c1", "c2", "n2", "c3", "n3", "c4", "c5")]

    def copy_cast(self, dtype):
        clone = DiscriminatorParams(SplitMix64(0), self.base_width, dtype)
        src = self.named_tensors()
        for name, t in clone.named_tensors().items():
            t.data = src[name].data.astype(dtype)
        return clone


def init_generator(seed, n, config, base_width, learn_lambdas=False, dtype=np.float32):
    """Deterministic normal(0, 0.02) weight init for one direction."""
    if isinstance(config, str):
        config = GenConfig.from_string(config)
    return GeneratorParams(SplitMix64(seed), n, config, base_width, learn_lambdas, dtype)


def init_discriminator(seed, base_width, dtype=np.float32):
    return DiscriminatorParams(SplitMix64(seed), base_width, dtype)


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class GeneratorOutput:
    image: Tensor               # 3 x H x W, in [-1, 1]
    spatial_attention: Tensor   # n x H x W, sums to 1 over n
    spectral_attention: Tensor  # n x H x W, sums to 1 over n, symmetrized
    contents: Tensor            # (n-1) x 3 x H x W
    amplitudes: Tensor          # (n-1) x 3 x H x W or None (config a)
    pre_fuser: Tensor           # 3 x H x W, composition before the fuser
    shared_phase: np.ndarray    # 3 x H x W, constant phase of the input
    imag_residual: float        # max |imag| discarded across spectral terms


def _shared_phase(x_data):
    z = _fft2_core(x_data.astype(np.complex128), -1)
    return np.arctan2(z.imag, z.real)


def compose_outputs(contents, spatial_att, spectral_att, amplitudes, x,
                    shared_phase, lam_a, lam_s, config):
    """Weighted sum of spatial and spectral attention terms.

    For each layer i the spatial term is lam_a[i] * C_i * A_i and the
    spectral term is lam_s[i] * real(iFFT(sym(S_i) * Z_i)), where Z_i
    is built per the configuration. The background layer (i = n-1) uses
    the input image as its content and the input spectrum amplitude in
    the independent-amplitude configuration. Phase is held constant;
    everything else is differentiable. Returns (pre_fuser, residual)
    where residual is the largest discarded imaginary magnitude.
    """
    contents = as_tensor(contents)
    spatial_att, spectral_att = as_tensor(spatial_att), as_tensor(spectral_att)
    x = as_tensor(x)
    if x.ndim == 3:
        x = reshape(x, (1,) + tuple(x.shape))
    n = spatial_att.shape[1]
    if spectral_att.shape[1] != n:
        raise ShapeError(f"attention channel counts differ: {n} vs {spectral_att.shape[1]}")
    if contents.shape[1] != 3 * (n - 1):
        raise ShapeError(f"expected {3 * (n - 1)} content channels for n={n}, got {contents.shape[1]}")
    if config is GenConfig.INDEPENDENT_AMPLITUDE_B:
        if amplitudes is None:
            raise ValueError("independent-amplitude config requires amplitude maps")
        amplitudes = symmetrize_t(as_tensor(amplitudes))
    elif amplitudes is not None:
        raise ValueError(f"config {config.value} does not take amplitude maps")

    att_s = symmetrize_t(spectral_att)
    lam_a, lam_s = as_tensor(lam_a), as_tensor(lam_s)
    acc = None
    residual = 0.0
    for i in range(n):
        c_i = slice_channels(contents, 3 * i, 3 * i + 3) if i < n - 1 else x
        a_i = slice_channels(spatial_att, i, i + 1)
        term = mul(mul(c_i, a_i), take(lam_a, i))
        s_i = slice_channels(att_s, i, i + 1)
        if config is GenConfig.DIRECT_SPECTRUM_A:
            zr, zi = fft2d_t(c_i)
        elif config is GenConfig.PHASE_RECOMBINED_A:
            fr, fi = fft2d_t(c_i)
            zr, zi = polar_recombine_t(amplitude_t(fr, fi), shared_phase)
        else:
            if i < n - 1:
                amp = slice_channels(amplitudes, 3 * i, 3 * i + 3)
            else:
                fr, fi = fft2d_t(x)
                amp = amplitude_t(fr, fi)
            zr, zi = polar_recombine_t(amp, shared_phase)
        o_re, o_im = ifft2d_t(mul(zr, s_i), mul(zi, s_i))
        residual = max(residual, float(np.abs(o_im.data).max()))
        term = add(term, mul(o_re, take(lam_s, i)))
        acc = term if acc is None else add(acc, term)
    return acc, residual


def generator_forward(p, x):
    """Run one translation direction on a 3 x H x W image in [-1, 1]."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected a 3 x H x W image, got {tuple(x.shape)}")
    h, w = x.shape[1], x.shape[2]
    if h != w:
        raise ValueError(f"input must be square, got {h}x{w}")
    _require_pow2(h, "height")
    _require_pow2(w, "width")
    n = p.n
    x4 = reshape(x, (1, 3, h, w))

    e = p.encoder(x4)
    att_a = softmax_channels(p.dec_spatial(e))
    att_s = symmetrize_t(softmax_channels(p.dec_spectral(e)))
    contents = tanh(p.dec_content(e))
    amps = None
    if p.config is GenConfig.INDEPENDENT_AMPLITUDE_B:
        # relu + floor keeps amplitudes positive; symmetrized inside compose
        amps = add(relu(p.dec_amplitude(e)), EPS_AMP)
    shared_phase = _shared_phase(x.data)

    pre4, residual = compose_outputs(contents, att_a, att_s, amps, x4,
                                     shared_phase, p.lam_a, p.lam_s, p.config)

    hidden = relu(p.fuse1(concat_channels(pre4, x4)))
    img4 = tanh(add(pre4, p.fuse2(hidden)))

    return GeneratorOutput(
        image=reshape(img4, (3, h, w)),
        spatial_attention=reshape(att_a, (n, h, w)),
        spectral_attention=reshape(att_s, (n, h, w)),
        contents=reshape(contents, (n - 1, 3, h, w)),
        amplitudes=None if amps is None else reshape(symmetrize_t(amps), (n - 1, 3, h, w)),
        pre_fuser=reshape(pre4, (3, h, w)),
        shared_phase=shared_phase,
        imag_residual=residual,
    )


def discriminator_forward(d, img):
    """Raw patch logits for a 3 x H x W image (sigmoid lives in the loss)."""
    img = as_tensor(img)
    if img.ndim == 3:
        img = reshape(img, (1,) + tuple(img.shape))
    h = leaky_relu(d.c1(img))
    h = leaky_relu(d.n2(d.c2(h)))
    h = leaky_relu(d.n3(d.c3(h)))
    h = leaky_relu(d.c4(h))
    logits = d.c5(h)
    return reshape(logits, logits.shape[1:])
