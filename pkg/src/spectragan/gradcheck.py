"""Central-difference verification of every differentiable operation.

Each check runs in 64-bit mode and reports the max relative error
against the tape gradient. Simple op checks use probe step 1e-3 with
inputs kept away from relu kinks. Whole-network checks cannot arrange
that, so they shrink the probe step to 1e-7 instead: the loss surface
is piecewise smooth and a small enough step keeps the central
difference on one side of every kink (errors collapse from ~1e-2 to
~1e-7 once the step clears the kink band; float64 keeps roundoff far
below the tolerances at this step size).

The composed-model check builds the whole two-generator loss on a
16x16 model in the direct-spectrum configuration (the one with no
constant-phase path, so the entire graph is differentiable) and probes
a 5-coordinate weight slice; the patch discriminator's fixed topology
needs at least 32 px of input, so it sees the generator output through
a 2x nearest upsample, which is itself on the tape.
"""

import numpy as np

from . import losses, networks, spectral, tensor
from .rng import SplitMix64
from .tensor import Tensor, grad_check

DEFAULT_EPS = 1e-3


def _rand(rng, shape):
    return Tensor(rng.normal(shape), dtype=np.float64)


def _away_from_kinks(arr, band=5e-3):
    out = arr.copy()
    small = np.abs(out) < band
    out[small] = np.sign(out[small] + 1e-12) * band * 2
    return out


def check_elementwise(seed):
    rng = SplitMix64(seed)
    b = _rand(rng, (3, 3))
    c = Tensor(rng.normal((3, 3)) + 3.0, dtype=np.float64)  # away from 0 for div

    def f(x):
        return tensor.tsum(tensor.div(tensor.mul(tensor.add(x, b), tensor.sub(x, b)), c))

    return grad_check(f, _rand(rng, (3, 3)), DEFAULT_EPS)


def check_activations(seed):
    rng = SplitMix64(seed)
    worst = 0.0
    for kind in ("relu", "leaky_relu", "tanh", "sigmoid"):
        x = rng.normal((4, 4))
        if kind in ("relu", "leaky_relu"):
            x = _away_from_kinks(x)
        w = Tensor(rng.normal((4, 4)), dtype=np.float64)

        def f(t, kind=kind, w=w):
            return tensor.tsum(tensor.mul(tensor.activation(kind, t), w))

        worst = max(worst, grad_check(f, Tensor(x, dtype=np.float64), DEFAULT_EPS))
    return worst


def check_softmax(seed):
    rng = SplitMix64(seed)
    w = Tensor(rng.normal((1, 3, 2, 2)), dtype=np.float64)

    def f(x):
        return tensor.tsum(tensor.mul(tensor.softmax_channels(x), w))

    return grad_check(f, _rand(rng, (1, 3, 2, 2)), DEFAULT_EPS)


def check_conv2d(seed):
    rng = SplitMix64(seed)
    x0 = _rand(rng, (1, 2, 6, 6))
    k0 = _rand(rng, (3, 2, 3, 3))
    b0 = _rand(rng, (3,))
    w = Tensor(rng.normal((1, 3, 3, 3)), dtype=np.float64)

    def loss(x, k, b):
        return tensor.tsum(tensor.mul(tensor.conv2d(x, k, b, stride=2, pad=1), w))

    errs = [
        grad_check(lambda t: loss(t, k0, b0), x0, DEFAULT_EPS),
        grad_check(lambda t: loss(x0, t, b0), k0, DEFAULT_EPS),
        grad_check(lambda t: loss(x0, k0, t), b0, DEFAULT_EPS),
    ]
    return max(errs)


def check_upsample(seed):
    rng = SplitMix64(seed)
    w = Tensor(rng.normal((1, 1, 6, 6)), dtype=np.float64)

    def f(x):
        return tensor.tsum(tensor.mul(tensor.upsample_nearest(x, 2), w))

    return grad_check(f, _rand(rng, (1, 1, 3, 3)), DEFAULT_EPS)


def check_instance_norm(seed):
    rng = SplitMix64(seed)
    x0 = _rand(rng, (1, 2, 4, 4))
    g0 = Tensor(rng.normal((2,)) * 0.1 + 1.0, dtype=np.float64)
    b0 = _rand(rng, (2,))
    w = Tensor(rng.normal((1, 2, 4, 4)), dtype=np.float64)

    def loss(x, g, b):
        return tensor.tsum(tensor.mul(tensor.instance_norm(x, g, b, 1e-5), w))

    return max(grad_check(lambda t: loss(t, g0, b0), x0, DEFAULT_EPS),
               grad_check(lambda t: loss(x0, t, b0), g0, DEFAULT_EPS),
               grad_check(lambda t: loss(x0, g0, t), b0, DEFAULT_EPS))


def check_amplitude(seed):
    rng = SplitMix64(seed)
    im = Tensor(rng.normal((4, 4)) + 2.0, dtype=np.float64)

    def f(re):
        return tensor.tsum(spectral.amplitude_t(re, im))

    return grad_check(f, Tensor(rng.normal((4, 4)) + 2.0, dtype=np.float64), DEFAULT_EPS)


def check_fft_adjoint(seed):
    return spectral.fft_adjoint_check(seed=seed, size=8, eps=DEFAULT_EPS)


def check_spectral_pipeline(seed):
    """amplitude -> polar recombine -> mask -> inverse FFT, end to end."""
    rng = SplitMix64(seed)
    ph = rng.normal((4, 4))
    mask = Tensor(rng.uniform(16).reshape(4, 4), dtype=np.float64)

    def f(amp_raw):
        amp = spectral.amplitude_t(amp_raw, tensor.mul(amp_raw, 0.5))
        zr, zi = spectral.polar_recombine_t(amp, ph)
        sym = spectral.symmetrize_t(mask)
        orr, oii = spectral.ifft2d_t(tensor.mul(zr, sym), tensor.mul(zi, sym))
        return tensor.tsum(tensor.add(tensor.square(orr), tensor.square(oii)))

    return grad_check(f, Tensor(rng.normal((4, 4)) + 2.0, dtype=np.float64), DEFAULT_EPS)


def check_discriminator(seed, eps=1e-7):
    rng = SplitMix64(seed)
    d = networks.init_discriminator(seed, 8).copy_cast(np.float64)
    img = Tensor(rng.normal((3, 64, 64)) * 0.4, dtype=np.float64)
    target = d.c3.w
    coords = np.linspace(0, target.size - 1, 5).astype(int).tolist()

    def f(wt):
        d.c3.w = wt
        return tensor.mean(networks.discriminator_forward(d, img))

    try:
        return grad_check(f, target, eps, coords=coords)
    finally:
        d.c3.w = target


def check_composed_model(seed, eps=1e-7):
    """Full two-generator training loss on a 16x16 model, 5-weight slice."""
    size, n, width = 16, 3, 4
    cfg = networks.GenConfig.DIRECT_SPECTRUM_A
    gen_xy = networks.init_generator(seed, n, cfg, width).copy_cast(np.float64)
    gen_yx = networks.init_generator(seed + 1, n, cfg, width).copy_cast(np.float64)
    disc_y = networks.init_discriminator(seed + 2, 4).copy_cast(np.float64)
    disc_x = networks.init_discriminator(seed + 3, 4).copy_cast(np.float64)
    disc_y.set_trainable(False)
    disc_x.set_trainable(False)
    rng = SplitMix64(seed + 4)
    x = Tensor(np.tanh(rng.normal((3, size, size))), dtype=np.float64)
    y = Tensor(np.tanh(rng.normal((3, size, size))), dtype=np.float64)
    weights = losses.LossWeights()

    def full_loss():
        fake_y = networks.generator_forward(gen_xy, x).image
        fake_x = networks.generator_forward(gen_yx, y).image
        adv_xy = losses.adversarial_g(
            networks.discriminator_forward(disc_y, tensor.reshape(
                tensor.upsample_nearest(tensor.reshape(fake_y, (1, 3, size, size)), 2),
                (3, 2 * size, 2 * size))))
        adv_yx = losses.adversarial_g(
            networks.discriminator_forward(disc_x, tensor.reshape(
                tensor.upsample_nearest(tensor.reshape(fake_x, (1, 3, size, size)), 2),
                (3, 2 * size, 2 * size))))
        rec_x = networks.generator_forward(gen_yx, fake_y).image
        rec_y = networks.generator_forward(gen_xy, fake_x).image
        cyc = losses.cycle_loss(x, rec_x, y, rec_y)
        idt = losses.identity_loss(x, networks.generator_forward(gen_yx, x).image,
                                   y, networks.generator_forward(gen_xy, y).image)
        return losses.total_generator_loss(adv_xy, adv_yx, cyc, idt, weights)

    target = gen_xy.encoder.c2.w
    coords = np.linspace(0, target.size - 1, 5).astype(int).tolist()

    def f(wt):
        gen_xy.encoder.c2.w = wt
        return full_loss()

    try:
        return grad_check(f, target, eps, coords=coords)
    finally:
        gen_xy.encoder.c2.w = target


SUITE = (
    ("elementwise", check_elementwise, 1e-4),
    ("activations", check_activations, 1e-4),
    ("softmax_channels", check_softmax, 1e-4),
    ("conv2d", check_conv2d, 1e-4),
    ("upsample_nearest", check_upsample, 1e-4),
    ("instance_norm", check_instance_norm, 1e-4),
    ("amplitude", check_amplitude, 1e-4),
    ("fft_adjoint", check_fft_adjoint, 1e-4),
    ("spectral_pipeline", check_spectral_pipeline, 1e-4),
    ("discriminator", check_discriminator, 1e-4),
    ("composed_generator_loss", check_composed_model, 1e-3),
)


def run_suite(seed=0):
    """Run every check; returns [(name, max rel. error, tolerance, ok)]."""
    results = []
    for name, fn, tol in SUITE:
        err = fn(seed)
        results.append((name, float(err), tol, bool(err < tol)))
    return results
