"""Synthetic two-domain fixtures: axis-aligned stripes vs isotropic texture.

Domain A images concentrate their spectrum in a few low-frequency
axis-aligned bins; domain B images carry dispersed high-frequency
energy. Used by the trainer tests and the acceptance suite.
"""

import numpy as np

from spectragan.rng import SplitMix64
from spectragan.spectral import _fft2_core


def stripe_image(seed, size=64):
    """Low-frequency sinusoidal grating along one axis, 3 channels."""
    rng = SplitMix64(seed)
    freq = 2 + int(rng.uniform(1)[0] * 3)          # 2..4 cycles, radius < size/4
    horizontal = rng.uniform(1)[0] < 0.5
    phase = rng.uniform(1)[0] * 2 * np.pi
    coords = np.arange(size)
    wave = np.sin(2 * np.pi * freq * coords / size + phase)
    grid = np.tile(wave, (size, 1)) if horizontal else np.tile(wave[:, None], (1, size))
    channels = []
    for _ in range(3):
        gain = 0.5 + 0.2 * rng.uniform(1)[0]
        channels.append(gain * grid)
    return np.stack(channels).astype(np.float32)


def texture_image(seed, size=64):
    """Isotropic band-pass noise with mostly high-frequency energy."""
    rng = SplitMix64(seed)
    cut = size // 4
    dy = np.minimum(np.arange(size), size - np.arange(size))
    radius = np.sqrt(dy[:, None] ** 2 + dy[None, :] ** 2)
    annulus = (radius > cut) & (radius < size // 2)
    channels = []
    for _ in range(3):
        noise = rng.normal((size, size))
        spec = _fft2_core(noise.astype(np.complex128), -1)
        filtered = _fft2_core(spec * annulus, +1).real / (size * size)
        filtered *= 0.55 / max(np.abs(filtered).max(), 1e-9)
        channels.append(filtered)
    return np.stack(channels).astype(np.float32)


def stripe_domain(count=4, size=64, seed=100):
    return [stripe_image(seed + i, size) for i in range(count)]


def texture_domain(count=4, size=64, seed=200):
    return [texture_image(seed + i, size) for i in range(count)]
