"""Image decoding, resizing, normalization and dataset iteration.

Binary PPM (P6, maxval 255) is the one mandatory format: it is
bit-exact and needs no dependencies. Datasets follow the usual
<root>/trainA, trainB, testA, testB layout.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64
from .tensor import Tensor


class PpmParseError(ValueError):
    """Malformed PPM input; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class ImageRecord:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8
    path: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel buffer {self.pixels.shape} does not match {self.height}x{self.width}x3")


def _read_token(data, pos):
    # skip whitespace and '#' comments between header tokens
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PpmParseError("unexpected end of header", pos)
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def load_ppm(data, path=""):
    """Decode binary P6 bytes into an ImageRecord."""
    if data[:2] != b"P6":
        raise PpmParseError(f"unsupported magic {data[:2]!r}, expected b'P6'", 0)
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise PpmParseError(f"expected integer header field, got {tok!r}", pos - len(tok)) from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PpmParseError(f"bad dimensions {width}x{height}", pos)
    if maxval != 255:
        raise PpmParseError(f"unsupported maxval {maxval}, only 255", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PpmParseError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise PpmParseError(f"pixel payload short: need {need} bytes, have {len(payload)}", pos + len(payload))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageRecord(width, height, pixels.copy(), path)


def save_ppm(rec):
    """Encode with a canonical header; pixels round-trip bit-exactly."""
    header = f"P6\n{rec.width} {rec.height}\n255\n".encode()
    return header + rec.pixels.tobytes()


def load_ppm_file(path):
    with open(path, "rb") as fh:
        return load_ppm(fh.read(), path=str(path))


def save_ppm_file(rec, path):
    with open(path, "wb") as fh:
        fh.write(save_ppm(rec))


def resize_bilinear(rec, target):
    """Bilinear resample to target x target, half-pixel centers.

    Sample positions follow the align_corners=False convention:
    src = (dst + 0.5) * (size / target) - 0.5, clamped to the image.
    """
    if target < 1:
        raise ValueError("target size must be >= 1")
    if rec.width == target and rec.height == target:
        return ImageRecord(target, target, rec.pixels.copy(), rec.path)
    src = rec.pixels.astype(np.float64)
    out = np.empty((target, target, 3), dtype=np.float64)

    def _axis_coords(size):
        pos = (np.arange(target) + 0.5) * (size / target) - 0.5
        pos = np.clip(pos, 0.0, size - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, size - 1)
        return lo, hi, (pos - lo)

    ylo, yhi, fy = _axis_coords(rec.height)
    xlo, xhi, fx = _axis_coords(rec.width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[ylo][:, xlo] * (1 - fx) + src[ylo][:, xhi] * fx
    bot = src[yhi][:, xlo] * (1 - fx) + src[yhi][:, xhi] * fx
    out = top * (1 - fy) + bot * fy
    pixels = np.floor(out + 0.5).clip(0, 255).astype(np.uint8)  # round half up
    return ImageRecord(target, target, pixels, rec.path)


def normalize(rec):
    """uint8 image -> Tensor 3 x H x W in [-1, 1] (v / 127.5 - 1)."""
    arr = rec.pixels.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0
    return Tensor(arr)


def denormalize(t):
    """Tensor/array 3 x H x W -> ImageRecord; clamps then rounds half up."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = np.clip(arr.astype(np.float64), -1.0, 1.0)
    pixels = np.floor((arr + 1.0) * 127.5 + 0.5).clip(0, 255).astype(np.uint8)
    return ImageRecord(arr.shape[2], arr.shape[1], pixels.transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetSpec:
    dir_a: str
    dir_b: str
    size: int = 64
    seed: int = 0


def list_images(directory):
    """Sorted .ppm paths in a directory (deterministic order)."""
    if not os.path.isdir(directory):
        raise ValueError(f"not a directory: {directory}")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".ppm"))
    return [os.path.join(directory, n) for n in names]


def load_domain(directory, size):
    """All images of one domain as normalized (3, size, size) arrays."""
    paths = list_images(directory)
    if not paths:
        raise ValueError(f"no decodable images in {directory}")
    out = []
    for p in paths:
        rec = resize_bilinear(load_ppm_file(p), size)
        out.append(normalize(rec).data)
    return out


def _epoch_perm(seed, salt, epoch, m):
    # counter-based: each epoch's shuffle depends only on (seed, salt, epoch),
    # so a resumed run reproduces the stream from any iteration
    return SplitMix64((seed * 0x10001 + salt) ^ (epoch * 0x9E3779B9)).permutation(m)


def paired_indices(seed, count_a, count_b, start=0):
    """Deterministic endless stream of (index_a, index_b) pairs.

    Each domain is shuffled independently per epoch; the shorter domain
    cycles. ``start`` fast-forwards to a given draw without replaying.
    """
    t = start
    while True:
        ia = _epoch_perm(seed, 1, t // count_a, count_a)[t % count_a]
        ib = _epoch_perm(seed, 2, t // count_b, count_b)[t % count_b]
        yield int(ia), int(ib)
        t += 1


def dataset_iter(spec):
    """Endless deterministic stream of normalized (x, y) image pairs."""
    xs = load_domain(spec.dir_a, spec.size)
    ys = load_domain(spec.dir_b, spec.size)
    for ia, ib in paired_indices(spec.seed, len(xs), len(ys)):
        yield xs[ia], ys[ib]
