"""Cycle-consistent adversarial training loop with checkpointing.

Each iteration updates the two generators first (discriminators
frozen), then both discriminators against pooled generated images.
Everything is deterministic for a fixed seed: weight init, pair
sampling, pool decisions. Checkpoints are bit-exact and carry enough
state (including the pools) that a resumed run reproduces the
uninterrupted loss trace exactly.

Checkpoint wire format, all little-endian:
  magic "SDAG", u32 version (=1),
  u32 entry count, then per entry:
    u32 name length, name bytes, u32 rank, rank x u64 dims, f32 data;
  u32 tail count, then tail x u64:
    iteration, generator Adam step, discriminator Adam step,
    fake-X pool rng state, fake-Y pool rng state;
  u32 CRC32 of all preceding bytes.
"""

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import paired_indices
from .losses import (LossWeights, adversarial_d, adversarial_g, cycle_loss,
                     identity_loss, total_generator_loss)
from .networks import (GenConfig, discriminator_forward, generator_forward,
                       init_discriminator, init_generator)
from .rng import SplitMix64
from .tensor import Tape, Tensor, backward

MAGIC = b"SDAG"
VERSION = 1


class TrainingDivergedError(ArithmeticError):
    def __init__(self, iteration, loss_name, value):
        super().__init__(f"non-finite {loss_name} ({value}) at iteration {iteration}")
        self.iteration = iteration
        self.loss_name = loss_name


class CheckpointError(Exception):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointCrcError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moments per named parameter, plus the step counter."""

    def __init__(self, shapes, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8, dtype=np.float32):
        self.m = {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}
        self.v = {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}
        self.step = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps


def adam_step(params, grads, state):
    """Standard Adam with bias correction over the names present in grads.

    ``params`` maps names to Tensors; their ``data`` is rebound (never
    written in place, so arrays captured by earlier tapes stay valid).
    Returns (params, state).
    """
    if state.lr <= 0:
        raise ValueError("adam_step: lr must be > 0")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        t = params[name]
        if g.shape != t.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not match parameter '{name}' {t.data.shape}")
        g = g.astype(t.data.dtype, copy=False)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        update = (state.lr * (m / c1)) / (np.sqrt(v / c2) + state.eps)
        t.data = t.data - update
    return params, state


# ---------------------------------------------------------------------------
# image pool


class ImagePool:
    """Ring buffer of previously generated images (training stabilizer).

    While filling, returns the query image. Once full, with probability
    0.5 returns the query image, otherwise swaps it with a uniformly
    chosen stored image and returns the evicted one.
    """

    def __init__(self, size, seed):
        self.size = size
        self.images = []
        self.rng = SplitMix64(seed)

    def query(self, img):
        if self.size == 0:
            return img
        if len(self.images) < self.size:
            self.images.append(img)
            return img
        if self.rng.uniform(1)[0] < 0.5:
            return img
        j = self.rng.randint(self.size)
        old = self.images[j]
        self.images[j] = img
        return old


def pool_query(pool, img):
    return pool.query(img)


# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class TrainConfig:
    seed: int = 0
    iterations: int = 200
    image_size: int = 64
    n: int = 4
    gen_config: GenConfig = GenConfig.INDEPENDENT_AMPLITUDE_B
    weights: LossWeights = field(default_factory=LossWeights)
    base_width: int = 16
    disc_width: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay_start: int = -1       # -1: decay from iterations // 2
    pool_size: int = 50
    checkpoint_interval: int = 0   # 0: write only the final checkpoint
    learn_lambdas: bool = False

    def validate(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        s = self.image_size
        if s < 8 or (s & (s - 1)) != 0:
            raise ValueError(f"image_size must be a power of two >= 8, got {s}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.pool_size < 0:
            raise ValueError("pool_size must be >= 0")


class TrainState:
    def __init__(self, gen_xy, gen_yx, disc_y, disc_x, adam_g, adam_d,
                 pool_y, pool_x, iteration=0):
        self.gen_xy, self.gen_yx = gen_xy, gen_yx
        self.disc_y, self.disc_x = disc_y, disc_x
        self.adam_g, self.adam_d = adam_g, adam_d
        self.pool_y, self.pool_x = pool_y, pool_x
        self.iteration = iteration

    def gen_named(self):
        out = {f"gen_xy.{k}": t for k, t in self.gen_xy.named_tensors().items()}
        out.update({f"gen_yx.{k}": t for k, t in self.gen_yx.named_tensors().items()})
        return out

    def disc_named(self):
        out = {f"disc_y.{k}": t for k, t in self.disc_y.named_tensors().items()}
        out.update({f"disc_x.{k}": t for k, t in self.disc_x.named_tensors().items()})
        return out


def init_train_state(cfg):
    cfg.validate()
    gen_xy = init_generator(cfg.seed, cfg.n, cfg.gen_config, cfg.base_width, cfg.learn_lambdas)
    gen_yx = init_generator(cfg.seed + 1, cfg.n, cfg.gen_config, cfg.base_width, cfg.learn_lambdas)
    disc_y = init_discriminator(cfg.seed + 2, cfg.disc_width)
    disc_x = init_discriminator(cfg.seed + 3, cfg.disc_width)
    state = TrainState(gen_xy, gen_yx, disc_y, disc_x, None, None,
                       ImagePool(cfg.pool_size, cfg.seed + 4),
                       ImagePool(cfg.pool_size, cfg.seed + 5))
    state.adam_g = AdamState({k: t.shape for k, t in state.gen_named().items()},
                             cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    state.adam_d = AdamState({k: t.shape for k, t in state.disc_named().items()},
                             cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return state


def lr_at(cfg, iteration):
    """Constant, then linear decay to zero over the remaining iterations."""
    start = cfg.lr_decay_start if cfg.lr_decay_start >= 0 else cfg.iterations // 2
    if iteration < start or start >= cfg.iterations:
        return cfg.lr
    return cfg.lr * (cfg.iterations - iteration) / (cfg.iterations - start)


# ---------------------------------------------------------------------------
# training


def _check_finite(value, name, iteration):
    if not np.isfinite(value):
        raise TrainingDivergedError(iteration, name, value)
    return value


def generator_substep(state, xt, yt, cfg):
    """Update both generators; discriminators participate but stay frozen.

    Returns (partial loss report, fake_y image array, fake_x image array).
    """
    mode = cfg.weights.gan_mode
    it = state.iteration
    state.disc_y.set_trainable(False)
    state.disc_x.set_trainable(False)
    try:
        with Tape() as tape:
            fake_y = generator_forward(state.gen_xy, xt).image
            fake_x = generator_forward(state.gen_yx, yt).image
            adv_xy = adversarial_g(discriminator_forward(state.disc_y, fake_y), mode)
            adv_yx = adversarial_g(discriminator_forward(state.disc_x, fake_x), mode)
            rec_x = generator_forward(state.gen_yx, fake_y).image
            rec_y = generator_forward(state.gen_xy, fake_x).image
            cyc = cycle_loss(xt, rec_x, yt, rec_y)
            idt = identity_loss(xt, generator_forward(state.gen_yx, xt).image,
                                yt, generator_forward(state.gen_xy, yt).image)
            total = total_generator_loss(adv_xy, adv_yx, cyc, idt, cfg.weights)
        report = {
            "iteration": it,
            "adv_g_xy": _check_finite(adv_xy.item(), "adv_g_xy", it),
            "adv_g_yx": _check_finite(adv_yx.item(), "adv_g_yx", it),
            "cycle": _check_finite(cyc.item(), "cycle", it),
            "identity": _check_finite(idt.item(), "identity", it),
            "total_g": _check_finite(total.item(), "total_g", it),
        }
        grads = backward(tape, total)
        gen_params = state.gen_named()
        gmap = {name: grads[t] for name, t in gen_params.items() if t in grads}
        adam_step(gen_params, gmap, state.adam_g)
    finally:
        state.disc_y.set_trainable(True)
        state.disc_x.set_trainable(True)
    return report, fake_y.data, fake_x.data


def discriminator_substep(state, xt, yt, fake_y, fake_x, cfg):
    """Update both discriminators against pooled, detached fakes."""
    mode = cfg.weights.gan_mode
    it = state.iteration
    fy_pooled = state.pool_y.query(fake_y)
    fx_pooled = state.pool_x.query(fake_x)
    with Tape() as tape:
        d_y = adversarial_d(discriminator_forward(state.disc_y, yt),
                            discriminator_forward(state.disc_y, Tensor(fy_pooled)), mode)
        d_x = adversarial_d(discriminator_forward(state.disc_x, xt),
                            discriminator_forward(state.disc_x, Tensor(fx_pooled)), mode)
        d_total = d_y + d_x
    report = {
        "d_y": _check_finite(d_y.item(), "d_y", it),
        "d_x": _check_finite(d_x.item(), "d_x", it),
    }
    grads = backward(tape, d_total)
    disc_params = state.disc_named()
    dmap = {name: grads[t] for name, t in disc_params.items() if t in grads}
    adam_step(disc_params, dmap, state.adam_d)
    return report


def train_iteration(state, x, y, cfg):
    """One full cycle on a single (x, y) pair; returns the loss report."""
    xt, yt = Tensor(np.asarray(x)), Tensor(np.asarray(y))
    report, fake_y, fake_x = generator_substep(state, xt, yt, cfg)
    report.update(discriminator_substep(state, xt, yt, fake_y, fake_x, cfg))
    state.iteration += 1
    return report


HISTORY_COLUMNS = ("iteration", "adv_g_xy", "adv_g_yx", "cycle", "identity",
                   "total_g", "d_y", "d_x")


def write_history_csv(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(repr(row[c]) if c != "iteration" else str(row[c])
                              for c in HISTORY_COLUMNS) + "\n")


def train_loop(cfg, images_x, images_y, out_dir=None, resume=None):
    """Train over two image lists; returns (final Checkpoint, history).

    With ``out_dir`` set, writes periodic checkpoints, a final
    checkpoint and the loss history CSV there. ``resume`` continues
    from a Checkpoint and reproduces the uninterrupted run exactly.
    """
    cfg.validate()
    if len(images_x) == 0:
        raise ValueError("domain X dataset is empty")
    if len(images_y) == 0:
        raise ValueError("domain Y dataset is empty")
    state = state_from_checkpoint(resume, cfg) if resume is not None else init_train_state(cfg)
    if state.iteration >= cfg.iterations:
        raise ValueError(f"checkpoint is already at iteration {state.iteration} >= {cfg.iterations}")
    pairs = paired_indices(cfg.seed, len(images_x), len(images_y), start=state.iteration)
    history = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for it in range(state.iteration, cfg.iterations):
        lr = lr_at(cfg, it)
        state.adam_g.lr = lr
        state.adam_d.lr = lr
        ix, iy = next(pairs)
        history.append(train_iteration(state, images_x[ix], images_y[iy], cfg))
        done = it + 1
        if (out_dir and cfg.checkpoint_interval > 0
                and done % cfg.checkpoint_interval == 0 and done < cfg.iterations):
            save_checkpoint(checkpoint_from_state(state, cfg),
                            os.path.join(out_dir, f"ckpt_{done:06d}.sdag"))
    ck = checkpoint_from_state(state, cfg)
    if out_dir:
        save_checkpoint(ck, os.path.join(out_dir, "ckpt_final.sdag"))
        write_history_csv(history, os.path.join(out_dir, "history.csv"))
    return ck, history


# ---------------------------------------------------------------------------
# checkpointing


@dataclass
class Checkpoint:
    version: int
    meta: dict
    gen_xy: object
    gen_yx: object
    disc_y: object
    disc_x: object
    adam_g: AdamState
    adam_d: AdamState
    iteration: int
    pool_x_images: list
    pool_y_images: list
    pool_x_rng: int
    pool_y_rng: int


def checkpoint_from_state(state, cfg):
    meta = {
        "n": cfg.n,
        "config": list(GenConfig).index(cfg.gen_config),
        "base_width": cfg.base_width,
        "disc_width": cfg.disc_width,
        "image_size": cfg.image_size,
        "learn_lambdas": int(cfg.learn_lambdas),
        "pool_size": cfg.pool_size,
    }
    return Checkpoint(VERSION, meta, state.gen_xy, state.gen_yx, state.disc_y,
                      state.disc_x, state.adam_g, state.adam_d, state.iteration,
                      list(state.pool_x.images), list(state.pool_y.images),
                      state.pool_x.rng.state, state.pool_y.rng.state)


def state_from_checkpoint(ck, cfg):
    for key, want in (("n", cfg.n), ("config", list(GenConfig).index(cfg.gen_config)),
                      ("base_width", cfg.base_width), ("disc_width", cfg.disc_width),
                      ("image_size", cfg.image_size), ("learn_lambdas", int(cfg.learn_lambdas)),
                      ("pool_size", cfg.pool_size)):
        if ck.meta[key] != want:
            raise ValueError(f"checkpoint meta '{key}'={ck.meta[key]} does not match config value {want}")
    pool_x = ImagePool(cfg.pool_size, 0)
    pool_x.images = list(ck.pool_x_images)
    pool_x.rng.state = ck.pool_x_rng
    pool_y = ImagePool(cfg.pool_size, 0)
    pool_y.images = list(ck.pool_y_images)
    pool_y.rng.state = ck.pool_y_rng
    for adam, hyper in ((ck.adam_g, cfg), (ck.adam_d, cfg)):
        adam.lr, adam.beta1, adam.beta2, adam.eps = hyper.lr, hyper.beta1, hyper.beta2, hyper.adam_eps
    return TrainState(ck.gen_xy, ck.gen_yx, ck.disc_y, ck.disc_x,
                      ck.adam_g, ck.adam_d, pool_y, pool_x, ck.iteration)


def _named_entries(ck):
    entries = {}
    for key, value in ck.meta.items():
        entries[f"meta.{key}"] = np.asarray(float(value), dtype=np.float32)
    for prefix, bundle in (("gen_xy", ck.gen_xy), ("gen_yx", ck.gen_yx),
                           ("disc_y", ck.disc_y), ("disc_x", ck.disc_x)):
        for name, t in bundle.named_tensors().items():
            entries[f"{prefix}.{name}"] = t.data
    for prefix, adam in (("adam_g", ck.adam_g), ("adam_d", ck.adam_d)):
        for name, arr in adam.m.items():
            entries[f"{prefix}.m.{name}"] = arr
        for name, arr in adam.v.items():
            entries[f"{prefix}.v.{name}"] = arr
    for prefix, images in (("pool_x", ck.pool_x_images), ("pool_y", ck.pool_y_images)):
        for i, img in enumerate(images):
            entries[f"{prefix}.{i:04d}"] = img
    return entries


def save_checkpoint(ck, path):
    """Serialize to the bit-exact wire format described in the module docs."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", ck.version)
    entries = _named_entries(ck)
    buf += struct.pack("<I", len(entries))
    for name, arr in entries.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<I", arr.ndim)
        if arr.ndim:
            buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    tail = [ck.iteration, ck.adam_g.step, ck.adam_d.step, ck.pool_x_rng, ck.pool_y_rng]
    buf += struct.pack("<I", len(tail))
    buf += struct.pack(f"<{len(tail)}Q", *tail)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64s(self, count, what):
        return struct.unpack(f"<{count}Q", self.take(8 * count, what))


def load_checkpoint(path):
    """Parse and rebuild a Checkpoint; no partial state on failure."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointMagicError(f"bad magic in {path}: expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    count = r.u32("entry count")
    entries = {}
    for _ in range(count):
        nlen = r.u32("name length")
        name = r.take(nlen, "name").decode("utf-8", errors="replace")
        rank = r.u32("rank")
        dims = r.u64s(rank, f"dims of {name}") if rank else ()
        size = 1
        for d in dims:  # python ints: a corrupt dim cannot overflow
            size *= d
        raw = r.take(4 * size, f"data of {name}")
        entries[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    tail_count = r.u32("tail count")
    tail = r.u64s(tail_count, "tail")
    if tail_count != 5:
        raise CheckpointError(f"expected 5 tail words, got {tail_count}")
    stored_crc = r.u32("crc")
    if r.pos != len(buf):
        raise CheckpointCrcError(f"{len(buf) - r.pos} trailing bytes after checksum")
    if zlib.crc32(buf[:-4]) != stored_crc:
        raise CheckpointCrcError("checksum mismatch, file is corrupt")
    return _build_checkpoint(version, entries, tail)


def _pop_meta(entries, key):
    name = f"meta.{key}"
    if name not in entries:
        raise CheckpointError(f"missing checkpoint entry '{name}'")
    return int(entries.pop(name))


def _build_checkpoint(version, entries, tail):
    n = _pop_meta(entries, "n")
    config = list(GenConfig)[_pop_meta(entries, "config")]
    base_width = _pop_meta(entries, "base_width")
    disc_width = _pop_meta(entries, "disc_width")
    image_size = _pop_meta(entries, "image_size")
    learn_lambdas = bool(_pop_meta(entries, "learn_lambdas"))
    pool_size = _pop_meta(entries, "pool_size")
    meta = {"n": n, "config": list(GenConfig).index(config), "base_width": base_width,
            "disc_width": disc_width, "image_size": image_size,
            "learn_lambdas": int(learn_lambdas), "pool_size": pool_size}

    gen_xy = init_generator(0, n, config, base_width, learn_lambdas)
    gen_yx = init_generator(0, n, config, base_width, learn_lambdas)
    disc_y = init_discriminator(0, disc_width)
    disc_x = init_discriminator(0, disc_width)
    named = {}
    for prefix, bundle in (("gen_xy", gen_xy), ("gen_yx", gen_yx),
                           ("disc_y", disc_y), ("disc_x", disc_x)):
        for name, t in bundle.named_tensors().items():
            named[f"{prefix}.{name}"] = t
    for full, t in named.items():
        if full not in entries:
            raise CheckpointError(f"missing checkpoint entry '{full}'")
        arr = entries.pop(full)
        if arr.shape != t.data.shape:
            raise CheckpointError(f"entry '{full}' has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr

    gen_names = ([f"gen_xy.{k}" for k in gen_xy.named_tensors()]
                 + [f"gen_yx.{k}" for k in gen_yx.named_tensors()])
    disc_names = ([f"disc_y.{k}" for k in disc_y.named_tensors()]
                  + [f"disc_x.{k}" for k in disc_x.named_tensors()])
    adam_g = AdamState({k: named[k].data.shape for k in gen_names})
    adam_d = AdamState({k: named[k].data.shape for k in disc_names})
    for prefix, adam, names in (("adam_g", adam_g, gen_names), ("adam_d", adam_d, disc_names)):
        for kind, store in (("m", adam.m), ("v", adam.v)):
            for name in names:
                full = f"{prefix}.{kind}.{name}"
                if full not in entries:
                    raise CheckpointError(f"missing checkpoint entry '{full}'")
                store[name] = entries.pop(full)

    pools = {"pool_x": [], "pool_y": []}
    for full in sorted(entries):
        prefix = full.split(".")[0]
        if prefix not in pools:
            raise CheckpointError(f"unexpected checkpoint entry '{full}'")
        pools[prefix].append(entries[full])

    iteration, g_step, d_step, pool_x_rng, pool_y_rng = tail
    adam_g.step = g_step
    adam_d.step = d_step
    return Checkpoint(version, meta, gen_xy, gen_yx, disc_y, disc_x, adam_g,
                      adam_d, iteration, pools["pool_x"], pools["pool_y"],
                      pool_x_rng, pool_y_rng)
