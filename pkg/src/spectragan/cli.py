"""Command-line entry point: train / translate / spectrum / evaluate / gradcheck.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric
divergence, 4 verification failure.

The train command accepts a flat ``key = value`` config file
(# comments allowed); explicit flags win over the file, the file wins
over defaults, and unknown keys are errors.
"""

import argparse
import os
import sys

import numpy as np

from . import data, metrics
from .gradcheck import run_suite
from .losses import LossWeights
from .networks import GenConfig, generator_forward
from .spectral import _fft2_core
from .tensor import Tensor
from .trainer import (CheckpointError, TrainConfig, TrainingDivergedError,
                      load_checkpoint, train_loop)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _truthy(s):
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got '{s}'")


# train keys accepted both as --flags and in the config file
TRAIN_SCHEMA = {
    "data": (str, None, "dataset root containing trainA/ and trainB/"),
    "out": (str, None, "output directory for checkpoints and the loss CSV"),
    "seed": (int, 0, "deterministic seed"),
    "iters": (int, 200, "training iterations (>= 1)"),
    "size": (int, 64, "square image size, power of two"),
    "n": (int, 4, "attention channel count (n-1 foreground layers)"),
    "arch": (str, "b", "spectrum construction: a-direct | a-phase | b"),
    "gan": (str, "ce", "adversarial mode: ce | ls"),
    "lr": (float, 2e-4, "Adam learning rate"),
    "width": (int, 16, "generator base channel width"),
    "disc_width": (int, 16, "discriminator base channel width"),
    "pool": (int, 50, "generated-image pool size"),
    "ckpt_interval": (int, 0, "iterations between checkpoints (0: final only)"),
    "w_cycle": (float, 10.0, "cycle-consistency weight"),
    "w_identity": (float, 5.0, "identity weight"),
    "decay_start": (int, -1, "iteration to start linear lr decay (-1: half)"),
    "resume": (str, None, "checkpoint file to resume from"),
}

_GAN_MODES = {"ce": "cross_entropy", "ls": "least_squares"}


def build_parser():
    p = _Parser(prog="spectragan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="command")

    tr = sub.add_parser("train", parents=[], help="train both translation directions",
                        description="Train the cycle pair; all keys below may also "
                                    "appear in the --config file as 'key = value'.")
    tr.add_argument("--config", default=None, help="flat key=value config file")
    for key, (typ, default, help_text) in TRAIN_SCHEMA.items():
        flag = "--" + key.replace("_", "-")
        tr.add_argument(flag, dest=key, type=typ, default=None,
                        help=f"{help_text} (default: {default})")

    tl = sub.add_parser("translate", help="run a trained generator over a directory")
    tl.add_argument("--ckpt", required=True, help="checkpoint file")
    tl.add_argument("--in", dest="indir", required=True, help="directory of .ppm inputs")
    tl.add_argument("--out", required=True, help="output directory")
    tl.add_argument("--direction", choices=("ab", "ba"), default="ab",
                    help="ab: domain A to B, ba: the reverse (default: ab)")
    tl.add_argument("--dump-attention", action="store_true",
                    help="also write each attention map as a grayscale image "
                         "plus a CSV of per-map scale factors")

    sp = sub.add_parser("spectrum", help="log-magnitude spectra and radial profiles")
    sp.add_argument("--in", dest="indir", required=True, help="directory of .ppm inputs")
    sp.add_argument("--out", default=None, help="profile CSV path (default: <in>/spectrum.csv)")

    ev = sub.add_parser("evaluate", help="FID and Inception Score (handcrafted backend)")
    ev.add_argument("--real", required=True, help="directory of real images")
    ev.add_argument("--fake", required=True, help="directory of generated images")
    ev.add_argument("--out", default=None, help="optional CSV report path")

    gc = sub.add_parser("gradcheck", help="run the gradient verification suite")
    gc.add_argument("--seed", type=int, default=0, help="seed for the random probes")
    return p


def parse_config_file(path, schema):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in schema:
                raise UsageError(f"{path}:{lineno}: unknown config key '{key}'")
            typ = schema[key][0]
            try:
                values[key] = typ(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value '{value}' for '{key}'") from None
    return values


def _effective_train_options(args):
    opts = {key: default for key, (_, default, _) in TRAIN_SCHEMA.items()}
    if args.config:
        opts.update(parse_config_file(args.config, TRAIN_SCHEMA))
    for key in TRAIN_SCHEMA:
        flag_value = getattr(args, key)
        if flag_value is not None:
            opts[key] = flag_value
    for required in ("data", "out"):
        if not opts[required]:
            raise UsageError(f"train: missing required option --{required}")
    if opts["arch"] not in [c.value for c in GenConfig]:
        raise UsageError(f"train: unknown arch '{opts['arch']}'")
    if opts["gan"] not in _GAN_MODES:
        raise UsageError(f"train: unknown gan mode '{opts['gan']}'")
    return opts


def cmd_train(args):
    opts = _effective_train_options(args)
    cfg = TrainConfig(
        seed=opts["seed"], iterations=opts["iters"], image_size=opts["size"],
        n=opts["n"], gen_config=GenConfig.from_string(opts["arch"]),
        weights=LossWeights(opts["w_cycle"], opts["w_identity"], _GAN_MODES[opts["gan"]]),
        base_width=opts["width"], disc_width=opts["disc_width"], lr=opts["lr"],
        lr_decay_start=opts["decay_start"], pool_size=opts["pool"],
        checkpoint_interval=opts["ckpt_interval"])
    images_x = data.load_domain(os.path.join(opts["data"], "trainA"), cfg.image_size)
    images_y = data.load_domain(os.path.join(opts["data"], "trainB"), cfg.image_size)
    resume = load_checkpoint(opts["resume"]) if opts["resume"] else None
    _, history = train_loop(cfg, images_x, images_y, out_dir=opts["out"], resume=resume)
    last = history[-1]
    print(f"trained {len(history)} iterations; final cycle loss {last['cycle']:.4f}, "
          f"checkpoints and history.csv in {opts['out']}")
    return 0


def _scale_to_bytes(arr):
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo < 1e-12:
        return np.zeros(arr.shape, dtype=np.uint8), lo, hi
    return np.floor((arr - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8), lo, hi


def _gray_record(byte_grid):
    return data.ImageRecord(byte_grid.shape[1], byte_grid.shape[0],
                            np.repeat(byte_grid[:, :, None], 3, axis=2))


def cmd_translate(args):
    ck = load_checkpoint(args.ckpt)
    gen = ck.gen_xy if args.direction == "ab" else ck.gen_yx
    size = ck.meta["image_size"]
    paths = data.list_images(args.indir)
    if not paths:
        raise ValueError(f"no decodable images in {args.indir}")
    os.makedirs(args.out, exist_ok=True)
    scale_rows = []
    for path in paths:
        rec = data.resize_bilinear(data.load_ppm_file(path), size)
        out = generator_forward(gen, data.normalize(rec))
        base = os.path.splitext(os.path.basename(path))[0]
        data.save_ppm_file(data.denormalize(out.image), os.path.join(args.out, base + ".ppm"))
        if args.dump_attention:
            for family, maps in (("att_a", out.spatial_attention), ("att_s", out.spectral_attention)):
                for i in range(maps.shape[0]):
                    grid, lo, hi = _scale_to_bytes(maps.data[i])
                    name = f"{base}.{family}{i}.ppm"
                    data.save_ppm_file(_gray_record(grid), os.path.join(args.out, name))
                    scale_rows.append((name, lo, hi))
    if args.dump_attention:
        with open(os.path.join(args.out, "attention_scales.csv"), "w", encoding="utf-8") as fh:
            fh.write("file,min,max\n")
            for name, lo, hi in scale_rows:
                fh.write(f"{name},{lo!r},{hi!r}\n")
    print(f"translated {len(paths)} images ({args.direction}) into {args.out}")
    return 0


def cmd_spectrum(args):
    from .spectral import spectral_profile

    paths = data.list_images(args.indir)
    if not paths:
        raise ValueError(f"no decodable images in {args.indir}")
    csv_path = args.out or os.path.join(args.indir, "spectrum.csv")
    out_dir = os.path.dirname(csv_path) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("file,key,value\n")
        for path in paths:
            rec = data.load_ppm_file(path)
            arr = data.normalize(rec).data.astype(np.float64)
            luma = np.tensordot(np.array([0.299, 0.587, 0.114]), arr, axes=([0], [0]))
            hist, ratio = spectral_profile(luma)
            base = os.path.splitext(os.path.basename(path))[0]
            mag = np.abs(_fft2_core(luma.astype(np.complex128), -1))
            centered = np.roll(np.log1p(mag), (luma.shape[0] // 2, luma.shape[1] // 2), axis=(0, 1))
            grid, _, _ = _scale_to_bytes(centered)
            data.save_ppm_file(_gray_record(grid), os.path.join(out_dir, base + "_spectrum.ppm"))
            fh.write(f"{base},high_freq_ratio,{ratio!r}\n")
            for r, e in enumerate(hist):
                fh.write(f"{base},radial_energy_{r},{e!r}\n")
    print(f"wrote spectra for {len(paths)} images; profile CSV at {csv_path}")
    return 0


def cmd_evaluate(args):
    real = [data.normalize(data.load_ppm_file(p)).data for p in data.list_images(args.real)]
    fake = [data.normalize(data.load_ppm_file(p)).data for p in data.list_images(args.fake)]
    if len(real) < 2 or len(fake) < 2:
        raise ValueError("evaluate needs at least 2 images per directory")
    stats_real = metrics.compute_stats([metrics.feature_extract(i) for i in real])
    stats_fake = metrics.compute_stats([metrics.feature_extract(i) for i in fake])
    fid_value = metrics.fid(stats_real, stats_fake)
    is_value = metrics.inception_score(np.stack([metrics.classify_probs(i) for i in fake]))
    print(f"backend: {metrics.BACKEND_NAME} (values not comparable to "
          f"pretrained-embedding scores)")
    print(f"real: {len(real)} images from {args.real}")
    print(f"fake: {len(fake)} images from {args.fake}")
    print(f"FID: {fid_value:.6f}")
    print(f"IS (fake): {is_value:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            fh.write(f"backend,{metrics.BACKEND_NAME}\n")
            fh.write(f"fid,{fid_value!r}\n")
            fh.write(f"inception_score,{is_value!r}\n")
    return 0


def cmd_gradcheck(args):
    results = run_suite(seed=args.seed)
    all_ok = True
    for name, err, tol, ok in results:
        all_ok &= ok
        print(f"{name:<26s} max rel. err {err:.3e}  (tol {tol:.0e})  {'PASS' if ok else 'FAIL'}")
    print("gradient suite:", "PASS" if all_ok else "FAIL")
    return 0 if all_ok else 4


_COMMANDS = {
    "train": cmd_train,
    "translate": cmd_translate,
    "spectrum": cmd_spectrum,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def run(argv):
    """Dispatch a command line; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing command (try --help)")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, data.PpmParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
