"""Command-line entry point: ``fatlic <command> ...``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 usage error, 3 I/O error,
4 malformed stream or checkpoint, 5 stream/checkpoint model mismatch.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis, metrics
from .bitstream import Bitstream, FormatError
from .checkpoint import CheckpointError
from .imageio import ImageIOError, list_images, load_corpus, read_image, write_image
from .model import MSE_LAMBDAS, FatLic, ModelConfig, ModelMismatchError, bpp, compress, decompress, load_model
from .rangecoder import CodingError, DecodeError
from .tensor import ConfigurationError, ContractError, DimensionError

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5
STREAM_SUFFIX = ".fatc"


def _load(path) -> FatLic:
    try:
        model, _ = load_model(path)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        raise ImageIOError(f"cannot read checkpoint {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: {exc}") from exc
    return model


def cmd_encode(args) -> int:
    model = _load(args.model)
    image = read_image(args.input)
    stream = compress(model, image)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(STREAM_SUFFIX)
    try:
        out.write_bytes(stream.to_bytes())
    except OSError as exc:
        raise ImageIOError(f"cannot write {out}: {exc}") from exc
    print(f"{out}: {stream.height}x{stream.width}, {stream.payload_bytes} payload bytes, "
          f"{bpp(stream):.4f} bpp")
    return EXIT_OK


def cmd_decode(args) -> int:
    model = _load(args.model)
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read {args.input}: {exc}") from exc
    image = decompress(model, Bitstream.from_bytes(data))
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".png")
    write_image(out, image)
    print(f"{out}: {image.shape[1]}x{image.shape[2]}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import MS_SSIM_LAMBDAS, RdConfig, model_for_stage, train

    lmbda = (MSE_LAMBDAS if args.metric == "mse" else MS_SSIM_LAMBDAS)[args.lambda_index]
    overrides = {k: v for k, v in (("steps", args.steps), ("batch", args.batch), ("crop", args.crop),
                                   ("lr", args.lr)) if v is not None}
    cfg = RdConfig.for_stage(args.stage, lmbda=lmbda, metric=args.metric, seed=args.seed, **overrides)
    base = ModelConfig.toy() if args.toy else ModelConfig()
    base = ModelConfig(base.transform, base.tca, base.entropy, cfg.lambda_index)
    model = model_for_stage(base, args.stage, args.init, seed=args.seed)
    images = load_corpus(args.corpus)

    def report(step, row, elapsed):
        if step % max(1, cfg.steps // 20) == 0 or step == cfg.steps:
            print(f"step {step}/{cfg.steps} bpp {row[1]:.4f} D {row[2]:.4f} loss {row[3]:.4f} "
                  f"({elapsed:.0f}s)", flush=True)

    log = Path(args.out).with_suffix(".csv") if args.log is None else Path(args.log)
    train(model, images, cfg, log_path=log, callback=report)
    model.save(args.out, {"stage": args.stage, "lambda": lmbda, "metric": args.metric,
                          "steps": cfg.steps})
    print(f"saved {args.out} (log {log})")
    return EXIT_OK


def evaluate(images, names, codec) -> list:
    """Rows of per-image metrics; ``codec(image) -> (reconstruction, payload_bytes)``."""
    if not images:
        raise ConfigurationError("evaluation needs at least one image")
    rows = []
    for name, img in zip(names, images):
        rec, nbytes = codec(img)
        _, H, W = img.shape
        quality = metrics.ms_ssim(img, rec) if min(H, W) > 160 else float("nan")
        rows.append({"image": name, "bpp": metrics.bpp(nbytes, H, W),
                     "psnr": metrics.psnr(img, rec), "ms_ssim": quality})
    return rows


def _mean_row(rows) -> dict:
    mean = {"image": "mean"}
    for key in ("bpp", "psnr", "ms_ssim"):
        values = np.array([r[key] for r in rows], dtype=np.float64)
        values = values[~np.isnan(values)]
        mean[key] = float(values.mean()) if len(values) else float("nan")
    return mean


def cmd_eval(args) -> int:
    paths = list_images(args.dataset)
    if not paths:
        raise ImageIOError(f"no PNG/PPM images in {args.dataset}")
    images = [read_image(p) for p in paths]
    curve = []
    out_rows = []
    for ckpt in args.model:
        model = _load(ckpt)

        def codec(img, model=model):
            stream = compress(model, img)
            return decompress(model, Bitstream.from_bytes(stream.to_bytes())), stream.payload_bytes

        rows = evaluate(images, [p.name for p in paths], codec)
        mean = _mean_row(rows)
        curve.append((mean["bpp"], mean["psnr"]))
        for r in rows + [mean]:
            out_rows.append({"model": Path(ckpt).name, **r})
            print(f"{Path(ckpt).name} {r['image']}: bpp {r['bpp']:.4f} PSNR {r['psnr']:.3f} dB "
                  f"MS-SSIM {r['ms_ssim']:.5f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["model", "image", "bpp", "psnr", "ms_ssim"])
            w.writeheader()
            w.writerows(out_rows)
    if args.anchor:
        anchor = read_curve(args.anchor)
        print(f"BD-rate vs {args.anchor}: {metrics.bd_rate(curve, anchor):+.3f}%")
    return EXIT_OK


def read_curve(path) -> list:
    """(bpp, psnr) points from a CSV with ``bpp`` and ``psnr`` columns."""
    try:
        with open(path, newline="") as fh:
            return [(float(r["bpp"]), float(r["psnr"])) for r in csv.DictReader(fh)]
    except OSError as exc:
        raise ImageIOError(f"cannot read curve {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: expected bpp and psnr columns ({exc})") from exc


def cmd_analyze_spectrum(args) -> int:
    model = _load(args.model)
    images = load_corpus(args.corpus)
    rng = np.random.default_rng(args.seed)
    size = args.patch_size
    pool = [im for im in images if min(im.shape[1:]) >= size]
    if not pool:
        raise ConfigurationError(f"no corpus image is at least {size}px on each side")
    patches = []
    for k in range(args.patches):
        img = pool[k % len(pool)]
        i = rng.integers(img.shape[1] - size + 1)
        j = rng.integers(img.shape[2] - size + 1)
        patches.append(img[:, i:i + size, j:j + size])
    spectra = analysis.capture_spectra(model, np.stack(patches))
    analysis.write_spectra(spectra, args.out)
    for row in analysis.spectrum_summary(spectra):
        print(f"{row['transform']} {row['group']}: central fraction {row['central_fraction']:.4f}, "
              f"axis ratio {row['axis_ratio']:.4f}")
    return EXIT_OK


def cmd_visualize_filters(args) -> int:
    model = _load(args.model)
    for path in analysis.write_filters(model, args.out):
        grid = analysis.read_grid(path)
        print(f"{path}: {grid.shape[0]} channels, outer-ring mean |W| "
              f"{analysis.outer_ring_mean(grid):.5f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fatlic", description="Frequency-aware transformer image codec")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="compress an image to a .fatc stream")
    e.add_argument("input")
    e.add_argument("--model", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct an image from a .fatc stream")
    d.add_argument("input")
    d.add_argument("--model", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_decode)

    t = sub.add_parser("train", help="train one stage on a directory of PNG images")
    t.add_argument("corpus")
    t.add_argument("--out", required=True, help="checkpoint to write")
    t.add_argument("--stage", type=int, default=1, choices=(1, 2, 3))
    t.add_argument("--init", help="checkpoint of the previous stage")
    t.add_argument("--lambda-index", type=int, default=3, choices=range(6))
    t.add_argument("--metric", default="mse", choices=("mse", "ms-ssim"))
    t.add_argument("--toy", action="store_true", help="use the reduced toy architecture")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--crop", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--log", help="CSV training log (default: next to the checkpoint)")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="bpp / PSNR / MS-SSIM report over a dataset")
    v.add_argument("dataset")
    v.add_argument("--model", required=True, action="append", help="repeat for an R-D curve")
    v.add_argument("--anchor", help="CSV of anchor (bpp, psnr) points for BD-rate")
    v.add_argument("--out", help="CSV report path")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze-spectrum", help="FDWA group output spectra as CSV grids")
    s.add_argument("corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--patches", type=int, default=20)
    s.add_argument("--patch-size", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_analyze_spectrum)

    f = sub.add_parser("visualize-filters", help="FMFFN filter magnitudes as CSV grids")
    f.add_argument("--model", required=True)
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=cmd_visualize_filters)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (FormatError, DecodeError, CheckpointError, CodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ImageIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
