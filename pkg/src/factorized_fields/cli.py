"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
Image arguments accept a PPM path or ``@acceptance`` / ``@small`` for the
bundled test images.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import analysis
from .config import CODEC_MODEL, ConfigError, load_job
from .imageio import PPMError, bundled_image, read_ppm, write_ppm
from .model import VARIANTS, FieldFormatError, forward, init_field, load_field, save_field, ModelConfig

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


def _load_image(source):
    if source.startswith("@"):
        try:
            return bundled_image(source[1:])
        except FileNotFoundError:
            raise UsageError(f"no bundled image named {source[1:]!r}") from None
    if not os.path.exists(source):
        raise UsageError(f"input image not found: {source}")
    try:
        return read_ppm(source)
    except (PPMError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None


def _check_writable(path):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")


def _job(args):
    try:
        return load_job(args.config).with_seed(args.seed)
    except ConfigError as exc:
        raise UsageError(f"config error: {exc}") from None


def _codec_model_config(job, height, width):
    """Codec commands fall back to the compact codec preset when no model is given."""
    if job.model:
        return job.model_config(height, width)
    return job.model_config(height, width, **CODEC_MODEL)


def _limit_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(x):
    return repr(float(x))


# -- commands -------------------------------------------------------------------

def cmd_fit(args):
    job = _job(args)
    image = _load_image(args.input)
    _check_writable(args.out)
    _check_writable(args.report)
    from .optim import fit

    cfg = job.model_config(*image.shape[:2])
    field_, report = fit(image, cfg, job.fit)
    if args.out:
        save_field(field_, args.out)
    if args.report:
        report.to_csv(args.report)
    print(f"psnr={report.final_psnr:.4f} ssim={report.final_ssim:.4f} time={report.wall_time:.2f}s")
    return EXIT_OK


def cmd_compare(args):
    job = _job(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise UsageError(f"unknown variant(s): {', '.join(bad) or '(none)'}; choose from {', '.join(VARIANTS)}")
    image = _load_image(args.input)
    _check_writable(args.out)
    from .optim import fit

    n_bands = job.analysis.n_bands
    rows = []
    for v in variants:
        cfg = job.model_config(*image.shape[:2], variant=v)
        field_, report = fit(image, cfg, job.fit)
        recon = forward(field_, *image.shape[:2]).astype(np.float64)
        bands = analysis.band_mae(recon, image, n_bands)
        rows.append([v, _fmt(report.final_psnr), _fmt(report.final_ssim), *map(_fmt, bands.mae)])
        print(f"{v}: psnr={report.final_psnr:.3f} ssim={report.final_ssim:.4f} high-band MAE={bands.high_half():.4f}")
    header = ["variant", "psnr", "ssim", *(f"band_{i}" for i in range(n_bands))]
    if args.out:
        _write_csv(args.out, header, rows)
    return EXIT_OK


def cmd_compress(args):
    job = _job(args)
    image = _load_image(args.input)
    _check_writable(args.out)
    from .codec import compress

    lam = job.codec.lam if args.lam is None else args.lam
    if lam < 0:
        raise UsageError("lambda must be nonnegative")
    cfg = _codec_model_config(job, *image.shape[:2])
    stream, point = compress(image, cfg, job.fit, lam, job.codec.steps())
    if args.out:
        stream.save(args.out)
    print(f"bpp={point.bpp:.6f} psnr={point.psnr!r} bits={stream.total_bits}")
    return EXIT_OK


def cmd_decompress(args):
    from .codec import BitstreamError, decompress_all

    if not os.path.exists(args.input):
        raise UsageError(f"stream not found: {args.input}")
    reference = _load_image(args.reference) if args.reference else None
    _check_writable(args.out)
    with open(args.input, "rb") as fh:
        data = fh.read()
    try:
        images = decompress_all(data)
    except (BitstreamError, FieldFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    if args.out:
        if len(images) == 1:
            write_ppm(images[0], args.out)
        else:
            stem, ext = os.path.splitext(args.out)
            for m, img in enumerate(images):
                write_ppm(img, f"{stem}_{m}{ext or '.ppm'}")
    if reference is not None:
        print(f"psnr={analysis.psnr(images[0], reference)!r}")
    return EXIT_OK


def cmd_rdcurve(args):
    job = _job(args)
    image = _load_image(args.input)
    _check_writable(args.out)
    from .codec import rd_candidates, select_candidate
    from .codec.pipeline import _points
    from .optim import fit

    try:
        lambdas = job.codec.lambdas if args.lambdas is None else tuple(float(x) for x in args.lambdas.split(","))
    except ValueError:
        raise UsageError(f"bad --lambdas value: {args.lambdas}") from None
    if any(lam < 0 for lam in lambdas):
        raise UsageError("lambda values must be nonnegative")
    cfg = _codec_model_config(job, *image.shape[:2])
    field_, _ = fit(image, cfg, job.fit)
    candidates = rd_candidates([field_], [image], job.codec.steps())
    rows = []
    for lam in lambdas:
        point = _points(select_candidate(candidates, lam), lam)[0]
        rows.append([_fmt(lam), _fmt(point.bpp), _fmt(point.psnr)])
        print(f"lambda={lam} bpp={point.bpp:.6f} psnr={point.psnr:.4f}")
    if args.out:
        _write_csv(args.out, ["lambda", "bpp", "psnr"], rows)
    return EXIT_OK


def _load_reconstruction(source, height, width):
    if source.endswith(".ffld"):
        try:
            return forward(load_field(source), height, width).astype(np.float64)
        except (OSError, FieldFormatError) as exc:
            raise UsageError(str(exc)) from None
    if source.endswith(".ffc"):
        from .codec import BitstreamError, decompress

        try:
            with open(source, "rb") as fh:
                return decompress(fh.read())
        except (OSError, BitstreamError) as exc:
            raise UsageError(str(exc)) from None
    return _load_image(source)


def cmd_analyze(args):
    job = _job(args)
    target = _load_image(args.target)
    recon = _load_reconstruction(args.input, *target.shape[:2])
    if recon.shape != target.shape:
        raise UsageError(f"reconstruction {recon.shape} and target {target.shape} differ in size")
    _check_writable(args.out)
    table = analysis.band_mae(recon, target, job.analysis.n_bands)
    if args.out:
        table.to_csv(args.out)
    ssim = analysis.ssim(recon, target) if min(target.shape[:2]) >= 11 else float("nan")
    print(f"psnr={analysis.psnr(recon, target):.4f} ssim={ssim:.4f} high-band MAE={table.high_half():.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    job = _job(args)
    from .optim import gradcheck

    size = args.size
    if job.model:
        cfg = job.model_config(size, size)
    else:
        cfg = ModelConfig.for_image(size, size, levels=3, basis_channels=2, alphas=(1.0, 4.0))
    rng = np.random.default_rng(job.fit.seed)
    target = rng.random((size, size, 3))
    err = gradcheck(init_field(cfg, job.fit.seed), target, samples=args.samples, seed=job.fit.seed)
    ok = err <= GRADCHECK_TOLERANCE
    print(f"max_rel_error={err:.3e} tolerance={GRADCHECK_TOLERANCE:.0e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


# -- parser -------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON job config (model / fit / codec / analysis sections)")
    common.add_argument("--seed", type=int, default=None, help="override model and fit seeds")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread limit; 1 gives bitwise reproducibility")
    common.add_argument("--out", help="output path")

    parser = argparse.ArgumentParser(prog="ffields", description="Factorized-field image fitting and compression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a field to an image (L1 loss by default)")
    p.add_argument("input")
    p.add_argument("--report", help="per-iteration CSV (iteration, loss, psnr)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", parents=[common], help="fit several variants with a shared seed")
    p.add_argument("input")
    p.add_argument("--variants", default="full,factor_fields,no_alpha,no_psi")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("compress", parents=[common], help="fit and encode to an .ffc stream")
    p.add_argument("input")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="decode an .ffc stream to PPM")
    p.add_argument("input")
    p.add_argument("--reference", help="image to report PSNR against")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("rdcurve", parents=[common], help="rate-distortion points over a lambda grid")
    p.add_argument("input")
    p.add_argument("--lambdas", help="comma-separated lambda values")
    p.set_defaults(func=cmd_rdcurve)

    p = sub.add_parser("analyze", parents=[common], help="PSNR, SSIM and per-band FFT magnitude MAE")
    p.add_argument("input", help="reconstruction: .ppm, .ffld or .ffc")
    p.add_argument("target")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser(
        "gradcheck", parents=[common], help="compare analytic and finite-difference gradients (L2 loss)"
    )
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        limiter = _limit_threads(args.threads)
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
