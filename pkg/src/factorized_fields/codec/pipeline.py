"""Fit, quantize, entropy-code, and pick a rate-distortion point.

The selected quantization minimizes ``bits + lam * D`` with
``D = 255**2 * MSE * H * W`` summed over images, i.e. squared error on the
8-bit scale, over a fixed geometric grid of step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..analysis import psnr
from ..model import forward
from ..optim import FitConfig, fit, fit_joint
from ..validation import check_image
from .bitstream import decode_stream, dequantize_field, encode_fields
from .quantize import QuantSpec, step_grid

__all__ = [
    "RDPoint",
    "Candidate",
    "render_decoded",
    "rd_candidates",
    "select_candidate",
    "compress",
    "decompress",
    "decompress_all",
    "fit_shared_basis",
    "compress_multi",
    "DEFAULT_LAMBDAS",
]

DEFAULT_LAMBDAS = (0.0025, 0.0067, 0.025)
PEAK = 255.0


@dataclass
class RDPoint:
    bpp: float
    psnr: float
    lam: float
    steps: dict
    bits: float = 0.0
    mse: float = 0.0

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError("bpp must be positive")


@dataclass
class Candidate:
    """One entry of the step-size grid, encoded and measured."""

    quant: QuantSpec
    stream: object
    mses: list
    psnrs: list
    extra: dict = field(default_factory=dict)

    @property
    def bits(self):
        return self.stream.total_bits

    def distortion(self):
        h, w = self.stream.height, self.stream.width
        return PEAK**2 * float(np.sum(self.mses)) * h * w

    def cost(self, lam):
        return self.bits + lam * self.distortion()


def render_decoded(field, height, width):
    """Decoder-side reconstruction (float32 evaluation)."""
    return forward(field.astype(np.float32), height, width).astype(np.float64)


def rd_candidates(fields, images, steps=None):
    """Encode ``fields`` (sharing bases) at every step of the grid."""
    images = [check_image(img) for img in images]
    h, w = images[0].shape[:2]
    levels = fields[0].config.levels
    out = []
    for step in steps or step_grid():
        quant = QuantSpec.uniform(step, levels)
        stream = encode_fields(fields, quant, h, w)
        mses, psnrs = [], []
        for f, img in zip(fields, images):
            deq = dequantize_field(f, quant)
            deq.bases = dequantize_field(fields[0], quant).bases
            recon = render_decoded(deq, h, w)
            mses.append(float(np.mean((recon - img) ** 2)))
            psnrs.append(psnr(recon, img))
        out.append(Candidate(quant, stream, mses, psnrs))
    return out


def select_candidate(candidates, lam):
    """Argmin of ``bits + lam * D``; ties go to the earlier (finer) step."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    costs = [c.cost(lam) for c in candidates]
    return candidates[int(np.argmin(costs))]


def _points(candidate, lam):
    s = candidate.stream
    pixels = s.height * s.width
    own = [
        sum(bits for key, bits in s.tensor_bits.items() if key.startswith(f"{m}/"))
        for m in range(s.n_images)
    ]
    shared = (s.total_bits - sum(own)) / s.n_images
    return [
        RDPoint((bits + shared) / pixels, p, lam, dict(candidate.quant.steps), bits + shared, mse)
        for bits, mse, p in zip(own, candidate.mses, candidate.psnrs)
    ]


def compress(image, model_config, fit_config=None, lam=DEFAULT_LAMBDAS[0], steps=None):
    """Fit, then emit the bitstream minimizing rate + lambda * distortion.

    Returns ``(Bitstream, RDPoint)``; ``bpp`` is total stream bits over pixels.
    """
    image = check_image(image)
    fit_config = fit_config or FitConfig()
    field_, _ = fit(image, model_config, fit_config)
    chosen = select_candidate(rd_candidates([field_], [image], steps), lam)
    return chosen.stream, _points(chosen, lam)[0]


def decompress_all(data):
    fields, _, h, w = decode_stream(data)
    shared = fields[0].bases
    images = []
    for f in fields:
        f.bases = shared
        images.append(render_decoded(f, h, w))
    return images


def decompress(data):
    """Decode a single-image stream; multi-image streams return the first image."""
    if hasattr(data, "data"):
        data = data.data
    return decompress_all(data)[0]


def fit_shared_basis(images, model_config, fit_config=None):
    """Jointly fit one basis set and per-image coefficients and projections.

    Returns ``(bases, fields, report)``; every field in ``fields`` references
    the same ``bases`` list.
    """
    fit_config = fit_config or FitConfig()
    fields, report = fit_joint(images, model_config, fit_config, share_bases=True)
    return fields[0].bases, fields, report


def compress_multi(images, model_config, fit_config=None, lam=DEFAULT_LAMBDAS[0], steps=None):
    """Shared-basis compression of M images into one stream.

    Returns ``(Bitstream, [RDPoint per image])``.  Each image is charged its
    own coefficient/projection bits plus ``1/M`` of the shared bits.
    """
    images = [check_image(img) for img in images]
    _, fields, _ = fit_shared_basis(images, model_config, fit_config)
    chosen = select_candidate(rd_candidates(fields, images, steps), lam)
    return chosen.stream, _points(chosen, lam)
