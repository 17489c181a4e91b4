"""Quantization, entropy coding and the ``.ffc`` bitstream."""

from .bitstream import (
    Bitstream,
    BitstreamError,
    UnsupportedVersionError,
    decode_stream,
    dequantize_field,
    encode_fields,
)
from .entropy import EntropyDecodeError, empirical_entropy_bits, entropy_decode, entropy_encode
from .pipeline import (
    DEFAULT_LAMBDAS,
    Candidate,
    RDPoint,
    compress,
    compress_multi,
    decompress,
    decompress_all,
    fit_shared_basis,
    rd_candidates,
    render_decoded,
    select_candidate,
)
from .quantize import QuantSpec, dequantize, quantize, step_grid

__all__ = [
    "Bitstream",
    "BitstreamError",
    "UnsupportedVersionError",
    "decode_stream",
    "dequantize_field",
    "encode_fields",
    "EntropyDecodeError",
    "empirical_entropy_bits",
    "entropy_decode",
    "entropy_encode",
    "DEFAULT_LAMBDAS",
    "Candidate",
    "RDPoint",
    "compress",
    "compress_multi",
    "decompress",
    "decompress_all",
    "fit_shared_basis",
    "rd_candidates",
    "render_decoded",
    "select_candidate",
    "QuantSpec",
    "dequantize",
    "quantize",
    "step_grid",
]
