"""The ``.ffc`` container.

Layout (little-endian)::

    b"FFC1"  u16 version
    u32 len  model config (JSON)
    u32 len  quant table (JSON: group -> step)
    u32 height, u32 width, u16 image count M
    tensors: shared bases (levels), then per image coeff / weight / bias;
             each as  u32 symbol count, u32 blob length, entropy blob
    u32 CRC32 of everything before it
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..model import ModelConfig, config_from_bytes, config_to_bytes, field_from_tensors, tensor_shapes
from .entropy import EntropyDecodeError, entropy_decode, entropy_encode
from .quantize import QuantSpec, dequantize, quantize

__all__ = [
    "MAGIC",
    "VERSION",
    "BitstreamError",
    "UnsupportedVersionError",
    "Bitstream",
    "encode_fields",
    "decode_stream",
    "dequantize_field",
    "tensor_order",
]

MAGIC = b"FFC1"
VERSION = 1


class BitstreamError(ValueError):
    pass


class UnsupportedVersionError(BitstreamError):
    pass


@dataclass
class Bitstream:
    data: bytes
    height: int
    width: int
    n_images: int
    tensor_bits: dict

    @property
    def total_bits(self):
        return 8 * len(self.data)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.data)


def tensor_order(config, n_images):
    """``(image index or None, tensor name)`` in stream order."""
    shapes = tensor_shapes(config)
    order = [(None, n) for n in shapes if n.startswith("basis_")]
    for m in range(n_images):
        order += [(m, n) for n in shapes if not n.startswith("basis_")]
    return order


def _quantized_tensor(field, name, quant):
    return quantize(field.parameters()[name], quant.step_for(name))


def dequantize_field(field, quant):
    """The field the decoder reconstructs: quantized, then stored as float32."""
    tensors = {
        name: dequantize(quantize(arr, quant.step_for(name)), quant.step_for(name)).astype(np.float32)
        for name, arr in field.parameters().items()
    }
    return field_from_tensors(field.config, tensors)


def _block(payload):
    return struct.pack("<I", len(payload)) + payload


def encode_fields(fields, quant, height, width):
    """Serialize fields that share one basis set (``fields[m].bases``)."""
    config = fields[0].config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(_block(config_to_bytes(config)))
    buf.write(_block(json.dumps(quant.steps, sort_keys=True).encode("utf-8")))
    buf.write(struct.pack("<IIH", height, width, len(fields)))
    tensor_bits = {}
    for m, name in tensor_order(config, len(fields)):
        source = fields[0] if m is None else fields[m]
        idx = _quantized_tensor(source, name, quant)
        blob = entropy_encode(idx)
        buf.write(struct.pack("<II", idx.size, len(blob)))
        buf.write(blob)
        key = name if m is None else f"{m}/{name}"
        tensor_bits[key] = 8 * (8 + len(blob))
    body = buf.getvalue()
    data = body + struct.pack("<I", zlib.crc32(body))
    return Bitstream(data, height, width, len(fields), tensor_bits)


def _take(stream, n, what):
    chunk = stream.read(n)
    if len(chunk) != n:
        raise BitstreamError(f"truncated stream while reading {what}")
    return chunk


def decode_stream(data):
    """Parse and verify a stream; returns ``(fields, quant, height, width)``.

    Decoded fields hold float32 tensors equal to :func:`dequantize_field`.
    """
    data = bytes(data)
    if len(data) < len(MAGIC) + 2 + 4:
        raise BitstreamError("stream too short")
    if data[:4] != MAGIC:
        raise BitstreamError("bad magic; not an FFC1 stream")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported stream version {version} (expected {VERSION})")
    body, trailer = data[:-4], data[-4:]
    if zlib.crc32(body) != struct.unpack("<I", trailer)[0]:
        raise BitstreamError("CRC mismatch; stream is corrupted or truncated")
    stream = io.BytesIO(body)
    stream.seek(6)
    (n,) = struct.unpack("<I", _take(stream, 4, "config length"))
    config = config_from_bytes(_take(stream, n, "config"))
    (n,) = struct.unpack("<I", _take(stream, 4, "quant table length"))
    try:
        quant = QuantSpec(json.loads(_take(stream, n, "quant table").decode("utf-8")))
    except (ValueError, UnicodeDecodeError) as exc:
        raise BitstreamError(f"bad quant table: {exc}") from exc
    height, width, n_images = struct.unpack("<IIH", _take(stream, 10, "image header"))
    if n_images < 1:
        raise BitstreamError("stream holds no images")
    shapes = tensor_shapes(config)
    shared = {}
    per_image = [{} for _ in range(n_images)]
    for m, name in tensor_order(config, n_images):
        count, length = struct.unpack("<II", _take(stream, 8, f"{name} header"))
        shape = shapes[name]
        if count != int(np.prod(shape)):
            raise BitstreamError(f"tensor {name} has {count} symbols, expected shape {shape}")
        try:
            idx = entropy_decode(_take(stream, length, name), count)
        except EntropyDecodeError as exc:
            raise BitstreamError(f"tensor {name}: {exc}") from exc
        step = quant.step_for(name)
        values = dequantize(idx, step).astype(np.float32).reshape(shape)
        (shared if m is None else per_image[m])[name] = values
    if stream.read(1):
        raise BitstreamError("trailing bytes before checksum")
    fields = []
    for tensors in per_image:
        tensors = {**tensors, **shared}
        fields.append(field_from_tensors(config, tensors))
    for f in fields[1:]:
        f.bases = fields[0].bases
    return fields, quant, height, width
