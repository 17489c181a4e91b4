"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .validation import check_image

__all__ = ["PPMError", "read_ppm", "write_ppm", "encode_ppm", "decode_ppm", "bundled_image"]

_WHITESPACE = b" \t\r\n\x0b\x0c"


class PPMError(ValueError):
    pass


def _read_token(data, pos):
    """Next header token and the offset just past it (comments skipped)."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMError(f"unexpected end of header at byte {pos}")
    return data[start:pos], pos


def decode_ppm(data):
    data = bytes(data)
    if data[:2] != b"P6":
        if data[:2] in (b"P1", b"P2", b"P3", b"P4", b"P5"):
            raise PPMError(f"unsupported PNM format {data[:2].decode()} at byte 0; only binary P6 is supported")
        raise PPMError("not a PPM file: missing P6 magic at byte 0")
    pos = 2
    values = []
    for what in ("width", "height", "maxval"):
        start = pos
        token, pos = _read_token(data, pos)
        try:
            values.append(int(token))
        except ValueError:
            raise PPMError(f"bad {what} {token!r} at byte {start}") from None
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PPMError(f"bad image size {width}x{height} at byte {pos}")
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval} at byte {pos}; only 255 is supported")
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise PPMError(f"missing whitespace after header at byte {pos}")
    pos += 1
    need = width * height * 3
    pixels = data[pos:pos + need]
    if len(pixels) != need:
        raise PPMError(f"short pixel data: expected {need} bytes at byte {pos}, found {len(pixels)}")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / 255.0


def to_uint8(img):
    img = check_image(img)
    scaled = img * 255.0
    # round half away from zero; values are nonnegative
    return np.floor(scaled + 0.5).astype(np.uint8)


def encode_ppm(img):
    q = to_uint8(img)
    h, w = q.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def read_ppm(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read image {path}: {exc.strerror}") from exc
    try:
        return decode_ppm(data)
    except PPMError as exc:
        raise PPMError(f"{path}: {exc}") from None


def write_ppm(img, path):
    payload = encode_ppm(img)
    with open(path, "wb") as fh:
        fh.write(payload)


def bundled_image(name="acceptance"):
    """Load a bundled test image: ``acceptance`` (256x256) or ``small`` (64x64)."""
    ref = resources.files("factorized_fields") / "data" / f"{name}.ppm"
    return decode_ppm(ref.read_bytes())
