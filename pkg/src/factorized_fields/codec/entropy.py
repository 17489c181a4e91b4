"""Static-model arithmetic coding of integer symbol arrays.

The coder is a 32-bit binary arithmetic coder driven by an explicit symbol
frequency table (exact counts).  The table travels with the payload, so a
blob is self-describing apart from the symbol count.

Blob layout (little-endian)::

    i32   smallest symbol value
    u8    table mode: 0 dense, 1 sparse, 2 dense gamma, 3 sparse gamma
    u32   table entries S (0 for an empty array)
    dense:  S x count, for values lo, lo+1, ..., lo+S-1
    sparse: S x (gap, count); gap is the distance to the previous
            present value minus one (the first entry is lo)
    u32   CRC32 of the coded bits

Table numbers are LEB128 varints in modes 0 and 1.  Modes 2 and 3 store
``n + 1`` in Elias-gamma code, MSB first, padded to a byte boundary; that
is cheaper for the long tails of small counts that skewed sources produce.
The encoder writes whichever of the four tables is shortest.
    ...   coded bits, MSB first
"""

from __future__ import annotations

import struct
import zlib

import numpy as np
from numba import njit

__all__ = [
    "EntropyDecodeError",
    "entropy_encode",
    "entropy_decode",
    "empirical_entropy_bits",
]

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1
MAX_TOTAL = _QUARTER


class EntropyDecodeError(ValueError):
    pass


@njit(cache=True)
def _encode_kernel(symbols, cumul, out):
    low = np.int64(0)
    high = np.int64(_MASK)
    total = cumul[-1]
    pending = 0
    nbits = 0
    for k in range(symbols.size):
        s = symbols[k]
        rng = high - low + 1
        new_low = low + cumul[s] * rng // total
        high = low + cumul[s + 1] * rng // total - 1
        low = new_low
        while ((low ^ high) & _HALF) == 0:
            bit = low >> (_STATE_BITS - 1)
            if bit:
                out[nbits >> 3] |= np.uint8(0x80 >> (nbits & 7))
            nbits += 1
            for _ in range(pending):
                if not bit:
                    out[nbits >> 3] |= np.uint8(0x80 >> (nbits & 7))
                nbits += 1
            pending = 0
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while (low & ~high & _QUARTER) != 0:
            pending += 1
            low = (low << 1) & (_MASK >> 1)
            high = ((high << 1) & (_MASK >> 1)) | _HALF | 1
    # terminate: a single 1 bit (plus pending complements) pins the interval
    out[nbits >> 3] |= np.uint8(0x80 >> (nbits & 7))
    nbits += 1
    nbits += pending
    return nbits


@njit(cache=True)
def _read_bit(data, pos):
    if pos >= data.size * 8:
        return 0
    return (data[pos >> 3] >> (7 - (pos & 7))) & 1


@njit(cache=True)
def _decode_kernel(data, cumul, count, out):
    low = np.int64(0)
    high = np.int64(_MASK)
    total = cumul[-1]
    nsym = cumul.size - 1
    code = np.int64(0)
    pos = 0
    for _ in range(_STATE_BITS):
        code = (code << 1) | _read_bit(data, pos)
        pos += 1
    for k in range(count):
        rng = high - low + 1
        offset = code - low
        value = ((offset + 1) * total - 1) // rng
        if value < 0 or value >= total:
            return -1
        lo = 0
        hi = nsym
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cumul[mid] > value:
                hi = mid
            else:
                lo = mid
        s = lo
        out[k] = s
        new_low = low + cumul[s] * rng // total
        high = low + cumul[s + 1] * rng // total - 1
        low = new_low
        while ((low ^ high) & _HALF) == 0:
            code = ((code << 1) & _MASK) | _read_bit(data, pos)
            pos += 1
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while (low & ~high & _QUARTER) != 0:
            code = (code & _HALF) | ((code << 1) & (_MASK >> 1)) | _read_bit(data, pos)
            pos += 1
            low = (low << 1) & (_MASK >> 1)
            high = ((high << 1) & (_MASK >> 1)) | _HALF | 1
    return pos


def _varint(n):
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(data, pos):
    shift = 0
    value = 0
    while True:
        if pos >= len(data):
            raise EntropyDecodeError("truncated frequency table")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise EntropyDecodeError("malformed varint in frequency table")


def empirical_entropy_bits(indices):
    """``sum_s -count_s * log2(count_s / n)``: the static-model lower bound."""
    indices = np.asarray(indices).ravel()
    if indices.size == 0:
        return 0.0
    _, counts = np.unique(indices, return_counts=True)
    p = counts / indices.size
    return float(-(counts * np.log2(p)).sum())


def _gamma_bits(numbers):
    """Elias-gamma code of ``n + 1`` for each ``n``, as a padded byte string."""
    parts = []
    for n in numbers:
        b = bin(int(n) + 1)[2:]
        parts.append("0" * (len(b) - 1) + b)
    bits = "".join(parts)
    bits += "0" * (-len(bits) % 8)
    return int(bits, 2).to_bytes(len(bits) // 8, "big") if bits else b""


def _read_gamma(data, pos, n_numbers):
    """Decode ``n_numbers`` gamma values starting at byte ``pos``."""
    out = []
    bit = pos * 8
    total = len(data) * 8

    def read(i):
        return (data[i >> 3] >> (7 - (i & 7))) & 1

    for _ in range(n_numbers):
        zeros = 0
        while True:
            if bit >= total:
                raise EntropyDecodeError("truncated frequency table")
            if read(bit):
                break
            zeros += 1
            bit += 1
            if zeros > 40:
                raise EntropyDecodeError("malformed gamma code in frequency table")
        if bit + zeros >= total:
            raise EntropyDecodeError("truncated frequency table")
        value = 0
        for i in range(zeros + 1):
            value = (value << 1) | read(bit + i)
        bit += zeros + 1
        out.append(value - 1)
    return out, (bit + 7) // 8


def _dense_counts(values, counts):
    dense = np.zeros(int(values[-1]) - int(values[0]) + 1, dtype=np.int64)
    dense[values - values[0]] = counts
    return dense


def _sparse_numbers(values, counts):
    gaps = np.diff(values, prepend=values[0] + 1) - 1
    gaps[0] = 0
    return np.column_stack([gaps, counts]).ravel()


def _table(values, counts):
    """``(mode, entries, bytes)`` of the shortest table encoding."""
    sparse = _sparse_numbers(values, counts)
    options = [
        (1, values.size, b"".join(_varint(int(n)) for n in sparse)),
        (3, values.size, _gamma_bits(sparse)),
    ]
    span = int(values[-1]) - int(values[0]) + 1
    # a dense entry costs at least one bit, so skip hopeless dense tables
    if span <= 8 * min(len(t) for _, _, t in options):
        dense = _dense_counts(values, counts)
        options.append((0, dense.size, b"".join(_varint(int(c)) for c in dense)))
        options.append((2, dense.size, _gamma_bits(dense)))
    return min(options, key=lambda o: (len(o[2]), o[0]))


def entropy_encode(indices):
    """Encode an integer array into a self-describing blob."""
    indices = np.asarray(indices)
    if indices.size and not np.issubdtype(indices.dtype, np.integer):
        raise TypeError("entropy_encode expects integer indices")
    flat = indices.astype(np.int64).ravel()
    if flat.size and (flat.min() < -(2**31) or flat.max() >= 2**31):
        raise ValueError("indices must fit in int32")
    if flat.size >= MAX_TOTAL:
        raise ValueError(f"at most {MAX_TOTAL - 1} symbols per blob")
    if flat.size == 0:
        return struct.pack("<iBI", 0, 0, 0) + struct.pack("<I", zlib.crc32(b""))
    values, symbols, counts = np.unique(flat, return_inverse=True, return_counts=True)
    mode, size, table = _table(values, counts)
    if mode in (0, 2):
        # dense ids include absent values, which get zero-width intervals
        symbols = flat - values[0]
        counts = np.bincount(symbols)
    cumul = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=cumul[1:])
    out = np.zeros((flat.size * _STATE_BITS + 64) // 8 + 8, dtype=np.uint8)
    nbits = _encode_kernel(symbols.astype(np.int64), cumul, out)
    payload = out[: (nbits + 7) // 8].tobytes()
    header = struct.pack("<iBI", int(values[0]), mode, size) + table
    return header + struct.pack("<I", zlib.crc32(payload)) + payload


def entropy_decode(blob, count):
    """Inverse of :func:`entropy_encode`; ``count`` is the number of symbols."""
    blob = bytes(blob)
    if len(blob) < 9:
        raise EntropyDecodeError("truncated entropy blob header")
    lo, mode, size = struct.unpack_from("<iBI", blob, 0)
    if mode not in (0, 1, 2, 3):
        raise EntropyDecodeError(f"unknown frequency table mode {mode}")
    sparse = mode in (1, 3)
    n_numbers = size * (2 if sparse else 1)
    if n_numbers > 8 * len(blob):
        raise EntropyDecodeError("frequency table larger than the blob")
    pos = 9
    if mode in (0, 1):
        numbers = []
        for _ in range(n_numbers):
            n, pos = _read_varint(blob, pos)
            numbers.append(n)
    else:
        numbers, pos = _read_gamma(blob, pos, n_numbers)
    values = []
    if sparse:
        gaps, counts = numbers[0::2], numbers[1::2]
        value = lo - 1
        for gap in gaps:
            value += gap + 1
            values.append(value)
    else:
        counts = numbers
    if len(blob) < pos + 4:
        raise EntropyDecodeError("truncated entropy blob checksum")
    (crc,) = struct.unpack_from("<I", blob, pos)
    payload = blob[pos + 4:]
    if zlib.crc32(payload) != crc:
        raise EntropyDecodeError("entropy payload checksum mismatch")
    if sum(counts) != count:
        raise EntropyDecodeError(f"frequency table sums to {sum(counts)}, expected {count} symbols")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if sparse and values[-1] >= 2**31:
        raise EntropyDecodeError("sparse table runs past the int32 range")
    cumul = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.array(counts, dtype=np.int64), out=cumul[1:])
    out = np.empty(count, dtype=np.int64)
    used = _decode_kernel(np.frombuffer(payload, dtype=np.uint8), cumul, count, out)
    if used < 0 or used > len(payload) * 8 + _STATE_BITS:
        raise EntropyDecodeError("arithmetic decoding failed")
    if not np.array_equal(np.bincount(out, minlength=size), cumul[1:] - cumul[:-1]):
        raise EntropyDecodeError("decoded symbols disagree with the frequency table")
    if not sparse:
        return out + lo
    return np.array(values, dtype=np.int64)[out]
