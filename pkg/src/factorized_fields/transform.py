"""Coordinate transforms and spatial rearrangements.

The sawtooth transform tiles a field ``T`` times across the unit interval,
``u -> frac(u * T)``.  :func:`sawtooth_downsample` stacks the contiguous
``s x s`` quadrant tiles of a grid as channels, so that sampling the result
with a sawtooth of ``s`` tiles visits the original layout.
:func:`pixel_unshuffle` is the usual stride-based space-to-depth, kept as the
contrast case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FieldGrid

__all__ = [
    "CoordTransform",
    "apply",
    "sawtooth_downsample",
    "sawtooth_upsample",
    "pixel_unshuffle",
    "pixel_shuffle",
]

_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class CoordTransform:
    kind: str = "sawtooth"
    tiles: int = 1

    def __post_init__(self):
        if self.kind not in ("identity", "sawtooth"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if int(self.tiles) != self.tiles or self.tiles < 1:
            raise ValueError(f"tiles must be a positive integer, got {self.tiles}")

    @property
    def period(self):
        return 1.0 / self.effective_tiles

    @property
    def effective_tiles(self):
        return 1 if self.kind == "identity" else int(self.tiles)

    def __call__(self, u):
        return apply(self, u)


def apply(t, u):
    """Map ``u`` in ``[0, 1]`` into ``[0, 1)``.

    ``u == 1`` maps to the largest double below one, i.e. the left limit.
    Works elementwise on arrays.
    """
    u = np.asarray(u, dtype=np.float64)
    tiles = t.effective_tiles
    if tiles == 1:
        out = np.where(u >= 1.0, _BELOW_ONE, u)
    else:
        scaled = u * tiles
        out = scaled - np.floor(scaled)
        out = np.where(u >= 1.0, _BELOW_ONE, out)
    return float(out) if out.ndim == 0 else out


def _as_array(g):
    return g.data if isinstance(g, FieldGrid) else np.asarray(g)


def _wrap(g, data):
    return FieldGrid(data) if isinstance(g, FieldGrid) else data


def _check_factor(s):
    if int(s) != s or s < 1:
        raise ValueError(f"factor must be a positive integer, got {s}")
    return int(s)


def sawtooth_downsample(g, s):
    """Quadrant tiles become channels.

    Output channel ``c * s*s + s1 * s + s2`` at ``(h, w)`` holds input channel
    ``c`` at ``(s1 * H' + h, s2 * W' + w)``.
    """
    s = _check_factor(s)
    x = _as_array(g)
    c, h, w = x.shape
    if h % s or w % s:
        raise ValueError(f"grid {h}x{w} is not divisible by {s}")
    hh, ww = h // s, w // s
    out = x.reshape(c, s, hh, s, ww).transpose(0, 1, 3, 2, 4).reshape(c * s * s, hh, ww)
    return _wrap(g, np.ascontiguousarray(out))


def sawtooth_upsample(g, s):
    """Exact inverse of :func:`sawtooth_downsample`."""
    s = _check_factor(s)
    x = _as_array(g)
    cs, hh, ww = x.shape
    if cs % (s * s):
        raise ValueError(f"{cs} channels is not divisible by {s * s}")
    c = cs // (s * s)
    out = x.reshape(c, s, s, hh, ww).transpose(0, 1, 3, 2, 4).reshape(c, s * hh, s * ww)
    return _wrap(g, np.ascontiguousarray(out))


def pixel_unshuffle(g, s):
    """Stride grouping: channel ``(c, dy, dx)`` holds input ``(s*h + dy, s*w + dx)``."""
    s = _check_factor(s)
    x = _as_array(g)
    c, h, w = x.shape
    if h % s or w % s:
        raise ValueError(f"grid {h}x{w} is not divisible by {s}")
    hh, ww = h // s, w // s
    out = x.reshape(c, hh, s, ww, s).transpose(0, 2, 4, 1, 3).reshape(c * s * s, hh, ww)
    return _wrap(g, np.ascontiguousarray(out))


def pixel_shuffle(g, s):
    s = _check_factor(s)
    x = _as_array(g)
    cs, hh, ww = x.shape
    if cs % (s * s):
        raise ValueError(f"{cs} channels is not divisible by {s * s}")
    c = cs // (s * s)
    out = x.reshape(c, s, s, hh, ww).transpose(0, 3, 1, 4, 2).reshape(c, hh * s, ww * s)
    return _wrap(g, np.ascontiguousarray(out))
