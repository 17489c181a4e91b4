"""Dense multi-channel 2D fields with bilinear sampling and its adjoint.

Coordinates are normalized to ``[0, 1]`` and mapped with the align-corners
convention, ``u -> u * (W - 1)``.  Positions outside the lattice clamp to the
border; wrapping is the caller's job (see :mod:`factorized_fields.transform`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FieldGrid",
    "InvalidCoordinateError",
    "sample_bilinear",
    "sample_bilinear_adjoint",
    "sample_points",
    "sample_points_adjoint",
    "interpolation_matrix",
    "sample_lattice",
    "sample_lattice_adjoint",
]

# lattice-snap tolerance, in units of pixel positions
_SNAP = 1e-9


class InvalidCoordinateError(ValueError):
    pass


@dataclass
class FieldGrid:
    """A ``channels x height x width`` array of finite reals."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"FieldGrid data must be 3D (C, H, W), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"FieldGrid dimensions must be positive, got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("FieldGrid data contains non-finite values")
        self.data = data

    @classmethod
    def zeros(cls, channels, height, width, dtype=np.float64):
        return cls(np.zeros((channels, height, width), dtype=dtype))

    @classmethod
    def zeros_like(cls, grid):
        return cls(np.zeros_like(grid.data, dtype=np.float64))

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def copy(self):
        return FieldGrid(self.data.copy())


def _axis_weights(coord, size):
    """Lower index, upper index and upper weight along one axis."""
    pos = np.clip(np.asarray(coord, dtype=np.float64) * (size - 1), 0.0, size - 1)
    nearest = np.rint(pos)
    pos = np.where(np.abs(pos - nearest) <= _SNAP, nearest, pos)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, size - 1)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, pos - lo


def _check_coords(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise InvalidCoordinateError("sampling coordinates must be finite")
    return u, v


def sample_points(grid, u, v):
    """Sample ``grid`` at arrays of normalized coordinates.

    Returns an array of shape ``(channels, n)``.
    """
    u, v = _check_coords(u, v)
    u, v = np.broadcast_arrays(u.ravel(), v.ravel())
    x0, x1, wx = _axis_weights(u, grid.width)
    y0, y1, wy = _axis_weights(v, grid.height)
    d = np.asarray(grid.data, dtype=np.float64)
    top = d[:, y0, x0] * (1.0 - wx) + d[:, y0, x1] * wx
    bottom = d[:, y1, x0] * (1.0 - wx) + d[:, y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def sample_points_adjoint(grid_grad, u, v, upstream):
    """Scatter ``upstream`` (``channels x n``) into ``grid_grad`` in place."""
    u, v = _check_coords(u, v)
    u, v = np.broadcast_arrays(u.ravel(), v.ravel())
    upstream = np.asarray(upstream, dtype=np.float64).reshape(grid_grad.channels, -1)
    if upstream.shape[1] != u.size:
        raise ValueError("upstream must have one column per sample point")
    x0, x1, wx = _axis_weights(u, grid_grad.width)
    y0, y1, wy = _axis_weights(v, grid_grad.height)
    acc = grid_grad.data
    for ys, xs, w in (
        (y0, x0, (1.0 - wy) * (1.0 - wx)),
        (y0, x1, (1.0 - wy) * wx),
        (y1, x0, wy * (1.0 - wx)),
        (y1, x1, wy * wx),
    ):
        for c in range(acc.shape[0]):
            np.add.at(acc[c], (ys, xs), upstream[c] * w)


def sample_bilinear(grid, u, v):
    """Bilinearly sample one point; returns a vector of length ``channels``."""
    if not (np.isfinite(u) and np.isfinite(v)):
        raise InvalidCoordinateError(f"non-finite coordinate ({u}, {v})")
    return sample_points(grid, [u], [v])[:, 0]


def sample_bilinear_adjoint(grid_grad, u, v, upstream):
    """Accumulate ``upstream * w_p`` into the (at most four) touched cells."""
    if not (np.isfinite(u) and np.isfinite(v)):
        raise InvalidCoordinateError(f"non-finite coordinate ({u}, {v})")
    upstream = np.asarray(upstream, dtype=np.float64).ravel()
    if upstream.size != grid_grad.channels:
        raise ValueError(
            f"upstream has {upstream.size} entries, accumulator has {grid_grad.channels} channels"
        )
    sample_points_adjoint(grid_grad, [u], [v], upstream[:, None])


def interpolation_matrix(coords, size):
    """Dense ``(len(coords), size)`` matrix of 1D linear interpolation weights.

    Bilinear sampling on a full lattice factorizes into one such matrix per
    axis: ``out[c] = Ry @ grid[c] @ Rx.T``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise InvalidCoordinateError("sampling coordinates must be finite")
    lo, hi, w = _axis_weights(coords, size)
    rows = np.arange(coords.size)
    mat = np.zeros((coords.size, size))
    np.add.at(mat, (rows, lo), 1.0 - w)
    np.add.at(mat, (rows, hi), w)
    return mat


def sample_lattice(data, ry, rx):
    """Sample a ``(C, H, W)`` array on the tensor-product lattice ``ry x rx``."""
    return ry @ (data @ rx.T)


def sample_lattice_adjoint(upstream, ry, rx):
    """Adjoint of :func:`sample_lattice`: maps ``(C, h, w)`` back to grid shape."""
    return ry.T @ (upstream @ rx)
