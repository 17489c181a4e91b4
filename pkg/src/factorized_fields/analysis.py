"""Image quality metrics and Fourier-domain error analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .validation import check_same_shape

__all__ = [
    "PSNR_CAP",
    "psnr",
    "mse",
    "ssim",
    "luma",
    "fft",
    "fft2",
    "fft2_magnitude",
    "BandErrorTable",
    "band_mae",
]

PSNR_CAP = 99.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def mse(a, b):
    a, b = check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """PSNR in dB with peak 1.0, capped at 99 dB."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / err)))


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img @ LUMA_WEIGHTS


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable correlation over valid positions only."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Single-scale SSIM on Rec.601 luma, averaged over valid window positions."""
    a, b = check_same_shape(a, b)
    ya, yb = luma(a), luma(b)
    if min(ya.shape) < window:
        raise ValueError(f"SSIM needs images of at least {window}x{window}, got {ya.shape}")
    c1, c2 = k1**2, k2**2
    g = _gaussian_window(window, sigma)
    mu_a = _filter_valid(ya, g)
    mu_b = _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a**2
    var_b = _filter_valid(yb * yb, g) - mu_b**2
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# -- FFT ---------------------------------------------------------------------

def _bit_reverse_permutation(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x, axis=-1):
    """Iterative radix-2 decimation-in-time FFT along ``axis``.

    The length along ``axis`` must be a power of two.
    """
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if n & (n - 1) or n == 0:
        raise ValueError(f"FFT length must be a power of two, got {n}")
    out = x[..., _bit_reverse_permutation(n)].copy()
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*out.shape[:-1], n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return np.moveaxis(out, -1, axis)


def _next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def fft2(img):
    """Row-column 2D FFT; zero-pads each axis to the next power of two."""
    img = np.asarray(img)
    h, w = img.shape
    ph, pw = _next_pow2(h), _next_pow2(w)
    if (ph, pw) != (h, w):
        padded = np.zeros((ph, pw), dtype=img.dtype)
        padded[:h, :w] = img
        img = padded
    return fft(fft(img, axis=1), axis=0)


def fft2_magnitude(img):
    """Magnitude of the 2D DFT of one channel (padded to powers of two)."""
    return np.abs(fft2(img))


# -- band errors ---------------------------------------------------------------

@dataclass
class BandErrorTable:
    edges: np.ndarray
    mae: np.ndarray
    padded_shape: tuple = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.mae = np.asarray(self.mae, dtype=np.float64)
        if self.edges.size != self.mae.size + 1:
            raise ValueError("need one more edge than bands")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("band edges must be strictly increasing")
        if np.any(self.mae < 0):
            raise ValueError("band MAE must be nonnegative")

    @property
    def n_bands(self):
        return self.mae.size

    def high_half(self):
        """Summed MAE over the upper half of the bands."""
        return float(self.mae[self.n_bands // 2:].sum())

    def rows(self):
        return [(float(lo), float(hi), float(m)) for lo, hi, m in zip(self.edges[:-1], self.edges[1:], self.mae)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["band_low", "band_high", "mae"])
            for row in self.rows():
                writer.writerow([repr(x) for x in row])


def radial_frequency(shape):
    fy = np.fft.fftfreq(shape[0])
    fx = np.fft.fftfreq(shape[1])
    return np.hypot(fy[:, None], fx[None, :])


def band_mae(recon, target, n_bands=8):
    """MAE of FFT magnitudes in equal-width radial frequency bands.

    Radial frequency is in cycles per pixel, so it spans ``[0, sqrt(2) / 2]``.
    Each band's value is averaged over the three colour channels.
    """
    recon, target = check_same_shape(recon, target)
    if n_bands < 1:
        raise ValueError("n_bands must be >= 1")
    if recon.ndim == 2:
        recon, target = recon[..., None], target[..., None]
    edges = np.linspace(0.0, 0.5 * np.sqrt(2.0), n_bands + 1)
    diffs = []
    for ch in range(recon.shape[-1]):
        diffs.append(np.abs(fft2_magnitude(recon[..., ch]) - fft2_magnitude(target[..., ch])))
    diff = np.mean(diffs, axis=0)
    radius = radial_frequency(diff.shape)
    band = np.clip(np.searchsorted(edges, radius, side="right") - 1, 0, n_bands - 1)
    counts = np.bincount(band.ravel(), minlength=n_bands)
    sums = np.bincount(band.ravel(), weights=diff.ravel(), minlength=n_bands)
    mae = np.divide(sums, counts, out=np.zeros(n_bands), where=counts > 0)
    return BandErrorTable(edges, mae, diff.shape)
