"""Input validation helpers shared by the estimators and the codec."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

__all__ = ["check_image", "check_same_shape", "check_coords", "NotFittedError", "check_is_fitted"]

def check_image(img, name="image", channels=3, copy=False):
    """Return ``img`` as an ``(H, W, channels)`` float64 array in ``[0, 1]``.

    2D input is only accepted when ``channels`` is None.
    """
    arr = np.array(img, dtype=np.float64, copy=copy) if copy else np.asarray(img, dtype=np.float64)
    if channels is None:
        if arr.ndim not in (2, 3):
            raise ValueError(f"{name} must be 2D or 3D, got shape {arr.shape}")
    elif arr.ndim != 3 or arr.shape[-1] != channels:
        raise ValueError(f"{name} must have shape (H, W, {channels}), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def check_coords(X):
    """``(n, 2)`` array of ``(u, v)`` points in ``[0, 1]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"coordinates must have shape (n, 2), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("coordinates must be finite")
    if X.min(initial=0.0) < 0.0 or X.max(initial=0.0) > 1.0:
        raise ValueError("coordinates must lie in [0, 1]")
    return X


def check_is_fitted(estimator, attribute="field_"):
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )
