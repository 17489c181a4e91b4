"""scikit-learn style wrapper around the fitting loop.

A fitted field is a regressor from normalized ``(u, v)`` coordinates to RGB,
so :meth:`FactorizedFieldRegressor.predict` takes an ``(n, 2)`` coordinate
array.  :meth:`fit` takes the target image itself.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .analysis import psnr
from .model import ModelConfig, evaluate_points, forward
from .optim import FitConfig, fit
from .validation import check_coords, check_image, check_is_fitted

__all__ = ["FactorizedFieldRegressor"]


class FactorizedFieldRegressor(BaseEstimator):
    """Fit a factorized field to one image.

    Parameters left as None (``tiles_per_level``, ``basis_resolutions``,
    ``coeff_resolution``) are derived from the image size at fit time: level
    ``i`` gets an ``(H / 2**i, W / 2**i)`` basis tiled ``2**i`` times and the
    coefficient grid is a quarter of the image size.

    Attributes
    ----------
    field_ : FactorizedField
    report_ : FitReport
    model_config_ : ModelConfig
    image_shape_ : tuple
    """

    def __init__(
        self,
        variant="full",
        levels=6,
        basis_channels=24,
        alphas=(1.0, 4.0, 16.0, 64.0),
        psi_set=("sin", "cos"),
        tiles_per_level=None,
        basis_resolutions=None,
        coeff_resolution=None,
        tie_coefficients=False,
        iterations=256,
        loss="l1",
        learning_rate=1e-2,
        dtype="float32",
        random_state=0,
    ):
        self.variant = variant
        self.levels = levels
        self.basis_channels = basis_channels
        self.alphas = alphas
        self.psi_set = psi_set
        self.tiles_per_level = tiles_per_level
        self.basis_resolutions = basis_resolutions
        self.coeff_resolution = coeff_resolution
        self.tie_coefficients = tie_coefficients
        self.iterations = iterations
        self.loss = loss
        self.learning_rate = learning_rate
        self.dtype = dtype
        self.random_state = random_state

    def _model_config(self, height, width):
        overrides = {
            k: v
            for k, v in (
                ("tiles_per_level", self.tiles_per_level),
                ("basis_resolutions", self.basis_resolutions),
                ("coeff_resolution", self.coeff_resolution),
            )
            if v is not None
        }
        return ModelConfig.for_image(
            height,
            width,
            levels=self.levels,
            variant=self.variant,
            basis_channels=self.basis_channels,
            alphas=self.alphas,
            psi_set=self.psi_set,
            tie_coefficients=self.tie_coefficients,
            seed=self.random_state,
            **overrides,
        )

    def _fit_config(self):
        return FitConfig(
            iterations=self.iterations,
            loss=self.loss,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            dtype=self.dtype,
        )

    def fit(self, X, y=None, callback=None):
        """Fit to the ``(H, W, 3)`` image ``X`` (values in ``[0, 1]``)."""
        X = check_image(X, name="X")
        self.image_shape_ = X.shape
        self.model_config_ = self._model_config(*X.shape[:2])
        self.field_, self.report_ = fit(X, self.model_config_, self._fit_config(), callback=callback)
        return self

    def predict(self, X):
        """RGB in ``[0, 1]`` at ``(u, v)`` points; returns ``(n, 3)``."""
        check_is_fitted(self)
        X = check_coords(X)
        return np.clip(evaluate_points(self.field_, X[:, 0], X[:, 1]), 0.0, 1.0)

    def render(self, height=None, width=None, scale=None):
        """Evaluate on a pixel lattice; ``scale`` multiplies the fitted size."""
        check_is_fitted(self)
        h, w = self.image_shape_[:2]
        if scale is not None:
            height, width = int(round(h * scale)), int(round(w * scale))
        return forward(self.field_, height or h, width or w).astype(np.float64)

    def score(self, X, y=None):
        """PSNR of the reconstruction against ``X``."""
        X = check_image(X, name="X")
        return psnr(self.render(*X.shape[:2]), X)
