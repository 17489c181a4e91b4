"""JSON job configuration with strict key checking.

A job file has up to four sections, each optional::

    {
      "model":    {... ModelConfig fields ...},
      "fit":      {... FitConfig fields ...},
      "codec":    {"lam": 0.0025, "lambdas": [...], "n_steps": 12,
                   "step_min": 0.00390625, "step_max": 0.25},
      "analysis": {"n_bands": 8}
    }

Model fields that depend on the image size (``tiles_per_level``,
``basis_resolutions``, ``coeff_resolution``) default to the image-derived
layout of :meth:`ModelConfig.for_image`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .model import ModelConfig
from .optim import FitConfig

__all__ = ["ConfigError", "CodecOptions", "AnalysisOptions", "JobConfig", "load_job", "ABLATION_MODEL", "CODEC_MODEL"]

# 4 levels of 8-channel bases with one basis cell per pixel at every level
# (a 32x32 basis tiled 8x covers 256 pixels), 32x32 coefficients.
ABLATION_MODEL = {
    "levels": 4,
    "basis_channels": 8,
    "basis_resolutions": [[32, 32], [16, 16], [8, 8], [4, 4]],
    "tiles_per_level": [8, 16, 32, 64],
    "coeff_resolution": [32, 32],
}

# compact model for 128x128 codec experiments; tied coefficients keep
# the per-image payload small relative to the bases
CODEC_MODEL = {
    "levels": 2,
    "basis_channels": 4,
    "basis_resolutions": [[32, 32], [16, 16]],
    "tiles_per_level": [4, 8],
    "coeff_resolution": [16, 16],
    "tie_coefficients": True,
}


class ConfigError(ValueError):
    pass


def _reject_unknown(section, data, allowed):
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


@dataclass
class CodecOptions:
    lam: float = 0.0025
    lambdas: tuple = (0.0025, 0.0067, 0.025)
    n_steps: int = 12
    step_min: float = 1 / 256
    step_max: float = 1 / 4

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if self.lam < 0 or any(x < 0 for x in self.lambdas):
            raise ConfigError("lambda values must be nonnegative")
        if self.n_steps < 1 or not 0 < self.step_min <= self.step_max:
            raise ConfigError("need n_steps >= 1 and 0 < step_min <= step_max")

    def steps(self):
        from .codec.quantize import step_grid

        return step_grid(self.n_steps, self.step_min, self.step_max)


@dataclass
class AnalysisOptions:
    n_bands: int = 8

    def __post_init__(self):
        if int(self.n_bands) != self.n_bands or self.n_bands < 1:
            raise ConfigError("n_bands must be a positive integer")


@dataclass
class JobConfig:
    model: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)
    codec: CodecOptions = field(default_factory=CodecOptions)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("job config must be a JSON object")
        _reject_unknown("job config", data, ("model", "fit", "codec", "analysis"))
        sections = {}
        for name, kind in (("fit", FitConfig), ("codec", CodecOptions), ("analysis", AnalysisOptions)):
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"section {name!r} must be an object")
            _reject_unknown(name, raw, [f.name for f in fields(kind)])
            try:
                sections[name] = kind(**raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name} section: {exc}") from exc
        model = data.get("model", {})
        if not isinstance(model, dict):
            raise ConfigError("section 'model' must be an object")
        _reject_unknown("model", model, [f.name for f in fields(ModelConfig)])
        job = cls(model=dict(model), **sections)
        job.model_config(256, 256)  # type-check the model section up front
        return job

    def model_config(self, height, width, **overrides):
        params = {**self.model, **overrides}
        levels = params.pop("levels", 6)
        try:
            return ModelConfig.for_image(height, width, levels=levels, **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model section: {exc}") from exc

    def with_seed(self, seed):
        if seed is None:
            return self
        fit_cfg = FitConfig(**{**self.fit.to_dict(), "seed": seed})
        return JobConfig({**self.model, "seed": seed}, fit_cfg, self.codec, self.analysis)


def load_job(path=None):
    if path is None:
        return JobConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return JobConfig.from_dict(data)
