"""Uniform scalar quantization with half-away-from-zero rounding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["quantize", "dequantize", "QuantSpec", "step_grid", "tensor_group"]


def quantize(values, step):
    if not step > 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    scaled = np.asarray(values, dtype=np.float64) / step
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)


def dequantize(indices, step):
    if not step > 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    return np.asarray(indices, dtype=np.float64) * step


def tensor_group(name):
    """Quantization group of a field tensor: ``coeff``, ``basis_i`` or ``projection``."""
    if name in ("weight", "bias"):
        return "projection"
    return name


def step_grid(n=12, smallest=1 / 256, largest=1 / 4):
    """Geometric grid of step sizes, finest first."""
    return tuple(float(s) for s in np.geomspace(smallest, largest, n))


@dataclass
class QuantSpec:
    """Step size per tensor group."""

    steps: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, step in self.steps.items():
            if not (np.isfinite(step) and step > 0):
                raise ValueError(f"step for {name!r} must be positive, got {step}")
        self.steps = {k: float(v) for k, v in self.steps.items()}

    @classmethod
    def uniform(cls, step, levels):
        names = ["coeff", *(f"basis_{i}" for i in range(levels)), "projection"]
        return cls({n: step for n in names})

    def step_for(self, tensor_name):
        return self.steps[tensor_group(tensor_name)]
