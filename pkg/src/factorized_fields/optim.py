"""Objectives, analytic gradients, Adam and the per-image fitting loop."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .analysis import PSNR_CAP, psnr, ssim
from .model import FactorizedField, backward, forward_raw, init_field
from .validation import check_image

__all__ = [
    "FitConfig",
    "FitReport",
    "AdamState",
    "loss_and_grad",
    "gradcheck",
    "adam_step",
    "fit",
    "fit_joint",
]

LOSSES = ("l1", "l2")


@dataclass
class FitConfig:
    iterations: int = 256
    loss: str = "l1"
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        self.iterations = int(self.iterations)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FitReport:
    losses: list = field(default_factory=list)
    psnrs: list = field(default_factory=list)
    final_psnr: float = float("nan")
    final_ssim: float = float("nan")
    wall_time: float = 0.0
    per_image_psnr: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.losses)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "psnr"])
            for i, (loss, p) in enumerate(zip(self.losses, self.psnrs)):
                writer.writerow([i, repr(float(loss)), repr(float(p))])


def _residual_grad(pred, target, kind):
    """Loss and its derivative w.r.t. ``pred`` (both channel-first)."""
    err = pred - target
    n = err.size
    if kind == "l1":
        return float(np.abs(err).sum() / n), np.sign(err) / n
    if kind == "l2":
        return float((err * err).sum() / n), err * (2.0 / n)
    raise ValueError(f"unknown loss {kind!r}")


def _channels_first(target, dtype):
    return np.ascontiguousarray(np.asarray(target).transpose(2, 0, 1), dtype=dtype)


def loss_and_grad(field, target, loss_kind="l1", return_prediction=False):
    """Mean per-element loss of the pre-clamp prediction, with exact gradients.

    ``target`` is ``(H, W, 3)``.  The L1 subgradient at zero error is zero.
    """
    target = np.asarray(target)
    if target.ndim != 3 or target.shape[-1] != field.config.output_channels:
        raise ValueError(f"target must be (H, W, {field.config.output_channels}), got {target.shape}")
    h, w = target.shape[:2]
    pred, cache = forward_raw(field, h, w, keep_cache=True)
    loss, d_pred = _residual_grad(pred, _channels_first(target, pred.dtype), loss_kind)
    grads = backward(field, cache, d_pred)
    if return_prediction:
        return loss, grads, pred
    return loss, grads


def _loss_only(field, target_cf, kind):
    pred, _ = forward_raw(field, target_cf.shape[1], target_cf.shape[2])
    err = pred - target_cf
    if kind == "l1":
        return float(np.abs(err).mean())
    return float((err * err).mean())


def gradcheck(field, target, epsilon=1e-4, samples=64, loss_kind="l2", seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``samples`` parameters are drawn uniformly over all scalars of the field.
    The field is evaluated in float64 and left unchanged.
    """
    work = field.astype(np.float64)
    target = np.asarray(target, dtype=np.float64)
    _, grads = loss_and_grad(work, target, loss_kind)
    target_cf = _channels_first(target, np.float64)
    params = work.parameters()
    names = list(params)
    sizes = np.array([params[k].size for k in names])
    rng = np.random.default_rng(seed)
    picks = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        arr = params[name].reshape(-1)
        original = arr[idx]
        arr[idx] = original + epsilon
        up = _loss_only(work, target_cf, loss_kind)
        arr[idx] = original - epsilon
        down = _loss_only(work, target_cf, loss_kind)
        arr[idx] = original
        fd = (up - down) / (2.0 * epsilon)
        analytic = float(grads[name].reshape(-1)[idx])
        denom = max(abs(analytic), abs(fd), 1e-8)
        worst = max(worst, abs(analytic - fd) / denom)
    return worst


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, config, t=None):
    """Bias-corrected Adam update, in place on ``params`` (name -> array)."""
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step index must be >= 1")
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.eps)
    state.t = t


def _display_psnr(pred_cf, target_cf):
    err = np.clip(pred_cf, 0.0, 1.0) - target_cf
    m = float(np.mean(err.astype(np.float64) ** 2))
    return PSNR_CAP if m == 0.0 else min(PSNR_CAP, 10.0 * np.log10(1.0 / m))


def fit_joint(targets, model_config, fit_config, share_bases=True, callback=None):
    """Fit one field per target, optionally tying all basis grids together.

    Every image starts from the same initialization (``init_field`` with the
    fit seed), so identical targets follow identical trajectories.  The
    objective is the sum of the per-image losses; gradients of shared bases
    are summed over images before the Adam step.

    Returns ``(fields, report)``.  ``report.losses`` holds the summed loss and
    ``report.psnrs`` the mean per-image PSNR at each iteration.
    """
    targets = [check_image(t, name=f"target {i}") for i, t in enumerate(targets)]
    if not targets:
        raise ValueError("need at least one target image")
    shape = targets[0].shape
    for i, t in enumerate(targets):
        if t.shape != shape:
            raise ValueError(f"target {i} has shape {t.shape}, expected {shape}")
    dtype = np.dtype(fit_config.dtype)
    template = init_field(model_config, fit_config.seed).astype(dtype)
    fields_ = [template.copy() for _ in targets]
    if share_bases:
        for f in fields_[1:]:
            f.bases = fields_[0].bases
    targets_cf = [_channels_first(t, dtype) for t in targets]

    state = AdamState()
    report = FitReport()
    start = time.perf_counter()
    for it in range(fit_config.iterations):
        total, psnrs = 0.0, []
        params, grads = {}, {}
        for m, (f, tgt) in enumerate(zip(fields_, targets_cf)):
            pred, cache = forward_raw(f, shape[0], shape[1], keep_cache=True)
            loss, d_pred = _residual_grad(pred, tgt, fit_config.loss)
            g = backward(f, cache, d_pred)
            total += loss
            psnrs.append(_display_psnr(pred, tgt))
            for name, p in f.parameters().items():
                shared = share_bases and name.startswith("basis_")
                key = name if shared else f"{m}/{name}"
                if shared and key in grads:
                    grads[key] = grads[key] + g[name]
                else:
                    params[key] = p
                    grads[key] = g[name]
        if not np.isfinite(total):
            raise FloatingPointError(f"loss became non-finite at iteration {it}")
        report.losses.append(total)
        report.psnrs.append(float(np.mean(psnrs)))
        adam_step(params, grads, state, fit_config)
        if callback is not None:
            callback(it, total, report.psnrs[-1])

    report.wall_time = time.perf_counter() - start
    finals, ssims = [], []
    for f, t in zip(fields_, targets):
        pred, _ = forward_raw(f, shape[0], shape[1])
        recon = np.clip(pred, 0.0, 1.0).transpose(1, 2, 0).astype(np.float64)
        finals.append(psnr(recon, t))
        ssims.append(ssim(recon, t) if min(shape[:2]) >= 11 else float("nan"))
    report.per_image_psnr = finals
    report.final_psnr = float(np.mean(finals))
    report.final_ssim = float(np.mean(ssims))
    return fields_, report


def fit(target, model_config, fit_config=None, callback=None):
    """Fit a single field to ``target``; returns ``(field, report)``."""
    fit_config = fit_config or FitConfig()
    fields_, report = fit_joint([target], model_config, fit_config, share_bases=False, callback=callback)
    return fields_[0], report
