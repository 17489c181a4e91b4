"""The factorized-field image model.

A field stores a coefficient grid sampled at plain pixel coordinates and
``levels`` basis grids sampled at sawtooth-tiled coordinates.  For level ``i``
and frequency slot ``j`` the feature is ``c_ij * psi_j(alpha_j * b_i)``; all
features are concatenated and mapped to RGB by an affine projection.

Variants
--------
``full``
    ``c_ij * psi(alpha * b_i)`` with ``K = len(alphas) * len(psi)`` slots.
``no_psi``
    ``c_ij * (alpha_j * b_i)``; same slot layout as ``full``.
``no_alpha``
    ``c_ij * psi_j(b_i)``; same slot layout as ``full``.
``factor_fields``
    ``c_i * b_i``, a single slot.
``vanilla``
    ``b_1`` alone (one level, coefficients fixed to one).
``concat``
    coefficients and ``psi(alpha * b)`` concatenated without the product.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache

import numpy as np

from .grid import FieldGrid, interpolation_matrix, sample_lattice, sample_lattice_adjoint, sample_points
from .transform import CoordTransform, apply

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "FactorizedField",
    "init_field",
    "forward",
    "forward_raw",
    "backward",
    "evaluate_points",
    "parameter_count",
    "field_to_bytes",
    "field_from_bytes",
    "save_field",
    "load_field",
    "FieldFormatError",
]

VARIANTS = ("vanilla", "factor_fields", "full", "no_psi", "no_alpha", "concat")
PSI_FUNCTIONS = ("sin", "cos")

FIELD_MAGIC = b"FFLD"
FIELD_VERSION = 1


class FieldFormatError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Hyperparameters of a factorized field.

    ``basis_resolutions`` and ``tiles_per_level`` are per level.  The defaults
    describe the 256x256 setting: six levels of 24-channel bases at
    ``256 / 2**i``, each tiled ``2**i`` times, and a 64x64 coefficient grid.
    """

    variant: str = "full"
    levels: int = 6
    basis_channels: int = 24
    alphas: tuple = (1.0, 4.0, 16.0, 64.0)
    psi_set: tuple = ("sin", "cos")
    tiles_per_level: tuple = (1, 2, 4, 8, 16, 32)
    basis_resolutions: tuple = ((256, 256), (128, 128), (64, 64), (32, 32), (16, 16), (8, 8))
    coeff_resolution: tuple = (64, 64)
    output_channels: int = 3
    seed: int = 0
    tie_coefficients: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.alphas = tuple(float(a) for a in self.alphas)
        self.psi_set = tuple(self.psi_set)
        self.tiles_per_level = tuple(int(t) for t in self.tiles_per_level)
        self.basis_resolutions = tuple((int(h), int(w)) for h, w in self.basis_resolutions)
        self.coeff_resolution = tuple(int(x) for x in self.coeff_resolution)
        self.seed = int(self.seed)
        self.tie_coefficients = bool(self.tie_coefficients)
        if self.variant == "vanilla" and self.levels != 1:
            # vanilla is single-level with unit coefficients
            self.levels = 1
            self.tiles_per_level = self.tiles_per_level[:1]
            self.basis_resolutions = self.basis_resolutions[:1]
        self._validate()

    def _validate(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.basis_channels < 1:
            raise ValueError("basis_channels must be >= 1")
        if self.output_channels != 3:
            raise ValueError("output_channels must be 3")
        if len(self.tiles_per_level) != self.levels:
            raise ValueError(
                f"tiles_per_level has {len(self.tiles_per_level)} entries for {self.levels} levels"
            )
        if len(self.basis_resolutions) != self.levels:
            raise ValueError(
                f"basis_resolutions has {len(self.basis_resolutions)} entries for {self.levels} levels"
            )
        if any(t < 1 for t in self.tiles_per_level):
            raise ValueError("tiles must be positive")
        if any(h < 1 or w < 1 for h, w in self.basis_resolutions):
            raise ValueError("basis resolutions must be positive")
        if len(self.coeff_resolution) != 2 or min(self.coeff_resolution) < 1:
            raise ValueError("coeff_resolution must be a positive (H, W) pair")
        if any(not np.isfinite(a) or a <= 0 for a in self.alphas):
            raise ValueError("alphas must be positive and finite")
        if any(p not in PSI_FUNCTIONS for p in self.psi_set):
            raise ValueError(f"psi_set entries must be in {PSI_FUNCTIONS}")
        if len(set(self.psi_set)) != len(self.psi_set):
            raise ValueError("psi_set has duplicates")
        if self.variant in ("full", "concat") and (not self.alphas or not self.psi_set):
            raise ValueError(f"variant {self.variant!r} needs at least one alpha and one psi")
        if self.variant == "no_psi" and not self.alphas:
            raise ValueError("variant 'no_psi' needs at least one alpha")
        if self.variant == "no_alpha" and not self.psi_set:
            raise ValueError("variant 'no_alpha' needs at least one psi")

    @classmethod
    def for_image(cls, height, width, levels=6, coeff_downscale=4, **kwargs):
        """Config whose level ``i`` basis is ``(H / 2**i, W / 2**i)`` tiled ``2**i`` times."""
        tiles = tuple(2**i for i in range(levels))
        res = tuple((max(1, height // 2**i), max(1, width // 2**i)) for i in range(levels))
        coeff = (max(1, height // coeff_downscale), max(1, width // coeff_downscale))
        kwargs.setdefault("tiles_per_level", tiles)
        kwargs.setdefault("basis_resolutions", res)
        kwargs.setdefault("coeff_resolution", coeff)
        return cls(levels=levels, **kwargs)

    @property
    def slots(self):
        """``(alpha, fn)`` per frequency slot; ``fn`` is ``sin``, ``cos`` or ``lin``."""
        if self.variant in ("full", "concat"):
            return tuple((a, p) for a in self.alphas for p in self.psi_set)
        if self.variant == "no_psi":
            return tuple((a, "lin") for a in self.alphas for _ in self.psi_set)
        if self.variant == "no_alpha":
            return tuple((1.0, p) for _ in self.alphas for p in self.psi_set)
        return ((1.0, "lin"),)

    @property
    def n_slots(self):
        return len(self.slots)

    @property
    def coeff_slots(self):
        """Coefficient fields per level: one per slot, or one shared (tied)."""
        return 1 if self.tie_coefficients else self.n_slots

    @property
    def coeff_channels(self):
        if self.variant == "vanilla":
            return 0
        return self.levels * self.coeff_slots * self.basis_channels

    @property
    def feature_dim(self):
        if self.variant == "vanilla":
            return self.basis_channels
        product = self.levels * self.n_slots * self.basis_channels
        if self.variant == "concat":
            return self.coeff_channels + product
        return product

    def transforms(self):
        return [CoordTransform("sawtooth", t) for t in self.tiles_per_level]

    def to_dict(self):
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d["psi_set"] = list(self.psi_set)
        d["tiles_per_level"] = list(self.tiles_per_level)
        d["basis_resolutions"] = [list(r) for r in self.basis_resolutions]
        d["coeff_resolution"] = list(self.coeff_resolution)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FactorizedField:
    config: ModelConfig
    coeff: FieldGrid | None
    bases: list
    weight: np.ndarray
    bias: np.ndarray
    extras: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        cfg = self.config
        if cfg.variant == "vanilla":
            if self.coeff is not None:
                raise ValueError("vanilla fields carry no coefficient grid")
        else:
            expected = (cfg.coeff_channels, *cfg.coeff_resolution)
            if self.coeff is None or self.coeff.shape != expected:
                got = None if self.coeff is None else self.coeff.shape
                raise ValueError(f"coefficient grid shape {got} != {expected}")
        if len(self.bases) != cfg.levels:
            raise ValueError(f"{len(self.bases)} bases for {cfg.levels} levels")
        for b, res in zip(self.bases, cfg.basis_resolutions):
            if b.shape != (cfg.basis_channels, *res):
                raise ValueError(f"basis shape {b.shape} != {(cfg.basis_channels, *res)}")
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.shape != (cfg.output_channels, cfg.feature_dim):
            raise ValueError(
                f"projection weight shape {self.weight.shape} != {(cfg.output_channels, cfg.feature_dim)}"
            )
        if self.bias.shape != (cfg.output_channels,):
            raise ValueError(f"projection bias shape {self.bias.shape} != ({cfg.output_channels},)")

    def parameters(self):
        """Name -> array mapping in declaration order (arrays are live views)."""
        params = {}
        if self.coeff is not None:
            params["coeff"] = self.coeff.data
        for i, b in enumerate(self.bases):
            params[f"basis_{i}"] = b.data
        params["weight"] = self.weight
        params["bias"] = self.bias
        return params

    def copy(self):
        return FactorizedField(
            self.config,
            None if self.coeff is None else self.coeff.copy(),
            [b.copy() for b in self.bases],
            self.weight.copy(),
            self.bias.copy(),
        )

    def astype(self, dtype):
        return FactorizedField(
            self.config,
            None if self.coeff is None else FieldGrid(self.coeff.data.astype(dtype)),
            [FieldGrid(b.data.astype(dtype)) for b in self.bases],
            self.weight.astype(dtype),
            self.bias.astype(dtype),
        )

    @property
    def dtype(self):
        return self.weight.dtype


def init_field(config, seed=None):
    """Deterministic random initialization.

    Coefficients, then bases in level order, then projection weights are
    drawn from one generator seeded with ``seed`` (default ``config.seed``).
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    scale = 0.5 / np.sqrt(config.basis_channels)
    coeff = None
    if config.variant != "vanilla":
        shape = (config.coeff_channels, *config.coeff_resolution)
        coeff = FieldGrid(rng.uniform(-scale, scale, size=shape))
    bases = [
        FieldGrid(rng.uniform(-scale, scale, size=(config.basis_channels, h, w)))
        for h, w in config.basis_resolutions
    ]
    bound = 1.0 / np.sqrt(config.feature_dim)
    weight = rng.uniform(-bound, bound, size=(config.output_channels, config.feature_dim))
    bias = np.full(config.output_channels, 0.5)
    return FactorizedField(config, coeff, bases, weight, bias)


def parameter_count(field):
    return int(sum(p.size for p in field.parameters().values()))


def pixel_centers(n):
    return (np.arange(n, dtype=np.float64) + 0.5) / n


@lru_cache(maxsize=256)
def _interp(n_out, size, tiles):
    coords = apply(CoordTransform("sawtooth", tiles), pixel_centers(n_out))
    mat = interpolation_matrix(coords, size)
    mat.setflags(write=False)
    return mat


def _slot_values(slots, b):
    """Stack ``g_j(b)`` over slots; ``b`` has shape ``(Cb, n)``."""
    out = np.empty((len(slots), *b.shape), dtype=b.dtype)
    for j, (alpha, fn) in enumerate(slots):
        if fn == "sin":
            np.sin(alpha * b, out=out[j])
        elif fn == "cos":
            np.cos(alpha * b, out=out[j])
        else:
            np.multiply(b, alpha, out=out[j])
    return out


def _slot_derivatives(slots, b):
    out = np.empty((len(slots), *b.shape), dtype=b.dtype)
    for j, (alpha, fn) in enumerate(slots):
        if fn == "sin":
            np.multiply(np.cos(alpha * b), alpha, out=out[j])
        elif fn == "cos":
            np.multiply(np.sin(alpha * b), -alpha, out=out[j])
        else:
            out[j] = alpha
    return out


class _Cache:
    __slots__ = ("shape", "coeff_samples", "basis_samples", "slot_values", "mats")


def _weight_slices(cfg, i):
    """Projection columns fed by level ``i``: ``(coefficient block, product block)``.

    Only ``concat`` has a coefficient block; for the product variants the
    first entry is None.
    """
    nb = cfg.basis_channels
    block = cfg.n_slots * nb
    if cfg.variant == "concat":
        cb = cfg.coeff_slots * nb
        off = cfg.coeff_channels
        return slice(i * cb, (i + 1) * cb), slice(off + i * block, off + (i + 1) * block)
    return None, slice(i * block, (i + 1) * block)


def _accumulate_level(cfg, weight, out, i, c, b, g):
    """Add level ``i``'s projected features to ``out`` (``3 x n``)."""
    n = b.shape[-1]
    if cfg.variant == "vanilla":
        out += weight @ b
        return
    wc, wf = _weight_slices(cfg, i)
    if cfg.variant == "concat":
        out += weight[:, wc] @ c.reshape(-1, n)
        out += weight[:, wf] @ g.reshape(-1, n)
    else:
        out += weight[:, wf] @ (c * g).reshape(-1, n)


def _coeff_matrices(cfg, out_h, out_w, dtype):
    ry = _interp(out_h, cfg.coeff_resolution[0], 1).astype(dtype, copy=False)
    rx = _interp(out_w, cfg.coeff_resolution[1], 1).astype(dtype, copy=False)
    return ry, rx


def forward_raw(field, out_h, out_w, keep_cache=False):
    """Pre-clamp prediction of shape ``(3, out_h, out_w)``, plus the backward cache."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    cfg = field.config
    dtype = field.dtype
    n = out_h * out_w
    nb = cfg.basis_channels
    out = np.empty((cfg.output_channels, n), dtype=dtype)
    out[:] = field.bias[:, None]

    coeff_samples = None
    if field.coeff is not None:
        ry, rx = _coeff_matrices(cfg, out_h, out_w, dtype)
        coeff_samples = sample_lattice(field.coeff.data, ry, rx).reshape(
            cfg.levels, cfg.coeff_slots, nb, n
        )

    basis_samples, slot_vals, mats = [], [], []
    for i, (basis, tiles) in enumerate(zip(field.bases, cfg.tiles_per_level)):
        ry = _interp(out_h, basis.height, tiles).astype(dtype, copy=False)
        rx = _interp(out_w, basis.width, tiles).astype(dtype, copy=False)
        b = sample_lattice(basis.data, ry, rx).reshape(nb, n)
        g = None if cfg.variant == "vanilla" else _slot_values(cfg.slots, b)
        c = None if coeff_samples is None else coeff_samples[i]
        _accumulate_level(cfg, field.weight, out, i, c, b, g)
        if keep_cache:
            basis_samples.append(b)
            slot_vals.append(g)
            mats.append((ry, rx))

    cache = None
    if keep_cache:
        cache = _Cache()
        cache.shape = (out_h, out_w)
        cache.coeff_samples = coeff_samples
        cache.basis_samples = basis_samples
        cache.slot_values = slot_vals
        cache.mats = mats
    return out.reshape(cfg.output_channels, out_h, out_w), cache


def backward(field, cache, upstream):
    """Gradients of ``sum(upstream * prediction)`` w.r.t. every parameter.

    ``upstream`` has the prediction's shape ``(3, H, W)``.  Returns a dict
    keyed like :meth:`FactorizedField.parameters`.
    """
    cfg = field.config
    out_h, out_w = cache.shape
    n = out_h * out_w
    nb, ns = cfg.basis_channels, cfg.n_slots
    d_out = np.asarray(upstream, dtype=field.dtype).reshape(cfg.output_channels, n)
    weight = field.weight
    d_weight = np.zeros_like(weight)
    d_coeff = None
    if cache.coeff_samples is not None:
        d_coeff = np.empty_like(cache.coeff_samples)

    grads = {}
    d_bases = []
    for i in range(cfg.levels):
        b = cache.basis_samples[i]
        g = cache.slot_values[i]
        ry, rx = cache.mats[i]
        wc, wf = _weight_slices(cfg, i)
        if cfg.variant == "vanilla":
            d_weight += d_out @ b.T
            d_b = weight.T @ d_out
        elif cfg.variant == "concat":
            c = cache.coeff_samples[i]
            d_weight[:, wc] = d_out @ c.reshape(-1, n).T
            d_weight[:, wf] = d_out @ g.reshape(-1, n).T
            d_coeff[i] = (weight[:, wc].T @ d_out).reshape(c.shape)
            d_g = (weight[:, wf].T @ d_out).reshape(ns, nb, n)
            d_b = np.einsum("jcn,jcn->cn", d_g, _slot_derivatives(cfg.slots, b))
        else:
            c = cache.coeff_samples[i]
            d_weight[:, wf] = d_out @ (c * g).reshape(-1, n).T
            d_feat = (weight[:, wf].T @ d_out).reshape(ns, nb, n)
            d_coeff[i] = (d_feat * g).sum(axis=0, keepdims=True) if cfg.tie_coefficients else d_feat * g
            d_b = np.einsum("jcn,jcn->cn", d_feat * c, _slot_derivatives(cfg.slots, b))
        d_bases.append(sample_lattice_adjoint(d_b.reshape(nb, out_h, out_w), ry, rx))

    if d_coeff is not None:
        ry, rx = _coeff_matrices(cfg, out_h, out_w, field.dtype)
        grads["coeff"] = sample_lattice_adjoint(
            d_coeff.reshape(cfg.coeff_channels, out_h, out_w), ry, rx
        )
    for i, d in enumerate(d_bases):
        grads[f"basis_{i}"] = d
    grads["weight"] = d_weight
    grads["bias"] = d_out.sum(axis=1)
    return grads


def forward(field, out_h, out_w):
    """Render an ``(out_h, out_w, 3)`` image clamped to ``[0, 1]``.

    Pixel ``(y, x)`` is evaluated at ``((x + 0.5) / out_w, (y + 0.5) / out_h)``,
    so rendering at ``s`` times the fitted size super-samples the field.
    """
    raw, _ = forward_raw(field, out_h, out_w)
    return np.clip(raw, 0.0, 1.0).transpose(1, 2, 0)


def evaluate_points(field, u, v):
    """Unclamped RGB at arbitrary normalized points; returns ``(n, 3)``."""
    cfg = field.config
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    weight = field.weight.astype(np.float64)
    out = np.tile(field.bias.astype(np.float64)[:, None], (1, u.size))
    coeff = None
    if field.coeff is not None:
        coeff = sample_points(field.coeff, u, v).reshape(
            cfg.levels, cfg.coeff_slots, cfg.basis_channels, u.size
        )
    for i, (basis, t) in enumerate(zip(field.bases, cfg.transforms())):
        b = sample_points(basis, apply(t, u), apply(t, v))
        g = None if cfg.variant == "vanilla" else _slot_values(cfg.slots, b)
        _accumulate_level(cfg, weight, out, i, None if coeff is None else coeff[i], b, g)
    return out.T


# -- serialization ---------------------------------------------------------

def _write_block(buf, payload):
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)


def _read_block(stream, what):
    head = stream.read(4)
    if len(head) != 4:
        raise FieldFormatError(f"truncated {what} length")
    (length,) = struct.unpack("<I", head)
    payload = stream.read(length)
    if len(payload) != length:
        raise FieldFormatError(f"truncated {what}")
    return payload


def config_to_bytes(config):
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_from_bytes(payload):
    try:
        return ModelConfig.from_dict(json.loads(payload.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise FieldFormatError(f"bad config block: {exc}") from exc


def tensor_shapes(config):
    """Shapes of the field tensors in declaration order."""
    shapes = {}
    if config.variant != "vanilla":
        shapes["coeff"] = (config.coeff_channels, *config.coeff_resolution)
    for i, (h, w) in enumerate(config.basis_resolutions):
        shapes[f"basis_{i}"] = (config.basis_channels, h, w)
    shapes["weight"] = (config.output_channels, config.feature_dim)
    shapes["bias"] = (config.output_channels,)
    return shapes


def field_from_tensors(config, tensors):
    coeff = FieldGrid(tensors["coeff"]) if "coeff" in tensors else None
    bases = [FieldGrid(tensors[f"basis_{i}"]) for i in range(config.levels)]
    return FactorizedField(config, coeff, bases, tensors["weight"], tensors["bias"])


def field_to_bytes(field):
    """``FFLD`` container: magic, u16 version, config block, float32 LE tensors."""
    buf = io.BytesIO()
    buf.write(FIELD_MAGIC)
    buf.write(struct.pack("<H", FIELD_VERSION))
    _write_block(buf, config_to_bytes(field.config))
    for arr in field.parameters().values():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def field_from_bytes(data):
    stream = io.BytesIO(data)
    if stream.read(4) != FIELD_MAGIC:
        raise FieldFormatError("not an FFLD field file (bad magic)")
    raw = stream.read(2)
    if len(raw) != 2:
        raise FieldFormatError("truncated version")
    (version,) = struct.unpack("<H", raw)
    if version != FIELD_VERSION:
        raise FieldFormatError(f"unsupported FFLD version {version}")
    config = config_from_bytes(_read_block(stream, "config block"))
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        count = int(np.prod(shape))
        payload = stream.read(4 * count)
        if len(payload) != 4 * count:
            raise FieldFormatError(f"truncated tensor {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if stream.read(1):
        raise FieldFormatError("trailing bytes after last tensor")
    return field_from_tensors(config, tensors)


def save_field(field, path):
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(field))


def load_field(path):
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())
