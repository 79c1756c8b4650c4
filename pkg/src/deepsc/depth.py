"""Patch-wise monocular depth estimation with one deep dictionary per depth level.

Training pools intensity patches by the quantized depth of their block and
learns a :class:`~deepsc.deep_sparse.DeepModel` per level. Prediction tiles
the image and labels each block with one of two sparse-coding rules:

* ``concat``: code against the concatenation of every level's effective
  dictionary and vote by number of selected atoms per level;
* ``l1``: code against each level separately and keep the smallest l1 norm
  among codes whose residual is within ``l1_guard`` times the best one.

Ties always go to the nearer (smaller) level.

Depth model files (``.dsdm``) are little-endian::

    b"DSDM"  u32 version  u32 levels  f64 min_mm  f64 max_mm
    u32 mode  u32 patch_size  u32 stride  u32 remove_mean
    levels * (u64 nbytes, DSPM model bytes)
"""

from __future__ import annotations

import enum
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .deep_sparse import (
    DeepModel,
    LayerConfig,
    ModelFormatError,
    effective_dictionary,
    model_from_bytes,
    model_to_bytes,
    train_deep,
)
from .patchlab import GrayImage, PatchConfig, PatchMatrix, extract_patches, mse, psnr_from_mse
from .sparse_coding import Dictionary, encode_matrix

MAGIC = b"DSDM"
FORMAT_VERSION = 1
_HEAD = "<IIdd"
_CONF = "<IIII"


class FeatureMode(enum.Enum):
    CONSTANT_BLOCK = "constant"
    MODE_BLOCK = "mode"


class Scheme(enum.Enum):
    CONCAT_MAX_NNZ = "concat"
    DISTINCT_MIN_L1 = "l1"


@dataclass(frozen=True)
class DepthQuantizer:
    levels: int = 10
    min_mm: float = 500.0
    max_mm: float = 10500.0

    def __post_init__(self):
        if self.levels < 2 or not self.min_mm < self.max_mm:
            raise ValueError("quantizer needs levels >= 2 and min_mm < max_mm")

    def quantize(self, depth_mm: float) -> int:
        if not depth_mm > 0:
            raise ValueError(f"cannot quantize nonpositive depth {depth_mm}")
        return int(self.quantize_array(np.array([depth_mm]))[0])

    def quantize_array(self, depth_mm: np.ndarray) -> np.ndarray:
        """Levels 1..levels per pixel; missing (0) depth maps to 0."""
        depth_mm = np.asarray(depth_mm, dtype=np.float64)
        width = (self.max_mm - self.min_mm) / self.levels
        level = np.floor((depth_mm - self.min_mm) / width).astype(np.int64) + 1
        level = np.clip(level, 1, self.levels)
        return np.where(depth_mm > 0, level, 0)

    def to_visual(self, levels: np.ndarray) -> np.ndarray:
        """Map levels linearly onto the 8-bit display range."""
        return np.rint(255.0 * (np.asarray(levels, dtype=np.float64) - 1) / (self.levels - 1))


@dataclass(frozen=True, eq=False)
class RgbdSample:
    intensity: GrayImage
    depth: np.ndarray
    id: str = ""

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.shape != self.intensity.data.shape:
            raise ValueError(f"sample {self.id}: depth and intensity sizes differ")
        if np.any(depth < 0) or not np.all(np.isfinite(depth)):
            raise ValueError(f"sample {self.id}: depth must be finite and >= 0")
        object.__setattr__(self, "depth", depth)


@dataclass(frozen=True, eq=False)
class DepthModel:
    per_level: tuple
    quantizer: DepthQuantizer
    patch_config: PatchConfig
    mode: FeatureMode = FeatureMode.CONSTANT_BLOCK

    def __post_init__(self):
        object.__setattr__(self, "per_level", tuple(self.per_level))
        if len(self.per_level) != self.quantizer.levels:
            raise ValueError("need exactly one deep model per level")
        dims = {m.dim for m in self.per_level}
        if dims != {self.patch_config.dim}:
            raise ValueError("all level models must share the patch dimension")


@dataclass(frozen=True, eq=False)
class DepthMap:
    levels: np.ndarray
    num_levels: int
    smoothed: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.levels.shape[1]

    @property
    def height(self) -> int:
        return self.levels.shape[0]


# ---------------------------------------------------------------- features


def _block_levels(sample: RgbdSample, origins: np.ndarray, p: int, quantizer: DepthQuantizer) -> np.ndarray:
    levels = quantizer.quantize_array(sample.depth)
    windows = np.lib.stride_tricks.sliding_window_view(levels, (p, p))
    return windows[origins[:, 0], origins[:, 1]].reshape(len(origins), p * p)


def block_labels(blocks: np.ndarray, mode: FeatureMode, num_levels: int) -> np.ndarray:
    """Label per block row of quantized levels (0 = missing); 0 means discard."""
    if mode is FeatureMode.CONSTANT_BLOCK:
        first = blocks[:, 0]
        keep = (first > 0) & np.all(blocks == first[:, None], axis=1)
        return np.where(keep, first, 0)
    counts = np.zeros((len(blocks), num_levels + 1), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(len(blocks)), blocks.shape[1]), blocks.ravel()), 1)
    valid = counts[:, 1:].sum(axis=1)
    label = np.argmax(counts[:, 1:], axis=1) + 1
    return np.where(2 * valid >= blocks.shape[1], label, 0)


def extract_depth_features(
    sample: RgbdSample, config: PatchConfig, mode: FeatureMode, quantizer: DepthQuantizer
) -> dict:
    """Intensity patches grouped by depth level (keys 1..levels, maybe empty)."""
    patches = extract_patches(sample.intensity, config)
    labels = block_labels(
        _block_levels(sample, patches.origins, config.patch_size, quantizer), mode, quantizer.levels
    )
    return {level: patches.take(np.flatnonzero(labels == level)) for level in range(1, quantizer.levels + 1)}


def pool_features(samples, config: PatchConfig, mode: FeatureMode, quantizer: DepthQuantizer) -> dict:
    pooled = {level: [] for level in range(1, quantizer.levels + 1)}
    for sample in samples:
        for level, pm in extract_depth_features(sample, config, mode, quantizer).items():
            pooled[level].append(pm.values)
    return {
        level: PatchMatrix(np.concatenate(chunks, axis=1) if chunks else np.zeros((config.dim, 0)))
        for level, chunks in pooled.items()
    }


def train_depth_model(
    samples,
    layer_configs,
    patch_config: PatchConfig,
    mode: FeatureMode = FeatureMode.CONSTANT_BLOCK,
    quantizer: DepthQuantizer = DepthQuantizer(),
) -> DepthModel:
    layer_configs = list(layer_configs)
    pooled = pool_features(samples, patch_config, mode, quantizer)
    need = layer_configs[0].atoms
    short = {level: pm.count for level, pm in pooled.items() if pm.count < need}
    if short:
        detail = ", ".join(f"level {lv}: {n}" for lv, n in short.items())
        raise ValueError(
            f"under-populated depth levels {sorted(short)} (need {need} patches each; {detail})"
        )
    models = [
        train_deep(pooled[level], layer_configs, patch_size=patch_config.patch_size,
                   provenance=f"depth level {level}")
        for level in range(1, quantizer.levels + 1)
    ]
    return DepthModel(models, quantizer, patch_config, mode)


# ---------------------------------------------------------------- classification


@dataclass(frozen=True, eq=False)
class PatchClassifier:
    """Precomputed normalized effective dictionaries of a depth model."""

    model: DepthModel
    level_dicts: tuple = field(init=False)
    concat: Dictionary = field(init=False)
    atom_level: np.ndarray = field(init=False)

    def __post_init__(self):
        dicts = tuple(effective_dictionary(m).normalized() for m in self.model.per_level)
        object.__setattr__(self, "level_dicts", dicts)
        object.__setattr__(self, "concat", Dictionary(np.concatenate([d.values for d in dicts], axis=1)))
        object.__setattr__(
            self, "atom_level",
            np.concatenate([np.full(d.atoms, i) for i, d in enumerate(dicts)]),
        )

    def classify(self, Y: np.ndarray, scheme: Scheme, sparsity: int, l1_guard: float = 2.0) -> np.ndarray:
        """Level (1-based) for every column of ``Y``."""
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] != self.model.patch_config.dim:
            raise ValueError("patch dimension does not match depth model")
        num_levels = len(self.level_dicts)
        if scheme is Scheme.CONCAT_MAX_NNZ:
            code = encode_matrix(self.concat, Y, sparsity).matrix
            cols = np.repeat(np.arange(Y.shape[1]), np.diff(code.indptr))
            votes = np.zeros((Y.shape[1], num_levels), dtype=np.int64)
            np.add.at(votes, (cols, self.atom_level[code.indices]), 1)
            return np.argmax(votes, axis=1) + 1

        norms = np.linalg.norm(Y, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        l1 = np.empty((num_levels, Y.shape[1]))
        rel = np.empty((num_levels, Y.shape[1]))
        for i, d in enumerate(self.level_dicts):
            code = encode_matrix(d, Y, sparsity).matrix
            l1[i] = np.asarray(abs(code).sum(axis=0)).ravel()
            rel[i] = np.linalg.norm(Y - (code.T @ d.values.T).T, axis=0) / safe
        best = rel.min(axis=0)
        eligible = rel <= l1_guard * best + 1e-12
        return np.argmin(np.where(eligible, l1, np.inf), axis=0) + 1


def classify_patch(model: DepthModel, patch, scheme: Scheme, sparsity: int, l1_guard: float = 2.0) -> int:
    patch = np.asarray(patch, dtype=np.float64).reshape(-1, 1)
    return int(PatchClassifier(model).classify(patch, scheme, sparsity, l1_guard)[0])


# ---------------------------------------------------------------- prediction


def _fill_blocks(block_levels: np.ndarray, p: int, height: int, width: int) -> np.ndarray:
    """Expand a block grid to pixels; border pixels take the nearest block."""
    rows = np.minimum(np.arange(height) // p, block_levels.shape[0] - 1)
    cols = np.minimum(np.arange(width) // p, block_levels.shape[1] - 1)
    return block_levels[np.ix_(rows, cols)]


def smooth_levels(levels: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-smoothed level field (radius ceil(3 sigma), reflected edges)."""
    field_ = levels.astype(np.float64)
    if sigma <= 0:
        return field_
    radius = math.ceil(3 * sigma)
    out = ndimage.gaussian_filter(field_, sigma, mode="reflect", truncate=radius / sigma)
    # normalized nonnegative kernel: clip only removes rounding overshoot
    return np.clip(out, field_.min(), field_.max())


def _block_grid(image: GrayImage, p: int) -> tuple[int, int]:
    if p > min(image.width, image.height):
        raise ValueError(f"image {image.width}x{image.height} smaller than a {p}px patch")
    return image.height // p, image.width // p


def predict_depth_map(
    model: DepthModel,
    image: GrayImage,
    scheme: Scheme = Scheme.CONCAT_MAX_NNZ,
    sparsity: int = 4,
    smoothing_sigma: float = 2.0,
    l1_guard: float = 2.0,
    classifier: PatchClassifier | None = None,
) -> DepthMap:
    p = model.patch_config.patch_size
    nr, nc = _block_grid(image, p)
    tiles = PatchConfig(p, p, model.patch_config.remove_mean)
    patches = extract_patches(image, tiles)
    classifier = classifier or PatchClassifier(model)
    labels = classifier.classify(patches.values, scheme, sparsity, l1_guard).reshape(nr, nc)
    levels = _fill_blocks(labels, p, image.height, image.width)
    return DepthMap(levels, model.quantizer.levels, smooth_levels(levels, smoothing_sigma))


def baseline_predict(
    image: GrayImage, kind: str, levels: int, patch_size: int, seed: int = 0
) -> DepthMap:
    """``kind`` is ``"random"`` (i.i.d. level per block) or ``"uniform"`` (mid level)."""
    nr, nc = _block_grid(image, patch_size)
    if kind == "random":
        grid = np.random.default_rng(seed).integers(1, levels + 1, size=(nr, nc))
    elif kind == "uniform":
        grid = np.full((nr, nc), math.ceil(levels / 2))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    filled = _fill_blocks(grid, patch_size, image.height, image.width)
    return DepthMap(filled, levels, filled.astype(np.float64))


def evaluate_depth(pred: DepthMap, truth: RgbdSample, quantizer: DepthQuantizer, use_smoothed: bool = False) -> float:
    """PSNR of predicted vs. quantized true depth on the 8-bit level scale.

    Pixels with missing depth are ignored.
    """
    if pred.levels.shape != truth.depth.shape:
        raise ValueError(f"dimension mismatch: {pred.levels.shape} vs {truth.depth.shape}")
    true_levels = quantizer.quantize_array(truth.depth)
    mask = true_levels > 0
    field_ = pred.smoothed if use_smoothed and pred.smoothed is not None else pred.levels
    return psnr_from_mse(mse(quantizer.to_visual(true_levels), quantizer.to_visual(field_), mask))


# ---------------------------------------------------------------- files


_MODE_CODES = {FeatureMode.CONSTANT_BLOCK: 0, FeatureMode.MODE_BLOCK: 1}


def depth_model_to_bytes(model: DepthModel) -> bytes:
    q, pc = model.quantizer, model.patch_config
    parts = [
        MAGIC,
        struct.pack(_HEAD, FORMAT_VERSION, q.levels, q.min_mm, q.max_mm),
        struct.pack(_CONF, _MODE_CODES[model.mode], pc.patch_size, pc.stride, int(pc.remove_mean)),
    ]
    for m in model.per_level:
        blob = model_to_bytes(m)
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    return b"".join(parts)


def depth_model_from_bytes(buf: bytes) -> DepthModel:
    if buf[:4] != MAGIC:
        raise ModelFormatError("bad magic: not a DSDM depth model")
    head = struct.calcsize(_HEAD) + struct.calcsize(_CONF)
    if len(buf) < 4 + head:
        raise ModelFormatError("truncated depth model header")
    version, levels, min_mm, max_mm = struct.unpack_from(_HEAD, buf, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported depth model version {version}")
    mode_code, patch_size, stride, remove_mean = struct.unpack_from(_CONF, buf, 4 + struct.calcsize(_HEAD))
    modes = {v: k for k, v in _MODE_CODES.items()}
    if mode_code not in modes:
        raise ModelFormatError(f"unknown feature mode code {mode_code}")
    pos = 4 + head
    models = []
    for _ in range(levels):
        if pos + 8 > len(buf):
            raise ModelFormatError("truncated depth model")
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + n > len(buf):
            raise ModelFormatError("truncated depth model")
        models.append(model_from_bytes(buf[pos : pos + n]))
        pos += n
    if pos != len(buf):
        raise ModelFormatError("trailing bytes after depth model")
    try:
        return DepthModel(models, DepthQuantizer(levels, min_mm, max_mm),
                          PatchConfig(patch_size, stride, bool(remove_mean)), modes[mode_code])
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def save_depth_model(model: DepthModel, path) -> None:
    with open(path, "wb") as f:
        f.write(depth_model_to_bytes(model))


def load_depth_model(path) -> DepthModel:
    if not os.path.isfile(path):
        raise ModelFormatError(f"cannot read depth model file {path}")
    with open(path, "rb") as f:
        return depth_model_from_bytes(f.read())
