"""Layered ("deep") sparse coding.

Layer 1 is learned on the patches; its dense sparse code becomes the
training signal of layer 2, and so on. Chaining the syntheses gives
``A1 @ A2 @ ... @ An @ Xn ~= Y``.

Model files (``.dspm``) are little-endian::

    b"DSPM"  u32 version  u32 n_layers
    n_layers * (u32 rows, u32 cols, u32 sparsity)
    per layer: rows*cols f64, row-major
    u32 patch_size  u32 len  provenance (utf-8)  i64 seed  u32 flags
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dict_init import InitKind, InitStrategy, initial_dictionary
from .dict_learning import TrainConfig, UnusedAtomPolicy, train
from .patchlab import PatchMatrix
from .sparse_coding import Dictionary, SparseCode, encode_batch, encode_matrix, synthesize

MAGIC = b"DSPM"
FORMAT_VERSION = 1
FLAG_ABS_CODES = 1
LOAD_NORM_TOL = 1e-8


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LayerConfig:
    atoms: int
    sparsity: int
    iterations: int = 20
    init: InitStrategy = InitStrategy(InitKind.RANDOM_PATCH_SUBSET)
    unused_atom_policy: UnusedAtomPolicy = UnusedAtomPolicy.REPLACE_WITH_WORST_PATCH

    def __post_init__(self):
        if self.atoms < 1 or self.sparsity < 1 or self.iterations < 0:
            raise ValueError(f"invalid layer config {self}")


@dataclass(frozen=True, eq=False)
class DeepModel:
    layers: tuple
    sparsities: tuple
    patch_size: int = 0
    provenance: str = ""
    seed: int = 0
    abs_codes: bool = False
    # per-layer K-SVD residual traces; not serialized
    error_traces: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "sparsities", tuple(int(s) for s in self.sparsities))
        if not self.layers:
            raise ValueError("model needs at least one layer")
        if len(self.sparsities) != len(self.layers):
            raise ValueError("one sparsity per layer required")
        for i in range(1, len(self.layers)):
            if self.layers[i].dim != self.layers[i - 1].atoms:
                raise ValueError(
                    f"chain compatibility: layer {i} dim {self.layers[i].dim} "
                    f"!= layer {i - 1} atoms {self.layers[i - 1].atoms}"
                )
        for layer, s in zip(self.layers, self.sparsities):
            if not 1 <= s <= min(layer.dim, layer.atoms):
                raise ValueError(f"sparsity {s} invalid for {layer.dim}x{layer.atoms} layer")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].dim

    @property
    def atoms(self) -> int:
        return self.layers[-1].atoms


class EffectiveDictionary(NamedTuple):
    """Product of all layer dictionaries; columns are generally not unit norm."""

    matrix: np.ndarray
    norms: np.ndarray
    unit_norm: bool

    def normalized(self) -> Dictionary:
        return Dictionary.from_columns(self.matrix)


def _layer_input(code: SparseCode, abs_codes: bool) -> np.ndarray:
    X = code.to_dense()
    return np.abs(X) if abs_codes else X


def train_deep(
    patches: PatchMatrix,
    configs,
    *,
    patch_size: int = 0,
    abs_codes: bool = False,
    provenance: str = "",
    seed: int = 0,
) -> DeepModel:
    """Greedy layer-by-layer training.

    A layer with ``iterations == 0`` keeps its initial dictionary fixed
    (e.g. a constant DCT first layer).
    """
    configs = list(configs)
    if not configs:
        raise ValueError("need at least one layer config")
    signals = patches
    layers, traces = [], []
    for i, cfg in enumerate(configs):
        if i and np.all(signals.values == 0):
            raise ValueError(f"degenerate layer input: every signal entering layer {i + 1} is zero")
        init = initial_dictionary(cfg.init, signals, cfg.atoms)
        if cfg.iterations == 0:
            dictionary, trace = init, []
            code = encode_batch(dictionary, signals, cfg.sparsity)
        else:
            tc = TrainConfig(cfg.sparsity, cfg.iterations, cfg.unused_atom_policy, cfg.init.seed)
            dictionary, code, trace = train(signals, init, tc)
        layers.append(dictionary)
        traces.append(tuple(trace))
        signals = PatchMatrix(_layer_input(code, abs_codes))
    return DeepModel(
        layers,
        [c.sparsity for c in configs],
        patch_size=patch_size,
        provenance=provenance,
        seed=seed,
        abs_codes=abs_codes,
        error_traces=tuple(traces),
    )


def effective_dictionary(model: DeepModel) -> EffectiveDictionary:
    matrix = model.layers[0].values
    for layer in model.layers[1:]:
        matrix = matrix @ layer.values
    norms = np.linalg.norm(matrix, axis=0)
    return EffectiveDictionary(matrix, norms, bool(np.all(np.abs(norms - 1) <= 1e-10)))


def deep_encode_all(model: DeepModel, signals: np.ndarray) -> list:
    """Codes of every layer for a ``dim x count`` signal matrix."""
    codes = []
    X = signals
    for layer, s in zip(model.layers, model.sparsities):
        code = encode_matrix(layer, X, s)
        codes.append(code)
        X = _layer_input(code, model.abs_codes)
    return codes


def deep_encode(model: DeepModel, patches: PatchMatrix) -> SparseCode:
    """Encode through every layer and return the last layer's code."""
    if patches.dim != model.dim:
        raise ValueError(f"patch dim {patches.dim} != model dim {model.dim}")
    return deep_encode_all(model, patches.values)[-1]


def deep_reconstruct(model: DeepModel, code: SparseCode, like: PatchMatrix | None = None) -> PatchMatrix:
    """Synthesize back through the layers, last to first."""
    X = synthesize(model.layers[-1].values, code)
    for layer in reversed(model.layers[:-1]):
        X = layer.values @ X
    if like is None:
        return PatchMatrix(X)
    return like.with_values(X)


# ---------------------------------------------------------------- files


def model_to_bytes(model: DeepModel) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, model.depth))
    for layer, s in zip(model.layers, model.sparsities):
        out.write(struct.pack("<III", layer.dim, layer.atoms, s))
    for layer in model.layers:
        out.write(np.ascontiguousarray(layer.values, dtype="<f8").tobytes())
    prov = model.provenance.encode("utf-8")
    out.write(struct.pack("<II", model.patch_size, len(prov)))
    out.write(prov)
    out.write(struct.pack("<qI", model.seed, FLAG_ABS_CODES if model.abs_codes else 0))
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("truncated model data")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(buf: bytes) -> DeepModel:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ModelFormatError("bad magic: not a DSPM model")
    version, depth = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    if depth < 1:
        raise ModelFormatError("model has no layers")
    shapes = [r.unpack("<III") for _ in range(depth)]
    for i in range(1, depth):
        if shapes[i][0] != shapes[i - 1][1]:
            raise ModelFormatError(
                f"chain compatibility: layer {i} has {shapes[i][0]} rows, "
                f"layer {i - 1} has {shapes[i - 1][1]} atoms"
            )
    layers = []
    for rows, cols, _ in shapes:
        values = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        norms = np.linalg.norm(values, axis=0)
        if not np.all(np.isfinite(values)) or np.any(np.abs(norms - 1) > LOAD_NORM_TOL):
            raise ModelFormatError("non-unit atoms in stored dictionary")
        values = values.astype(np.float64)
        # files we write are exact; foreign files within the load tolerance are renormalized
        if np.any(np.abs(norms - 1) > 1e-10):
            values = values / norms
        layers.append(Dictionary(values))
    patch_size, plen = r.unpack("<II")
    try:
        provenance = r.take(plen).decode("utf-8")
    except UnicodeDecodeError:
        raise ModelFormatError("provenance is not valid utf-8") from None
    seed, flags = r.unpack("<qI")
    if r.pos != len(buf):
        raise ModelFormatError("trailing bytes after model")
    try:
        return DeepModel(layers, [s[2] for s in shapes], patch_size, provenance, seed,
                         bool(flags & FLAG_ABS_CODES))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def save_model(model: DeepModel, path) -> None:
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))


def load_model(path) -> DeepModel:
    if not os.path.isfile(path):
        raise ModelFormatError(f"cannot read model file {path}")
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
