"""Grayscale image I/O, patch extraction/reassembly and PSNR."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

PEAK = 255.0
INFINITE_PSNR = math.inf


class ImageFormatError(ValueError):
    """Raised for unreadable, corrupt or unsupported image files."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """A 2-D intensity grid in [0, 255], stored as float64 (rows = height)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ValueError("GrayImage needs a non-empty 2-D array")
        if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > PEAK:
            raise ValueError("GrayImage values must lie in [0, 255]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int
    stride: int | None = None
    remove_mean: bool = False

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size)
        if self.patch_size < 1 or self.stride < 1:
            raise ValueError("patch_size and stride must be >= 1")

    @property
    def dim(self) -> int:
        return self.patch_size * self.patch_size


@dataclass(frozen=True, eq=False)
class PatchMatrix:
    """Column-stacked vectorized patches.

    ``values`` is ``dim x count``; ``origins`` holds the (row, col) of each
    patch's top-left pixel, or is empty for signals with no image location
    (e.g. inter-layer codes). ``means`` holds removed per-patch DC values
    when the patches were extracted with ``remove_mean``.
    """

    values: np.ndarray
    origins: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    means: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("PatchMatrix values must be 2-D")
        origins = np.asarray(self.origins, dtype=np.int64).reshape(-1, 2)
        if len(origins) not in (0, values.shape[1]):
            raise ValueError("origins length must equal patch count")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origins", origins)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def count(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "PatchMatrix":
        return PatchMatrix(values, self.origins, self.means)

    def take(self, columns) -> "PatchMatrix":
        columns = np.asarray(columns, dtype=np.int64)
        origins = self.origins[columns] if len(self.origins) else self.origins
        means = self.means[columns] if self.means is not None else None
        return PatchMatrix(self.values[:, columns], origins, means)


# ---------------------------------------------------------------- file I/O


def _pnm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise ImageFormatError("unsupported/corrupt format: truncated header")
        if buf[pos : pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("unsupported/corrupt format: truncated header")
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary P5 or P6 file; returns the raw samples and maxval.

    P6 samples come back as ``h x w x 3``. 16-bit samples are big-endian.
    """
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] not in (b"P5", b"P6"):
        raise ImageFormatError("unsupported/corrupt format: not a binary PGM/PPM")
    channels = 1 if buf[:2] == b"P5" else 3
    tokens, offset = _pnm_tokens(buf[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError("unsupported/corrupt format: bad header field") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError("zero-sized image")
    if not 0 < maxval < 65536:
        raise ImageFormatError("unsupported/corrupt format: maxval out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * channels
    raw = buf[offset : offset + n * dtype.itemsize]
    if len(raw) < n * dtype.itemsize:
        raise ImageFormatError("unsupported/corrupt format: truncated raster")
    samples = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return samples.reshape(shape), maxval


def write_pgm(path, samples: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D integer array as binary P5 (16-bit big-endian if maxval > 255)."""
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.size == 0:
        raise ValueError("write_pgm needs a non-empty 2-D array")
    if samples.min() < 0 or samples.max() > maxval:
        raise ValueError("sample values exceed maxval")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = samples.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(samples.astype(dtype).tobytes())


def _luma(rgb: np.ndarray) -> np.ndarray:
    # ITU-R BT.601 weights
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def load_image(path) -> GrayImage:
    """Load an 8-bit PGM/PPM (or PNG via Pillow) as a GrayImage.

    Color inputs are converted to luma; higher bit depths are rescaled to
    [0, 255].
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageFormatError(f"unreadable file: {path}")
    with open(path, "rb") as f:
        magic = f.read(8)
    if magic[:2] in (b"P5", b"P6"):
        samples, maxval = read_pgm(path)
        data = samples.astype(np.float64) * (PEAK / maxval)
    elif magic == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                data = np.asarray(im, dtype=np.float64) * (PEAK / 65535.0)
            else:
                data = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im, dtype=np.float64)
    else:
        raise ImageFormatError("unsupported/corrupt format")
    if data.ndim == 3:
        data = _luma(data)
    if data.size == 0:
        raise ImageFormatError("zero-sized image")
    return GrayImage(np.clip(data, 0.0, PEAK))


def save_image(image: GrayImage, path) -> None:
    """Write ``image`` rounded to 8-bit P5."""
    write_pgm(path, np.rint(image.data).astype(np.int64), 255)


# ---------------------------------------------------------------- patches


def patch_origins(height: int, width: int, config: PatchConfig) -> np.ndarray:
    p, s = config.patch_size, config.stride
    rows = np.arange(0, height - p + 1, s)
    cols = np.arange(0, width - p + 1, s)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.int64)


def extract_patches(image: GrayImage, config: PatchConfig) -> PatchMatrix:
    """Vectorize every full patch on the stride grid.

    Origins are scanned row-major; each patch is flattened column-major.
    Border pixels that do not fill a whole patch are dropped.
    """
    p = config.patch_size
    if p > min(image.width, image.height):
        raise ValueError(f"patch size {p} larger than image {image.width}x{image.height}")
    origins = patch_origins(image.height, image.width, config)
    windows = np.lib.stride_tricks.sliding_window_view(image.data, (p, p))
    blocks = windows[origins[:, 0], origins[:, 1]]  # count x p x p
    values = blocks.transpose(0, 2, 1).reshape(len(origins), p * p).T.copy()
    means = None
    if config.remove_mean:
        means = values.mean(axis=0)
        values -= means
    return PatchMatrix(values, origins, means)


def reassemble(patches: PatchMatrix, config: PatchConfig, width: int, height: int) -> GrayImage:
    """Average patch contributions back onto a ``width x height`` grid.

    Uncovered pixels are 0 and the result is clamped to [0, 255].
    """
    p = config.patch_size
    if patches.dim != p * p:
        raise ValueError("patch dimension does not match config")
    origins = patches.origins
    if len(origins) != patches.count:
        raise ValueError("patches carry no origins")
    if len(origins) and (
        origins.min() < 0 or origins[:, 0].max() + p > height or origins[:, 1].max() + p > width
    ):
        raise ValueError("patch origin out of bounds")
    values = patches.values
    if patches.means is not None:
        values = values + patches.means
    blocks = values.T.reshape(-1, p, p).transpose(0, 2, 1)
    acc = np.zeros((height, width))
    weight = np.zeros((height, width))
    # loop over in-patch offsets keeps the accumulation order fixed
    for i in range(p):
        for j in range(p):
            np.add.at(acc, (origins[:, 0] + i, origins[:, 1] + j), blocks[:, i, j])
            np.add.at(weight, (origins[:, 0] + i, origins[:, 1] + j), 1.0)
    out = np.divide(acc, weight, out=np.zeros_like(acc), where=weight > 0)
    return GrayImage(np.clip(out, 0.0, PEAK))


# ---------------------------------------------------------------- metric


def mse(reference: np.ndarray, test: np.ndarray, mask: np.ndarray | None = None) -> float:
    diff = np.asarray(reference, dtype=np.float64) - np.asarray(test, dtype=np.float64)
    sq = diff * diff
    if mask is not None:
        sq = sq[mask]
    if sq.size == 0:
        raise ValueError("no pixels to compare")
    return math.fsum(sq.ravel()) / sq.size


def psnr_from_mse(err: float) -> float:
    if err == 0:
        return INFINITE_PSNR
    return 10.0 * math.log10(PEAK * PEAK / err)


def psnr(reference: GrayImage, test: GrayImage) -> float:
    """PSNR in dB with peak 255; identical images give ``math.inf``."""
    if reference.data.shape != test.data.shape:
        raise ValueError(
            f"dimension mismatch: {reference.data.shape} vs {test.data.shape}"
        )
    return psnr_from_mse(mse(reference.data, test.data))


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"
