"""Synthetic RGB-D corpora with known texture/depth correspondence.

``two_class_corpus`` pairs smooth low-frequency shading (near) with fine
stripes (far). ``graded_corpus`` uses one grating frequency per depth
level, rising with distance, so neighbouring levels look alike. Region
boundaries sit on the 8-pixel block grid and intensities are integers, so
samples survive a PGM round trip unchanged.
"""

from __future__ import annotations

import numpy as np

from .depth import DepthQuantizer, RgbdSample
from .patchlab import GrayImage

BLOCK = 8


def _finish(intensity: np.ndarray, depth: np.ndarray, sample_id: str) -> RgbdSample:
    img = GrayImage(np.clip(np.rint(intensity), 0, 255))
    return RgbdSample(img, np.rint(depth), sample_id)


def _level_depth(rng, level: int, quantizer: DepthQuantizer, shape) -> np.ndarray:
    """Depths (mm) scattered within the middle half of ``level``'s bin."""
    width = (quantizer.max_mm - quantizer.min_mm) / quantizer.levels
    centre = quantizer.min_mm + (level - 0.5) * width
    return centre + rng.uniform(-0.25 * width, 0.25 * width, size=shape)


def two_class_corpus(count: int = 10, size: int = 128, seed: int = 0):
    """``count`` samples and the 2-level quantizer that labels them.

    The far region is one block-aligned rectangle covering 20-33% of the
    frame; everything else is near.
    """
    rng = np.random.default_rng(seed)
    quantizer = DepthQuantizer(levels=2, min_mm=500.0, max_mm=10500.0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    blocks = size // BLOCK
    for k in range(count):
        theta, phase = rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)
        near = 120 + 50 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / 40 + phase)
        far = 128 + 70 * np.sign(np.sin(2 * np.pi * xx / 4 + rng.uniform(0, 2 * np.pi)))
        while True:
            h, w = rng.integers(blocks // 4, blocks // 2 + 2, size=2)
            if 0.2 <= h * w / blocks**2 <= 1 / 3:
                break
        r0, c0 = rng.integers(0, blocks - h + 1), rng.integers(0, blocks - w + 1)
        is_far = np.zeros((size, size), dtype=bool)
        is_far[r0 * BLOCK : (r0 + h) * BLOCK, c0 * BLOCK : (c0 + w) * BLOCK] = True
        intensity = np.where(is_far, far, near) + rng.normal(0, 3, size=(size, size))
        depth = np.where(
            is_far,
            _level_depth(rng, 2, quantizer, (size, size)),
            _level_depth(rng, 1, quantizer, (size, size)),
        )
        samples.append(_finish(intensity, depth, f"pair{k:03d}"))
    return samples, quantizer


def grating_frequency(level: int) -> float:
    """Cycles per pixel of the texture used for ``level`` (1 = nearest)."""
    return 0.03 + 0.035 * (level - 1)


def graded_corpus(count: int = 10, size: int = 128, cell: int = 32, levels: int = 10, seed: int = 0):
    """Samples tiled with ``cell``-pixel squares, one depth level per square.

    Levels are dealt from a shuffled deck so every level appears about
    equally often across the corpus.
    """
    rng = np.random.default_rng(seed)
    quantizer = DepthQuantizer(levels=levels, min_mm=500.0, max_mm=500.0 + 1000.0 * levels)
    cells = size // cell
    deck: list[int] = []
    yy, xx = np.mgrid[0:cell, 0:cell].astype(np.float64)
    samples = []
    for k in range(count):
        intensity = np.zeros((size, size))
        depth = np.zeros((size, size))
        for r in range(cells):
            for c in range(cells):
                if not deck:
                    deck = list(rng.permutation(np.arange(1, levels + 1)))
                level = int(deck.pop())
                f = grating_frequency(level)
                tex = rng.uniform(100, 156) + 50 * np.sin(2 * np.pi * f * xx + rng.uniform(0, 2 * np.pi))
                sl = (slice(r * cell, (r + 1) * cell), slice(c * cell, (c + 1) * cell))
                intensity[sl] = tex + rng.normal(0, 4, size=tex.shape)
                depth[sl] = _level_depth(rng, level, quantizer, tex.shape)
        samples.append(_finish(intensity, depth, f"grad{k:03d}"))
    return samples, quantizer
