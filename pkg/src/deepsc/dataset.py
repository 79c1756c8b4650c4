"""RGB-D dataset directories.

A dataset is a directory of ``<id>.pgm`` (8-bit intensity) and
``<id>.depth.pgm`` (16-bit, millimeters, 0 = missing) pairs plus an
``index.txt`` listing one ``<split> <id>`` pair per line (``#`` comments
allowed), e.g. ``train 0001``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .depth import RgbdSample
from .patchlab import load_image, read_pgm, save_image, write_pgm

INDEX_NAME = "index.txt"


def read_index(root) -> list[tuple[str, str]]:
    path = Path(root) / INDEX_NAME
    if not path.is_file():
        raise FileNotFoundError(f"dataset index not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<split> <id>'")
        entries.append((parts[0], parts[1]))
    return entries


def load_depth(path) -> np.ndarray:
    samples, _ = read_pgm(path)
    if samples.ndim != 2:
        raise ValueError(f"{path}: depth map must be single-channel")
    return samples.astype(np.float64)


def load_split(root, split: str | None = None) -> list[RgbdSample]:
    """Load every sample of ``split`` (all samples when None)."""
    root = Path(root)
    ids = [i for s, i in read_index(root) if split is None or s == split]
    missing = [i for i in ids if not (root / f"{i}.pgm").is_file() or not (root / f"{i}.depth.pgm").is_file()]
    if missing:
        raise FileNotFoundError(f"missing dataset pairs for ids: {', '.join(missing)}")
    return [
        RgbdSample(load_image(root / f"{i}.pgm"), load_depth(root / f"{i}.depth.pgm"), i) for i in ids
    ]


def write_dataset(root, splits: dict) -> None:
    """Write ``{split: [RgbdSample, ...]}`` as a dataset directory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for split, samples in splits.items():
        for sample in samples:
            save_image(sample.intensity, root / f"{sample.id}.pgm")
            write_pgm(root / f"{sample.id}.depth.pgm", np.rint(sample.depth).astype(np.int64), 65535)
            lines.append(f"{split} {sample.id}")
    (root / INDEX_NAME).write_text("\n".join(lines) + "\n")

