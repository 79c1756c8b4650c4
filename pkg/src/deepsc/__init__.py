"""Layered sparse coding: OMP, K-SVD, dictionary initialization and depth estimation."""

from pathlib import Path

__version__ = "0.1.0"

# 512x512 8-bit grayscale Barbara, the default benchmark image
BARBARA = Path(__file__).resolve().parent / "data" / "barbara.pgm"
