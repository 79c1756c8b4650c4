"""Derive src/deepsc/data/barbara.pgm from the color Barbara shipped in the sporco wheel.

    pip download sporco --no-deps -d /tmp/sporco
    python scripts/make_barbara.py /tmp/sporco/sporco-*.whl src/deepsc/data/barbara.pgm

The source is 702x574 RGB; we take its BT.601 luma and the centered
512x512 window, rounded to 8 bits.
"""

import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from deepsc.patchlab import load_image, write_pgm

SIZE = 512


def main(wheel: str, out: str) -> None:
    with zipfile.ZipFile(wheel) as z, tempfile.TemporaryDirectory() as tmp:
        png = Path(tmp) / "barbara.png"
        png.write_bytes(z.read("sporco/data/barbara.png"))
        img = load_image(png)
    top = (img.height - SIZE) // 2
    left = (img.width - SIZE) // 2
    crop = img.data[top : top + SIZE, left : left + SIZE]
    write_pgm(out, np.rint(crop).astype(np.int64))


if __name__ == "__main__":
    main(*sys.argv[1:3])
