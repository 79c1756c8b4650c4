import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepsc import BARBARA
from deepsc.patchlab import (
    GrayImage,
    ImageFormatError,
    PatchConfig,
    PatchMatrix,
    extract_patches,
    format_psnr,
    load_image,
    psnr,
    read_pgm,
    reassemble,
    save_image,
    write_pgm,
)


def test_load_pgm_dimensions(tmp_path):
    path = tmp_path / "a.pgm"
    write_pgm(path, np.arange(12 * 7).reshape(7, 12) % 256)
    img = load_image(path)
    assert (img.width, img.height) == (12, 7)
    assert img.data[1, 0] == 12


def test_load_single_black_pixel(tmp_path):
    path = tmp_path / "one.pgm"
    path.write_bytes(b"P5\n1 1\n255\n\x00")
    img = load_image(path)
    assert img.data.shape == (1, 1) and img.data[0, 0] == 0


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n12 ")
    with pytest.raises(ImageFormatError, match="unsupported/corrupt format"):
        load_image(path)


def test_truncated_raster_and_unknown_format(tmp_path):
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageFormatError):
        load_image(short)
    other = tmp_path / "x.bmp"
    other.write_bytes(b"BM\x00\x00")
    with pytest.raises(ImageFormatError):
        load_image(other)
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "missing.pgm")


def test_header_comments_and_16bit(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# comment\n2 1\n# another\n65535\n\x01\x00\xff\xff")
    samples, maxval = read_pgm(path)
    assert maxval == 65535
    assert samples.tolist() == [[256, 65535]]
    img = load_image(path)
    assert img.data[0, 1] == 255.0


def test_color_converted_to_luma(tmp_path):
    path = tmp_path / "c.ppm"
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=np.uint8)
    path.write_bytes(b"P6\n3 1\n255\n" + rgb.tobytes())
    img = load_image(path)
    assert np.allclose(img.data[0], [0.299 * 255, 0.587 * 255, 0.114 * 255])


def test_16bit_write_read_roundtrip(tmp_path):
    depth = np.array([[0, 500, 10500], [65535, 1, 256]])
    write_pgm(tmp_path / "d.pgm", depth, 65535)
    back, maxval = read_pgm(tmp_path / "d.pgm")
    assert maxval == 65535 and np.array_equal(back, depth)
    raw = (tmp_path / "d.pgm").read_bytes()
    assert raw.endswith(b"\x01\x00")  # big-endian 256


def test_gray_image_invariants():
    with pytest.raises(ValueError):
        GrayImage(np.array([[256.0]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))


@pytest.mark.parametrize(
    "size,patch,stride,count",
    [((512, 512), 4, 4, 16384), ((8, 8), 4, 4, 4), ((5, 5), 4, 1, 4), ((10, 7), 3, 2, 12)],
)
def test_patch_counts(size, patch, stride, count):
    h, w = size
    img = GrayImage(np.zeros((h, w)))
    pm = extract_patches(img, PatchConfig(patch, stride))
    assert pm.count == count == ((h - patch) // stride + 1) * ((w - patch) // stride + 1)
    assert pm.dim == patch * patch
    assert len(pm.origins) == pm.count


def test_vectorization_is_column_major_and_scan_row_major():
    data = np.arange(16, dtype=float).reshape(4, 4)
    pm = extract_patches(GrayImage(data), PatchConfig(2, 2))
    assert pm.origins.tolist() == [[0, 0], [0, 2], [2, 0], [2, 2]]
    # patch at (0,0) holds rows [0,1] cols [0,1]: column-major -> 0, 4, 1, 5
    assert pm.values[:, 0].tolist() == [0, 4, 1, 5]
    assert pm.values[:, 1].tolist() == [2, 6, 3, 7]


def test_patch_larger_than_image():
    with pytest.raises(ValueError):
        extract_patches(GrayImage(np.zeros((3, 8))), PatchConfig(4))


def test_reassemble_averages_and_clamps():
    pm = PatchMatrix(np.array([[0.0, 255.0]]), np.array([[0, 0], [0, 0]]))
    out = reassemble(pm, PatchConfig(1, 1), 2, 1)
    assert out.data[0, 0] == 127.5
    assert out.data[0, 1] == 0.0  # uncovered
    hot = PatchMatrix(np.array([[300.0, -4.0]]), np.array([[0, 0], [0, 1]]))
    assert reassemble(hot, PatchConfig(1, 1), 2, 1).data.tolist() == [[255.0, 0.0]]


def test_reassemble_out_of_bounds():
    pm = PatchMatrix(np.zeros((4, 1)), np.array([[3, 0]]))
    with pytest.raises(ValueError, match="out of bounds"):
        reassemble(pm, PatchConfig(2), 4, 4)


def test_mean_removal_roundtrip():
    rng = np.random.default_rng(3)
    img = GrayImage(rng.integers(0, 256, size=(8, 12)).astype(float))
    cfg = PatchConfig(4, 4, remove_mean=True)
    pm = extract_patches(img, cfg)
    assert np.allclose(pm.values.mean(axis=0), 0)
    assert np.array_equal(reassemble(pm, cfg, 12, 8).data, img.data)


@settings(max_examples=60, deadline=None)
@given(
    p=st.integers(1, 5),
    bh=st.integers(1, 6),
    bw=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
)
def test_roundtrip_exact_on_divisible_dimensions(p, bh, bw, seed):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 255, size=(p * bh, p * bw))
    img = GrayImage(data)
    cfg = PatchConfig(p, p)
    back = reassemble(extract_patches(img, cfg), cfg, img.width, img.height)
    assert np.array_equal(back.data, img.data)


@settings(max_examples=40, deadline=None)
@given(p=st.integers(1, 4), s=st.integers(1, 4), h=st.integers(4, 12), w=st.integers(4, 12))
def test_overlapping_roundtrip_on_covered_pixels(p, s, h, w):
    # averaging identical copies reproduces the covered pixels
    rng = np.random.default_rng(h * 100 + w)
    img = GrayImage(rng.uniform(0, 255, size=(h, w)))
    cfg = PatchConfig(p, s)
    back = reassemble(extract_patches(img, cfg), cfg, w, h)
    covered = np.zeros((h, w), dtype=bool)
    for r, c in extract_patches(img, cfg).origins:
        covered[r : r + p, c : c + p] = True
    assert np.allclose(back.data[covered], img.data[covered], rtol=0, atol=1e-12)
    assert np.all(back.data[~covered] == 0)


def test_psnr_examples():
    a = GrayImage(np.zeros((4, 4)))
    assert psnr(a, a) == math.inf
    assert format_psnr(psnr(a, a)) == "inf"
    assert psnr(a, GrayImage(np.full((4, 4), 255.0))) == 0.0
    b = GrayImage(np.ones((4, 4)))
    # hand evaluation: 10 log10(255^2 / 1) = 20 log10(255) = 48.1308...
    assert psnr(a, b) == pytest.approx(48.130803608679, abs=1e-9)
    with pytest.raises(ValueError, match="dimension mismatch"):
        psnr(a, GrayImage(np.zeros((4, 5))))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_psnr_symmetric_and_monotone(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 255, size=(6, 6))
    b = np.clip(a + rng.normal(0, 5, size=a.shape), 0, 255)
    assert psnr(GrayImage(a), GrayImage(b)) == psnr(GrayImage(b), GrayImage(a))
    # push one pixel to the farther extreme: strictly more squared error there
    worse = b.copy()
    far = 255.0 if a[0, 0] < 127.5 else 0.0
    if (far - a[0, 0]) ** 2 > (b[0, 0] - a[0, 0]) ** 2:
        worse[0, 0] = far
        assert psnr(GrayImage(a), GrayImage(worse)) < psnr(GrayImage(a), GrayImage(b))


def test_save_image_rounds(tmp_path):
    img = GrayImage(np.array([[0.4, 254.6]]))
    save_image(img, tmp_path / "r.pgm")
    assert load_image(tmp_path / "r.pgm").data.tolist() == [[0.0, 255.0]]


def test_barbara_fixture_loads():
    img = load_image(BARBARA)
    assert (img.width, img.height) == (512, 512)
    assert extract_patches(img, PatchConfig(4)).count == 16384
