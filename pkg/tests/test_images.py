import numpy as np
import pytest

from textled.errors import ParseError, UnsupportedFormat
from textled.images import GlyphImage, read_pgm, write_pgm


def test_single_pixel_extremes(tmp_path):
    path = tmp_path / "p.pgm"
    path.write_bytes(b"P5\n1 1\n255\n\xff")
    assert read_pgm(path).pixels[0, 0] == 1.0
    path.write_bytes(b"P5\n1 1\n255\n\x00")
    assert read_pgm(path).pixels[0, 0] == 0.0


def test_header_comments(tmp_path):
    path = tmp_path / "p.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x00\x80")
    image = read_pgm(path)
    assert image.width == 2 and image.height == 1
    assert image.pixels[0, 1] == pytest.approx(128 / 255)


def test_write_read_identity(tmp_path):
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, size=(9, 13)).astype(np.float64) / 255.0
    path = tmp_path / "p.pgm"
    write_pgm(GlyphImage(pixels), path)
    again = read_pgm(path)
    assert np.array_equal(again.pixels, pixels)
    # second round trip is byte-identical
    first = path.read_bytes()
    write_pgm(again, path)
    assert path.read_bytes() == first


def test_rejects_ascii_pgm(tmp_path):
    path = tmp_path / "p.pgm"
    path.write_bytes(b"P2\n1 1\n255\n255\n")
    with pytest.raises(UnsupportedFormat):
        read_pgm(path)


def test_rejects_other_maxval(tmp_path):
    path = tmp_path / "p.pgm"
    path.write_bytes(b"P5\n1 1\n127\n\x7f")
    with pytest.raises(UnsupportedFormat):
        read_pgm(path)


def test_truncated_raster(tmp_path):
    path = tmp_path / "p.pgm"
    path.write_bytes(b"P5\n2 2\n255\n\x00\x01")
    with pytest.raises(ParseError):
        read_pgm(path)


def test_image_validation():
    with pytest.raises(ValueError):
        GlyphImage(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        GlyphImage(np.array([[1.5]]))
