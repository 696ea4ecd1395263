"""Grayscale image container and binary PGM (P5, maxval 255) I/O."""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UnsupportedFormat


@dataclass(frozen=True)
class GlyphImage:
    """Grayscale intensities in [0,1], row-major, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be a 2-D array with positive dimensions")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("intensities must lie in [0,1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def read_pgm(path) -> GlyphImage:
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval -- whitespace separated, '#' comments
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if i > start:
            tokens.append(data[start:i])
    if len(tokens) < 4:
        raise ParseError(f"{path}: truncated PGM header")
    if tokens[0] != b"P5":
        raise UnsupportedFormat(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ParseError(f"{path}: non-numeric PGM header fields") from None
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only maxval 255 supported, got {maxval}")
    i += 1  # exactly one whitespace byte after maxval
    raster = data[i : i + width * height]
    if len(raster) != width * height:
        raise ParseError(f"{path}: raster has {len(raster)} bytes, expected {width * height}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GlyphImage(pixels.astype(np.float64) / 255.0)


def write_pgm(image: GlyphImage, path) -> None:
    raster = np.rint(image.pixels * 255.0).astype(np.uint8)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())
    os.replace(tmp, path)
