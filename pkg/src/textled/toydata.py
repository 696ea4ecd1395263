"""Toy dataset generation: random labels rendered with the embedded bitmap
font into PGM images, plus the matching manifest."""

import os
from dataclasses import dataclass

import numpy as np

from .charset import N_MAX, CharSet
from .corruption import sample_rng
from .glyphs import glyph_bitmap, scale_nearest
from .images import GlyphImage, write_pgm
from .manifest import ManifestEntry, write_manifest

JITTER_SIGMA = 0.05


@dataclass(frozen=True)
class ToyDatasetSpec:
    count: int
    min_len: int = 1
    max_len: int = 10
    jitter: bool = False
    charset: CharSet = CharSet.default36()

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len <= N_MAX:
            raise ValueError(f"length range [{self.min_len}, {self.max_len}] invalid")


def render_label_image(text: str, height: int, width: int) -> np.ndarray:
    """White-on-black rendering; one slot per character, scaled to fill the
    full width left to right."""
    canvas = np.zeros((height, width))
    n = len(text)
    slot = width / n
    glyph_h = max(1, int(round(height * 0.75)))
    glyph_w = max(1, min(int(round(slot * 0.8)), glyph_h))
    top = (height - glyph_h) // 2
    for i, ch in enumerate(text):
        glyph = scale_nearest(glyph_bitmap(ch), glyph_h, glyph_w)
        left = int(round(i * slot + (slot - glyph_w) / 2))
        left = min(max(left, 0), width - glyph_w)
        canvas[top : top + glyph_h, left : left + glyph_w] = np.maximum(
            canvas[top : top + glyph_h, left : left + glyph_w], glyph
        )
    return canvas


def _jitter(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    dy, dx = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
    shifted = np.zeros_like(pixels)
    h, w = pixels.shape
    src = pixels[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
    shifted[max(0, dy) : h - max(0, -dy), max(0, dx) : w - max(0, -dx)] = src
    noisy = shifted + rng.normal(0.0, JITTER_SIGMA, size=pixels.shape)
    return np.clip(noisy, 0.0, 1.0)


def gen_toy_dataset(spec: ToyDatasetSpec, out_dir, seed: int,
                    image_height: int = 32, image_width: int = 64):
    """Write `spec.count` PGM images plus manifest.tsv; fully deterministic in
    the seed. Returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(spec.count):
        rng = sample_rng(seed, "toy", i)
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        text = "".join(
            spec.charset.symbols[int(rng.integers(0, spec.charset.size))] for _ in range(length)
        )
        pixels = render_label_image(text, image_height, image_width)
        if spec.jitter:
            pixels = _jitter(pixels, rng)
        name = f"s{i:05d}.pgm"
        write_pgm(GlyphImage(pixels), os.path.join(out_dir, name))
        entries.append(ManifestEntry(f"s{i:05d}", name, text))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(entries, manifest_path)
    return manifest_path
