"""Glyph-similarity noise transition matrix.

Pipeline: render (or load) per-symbol feature-vector variants, take the max
cosine similarity over all variant pairs, then convert each row to a
substitution distribution with a low-temperature softmax (diagonal excluded).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .charset import CharSet
from .errors import (
    DegenerateGlyph,
    DimensionMismatch,
    InvalidTemperature,
    MissingSymbol,
    ParseError,
)
from .glyphs import RenderConfig, render_glyph_variants
from .images import GlyphImage

DEFAULT_TAU = 0.02
FEATURE_SIZE = 16  # raster features are a 16x16 downsample


@dataclass(frozen=True)
class GlyphVariantSet:
    """Per-symbol lists of unit-norm feature vectors sharing one dimension."""

    charset: CharSet
    vectors: dict  # symbol -> list of 1-D np.ndarray

    def __post_init__(self):
        dims = {v.shape[0] for vs in self.vectors.values() for v in vs}
        if len(dims) != 1:
            raise DimensionMismatch(f"inconsistent feature dimensions: {sorted(dims)}")
        for sym in self.charset.symbols:
            if not self.vectors.get(sym):
                raise MissingSymbol(f"no feature variants for symbol {sym!r}")

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values()))[0].shape[0]


@dataclass(frozen=True)
class SimilarityMatrix:
    symbols: tuple
    values: np.ndarray  # (K, K), entries in [-1, 1], symmetric


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic substitution matrix with zero diagonal."""

    symbols: tuple
    probs: np.ndarray  # (K, K)
    tau: float
    _cdfs: np.ndarray = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = self.probs
        if np.any(p < 0) or np.any(np.diag(p) != 0.0):
            raise ValueError("transition matrix needs non-negative entries and zero diagonal")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("transition matrix rows must sum to 1")
        object.__setattr__(self, "_cdfs", np.cumsum(p, axis=1))
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def row(self, symbol: str) -> np.ndarray:
        return self.probs[self._index[symbol]]

    def sample_replacement(self, original: str, rng: np.random.Generator) -> str:
        """Inverse-CDF draw over the row, in charset order; never the original."""
        i = self._index[original]
        j = int(np.searchsorted(self._cdfs[i], rng.random(), side="right"))
        j = min(j, len(self.symbols) - 1)
        if j == i:  # cdf rounding can land on the zero-probability diagonal
            j = (i + 1) % len(self.symbols)
        return self.symbols[j]


def raster_features(image: GlyphImage) -> np.ndarray:
    """Mean-centered, unit-norm flattening of a 16x16 area-average downsample."""
    p = image.pixels
    h, w = p.shape
    ys = np.linspace(0, h, FEATURE_SIZE + 1).astype(int)
    xs = np.linspace(0, w, FEATURE_SIZE + 1).astype(int)
    pooled = np.empty((FEATURE_SIZE, FEATURE_SIZE))
    for r in range(FEATURE_SIZE):
        for c in range(FEATURE_SIZE):
            block = p[ys[r]: max(ys[r + 1], ys[r] + 1), xs[c]: max(xs[c + 1], xs[c] + 1)]
            pooled[r, c] = block.mean()
    flat = pooled.ravel()
    flat = flat - flat.mean()
    norm = np.linalg.norm(flat)
    if norm == 0.0:
        raise DegenerateGlyph("constant image has no usable features")
    return flat / norm


def builtin_variant_set(charset: CharSet, config: RenderConfig = RenderConfig()) -> GlyphVariantSet:
    """Feature variants from the embedded bitmap font."""
    vectors = {
        sym: [raster_features(img) for img in render_glyph_variants(sym, config)]
        for sym in charset.symbols
    }
    return GlyphVariantSet(charset, vectors)


def load_external_features(path, charset: CharSet) -> GlyphVariantSet:
    """TSV rows `symbol \\t v1 ... vd`; multiple rows per symbol are variants."""
    vectors = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise ParseError(f"{path}:{lineno}: expected symbol and feature values")
            sym = fields[0]
            try:
                vec = np.array([float(x) for x in fields[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature value") from None
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DimensionMismatch(
                    f"{path}:{lineno}: dimension {vec.shape[0]} != {dim}"
                )
            norm = np.linalg.norm(vec)
            if not np.isfinite(vec).all() or norm == 0.0:
                raise ParseError(f"{path}:{lineno}: feature vector must be finite with non-zero norm")
            vectors.setdefault(sym, []).append(vec)
    for sym in charset.symbols:
        if sym not in vectors:
            raise MissingSymbol(f"feature file {path} missing symbol {sym!r}")
    return GlyphVariantSet(charset, {s: vectors[s] for s in charset.symbols})


def pairwise_similarity(variants: GlyphVariantSet) -> SimilarityMatrix:
    """Max cosine similarity over all variant pairs of each symbol pair."""
    symbols = variants.charset.symbols
    stacked = []
    owner = []
    for si, sym in enumerate(symbols):
        for v in variants.vectors[sym]:
            stacked.append(v / np.linalg.norm(v))
            owner.append(si)
    mat = np.array(stacked)
    owner = np.array(owner)
    cosines = mat @ mat.T
    k = len(symbols)
    values = np.full((k, k), -1.0)
    for a in range(k):
        rows = cosines[owner == a]
        for b in range(k):
            values[a, b] = rows[:, owner == b].max()
    values = np.maximum(values, values.T)  # exact symmetry
    return SimilarityMatrix(tuple(symbols), values)


def build_transition_matrix(sim: SimilarityMatrix, tau: float = DEFAULT_TAU) -> TransitionMatrix:
    """Per-row softmax of S/tau over the off-diagonal entries."""
    if tau <= 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    k = len(sim.symbols)
    probs = np.zeros((k, k))
    for a in range(k):
        others = np.arange(k) != a
        logits = sim.values[a, others] / tau
        logits -= logits.max()
        exp = np.exp(logits)
        probs[a, others] = exp / exp.sum()
    return TransitionMatrix(sim.symbols, probs, tau)


def save_transition_matrix(matrix: TransitionMatrix, path) -> None:
    """TSV: `# tau=...` comment, symbol header row, one data row per source symbol."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(f"# tau={float(matrix.tau)!r}\n")
        fh.write("\t" + "\t".join(matrix.symbols) + "\n")
        for sym, row in zip(matrix.symbols, matrix.probs):
            fh.write(sym + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
    os.replace(tmp, path)


def load_transition_matrix(path) -> TransitionMatrix:
    tau = DEFAULT_TAU
    symbols = None
    rows = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                text = line.lstrip("#").strip()
                if text.startswith("tau="):
                    tau = float(text[len("tau="):])
                continue
            fields = line.split("\t")
            if symbols is None:
                if fields[0] != "":
                    raise ParseError(f"{path}:{lineno}: header row must start with an empty cell")
                symbols = tuple(fields[1:])
                continue
            if len(fields) != len(symbols) + 1:
                raise ParseError(f"{path}:{lineno}: expected {len(symbols) + 1} fields")
            try:
                rows[fields[0]] = np.array([float(x) for x in fields[1:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric probability") from None
    if symbols is None:
        raise ParseError(f"{path}: missing header row")
    missing = [s for s in symbols if s not in rows]
    if missing:
        raise MissingSymbol(f"{path}: missing rows for {missing}")
    probs = np.array([rows[s] for s in symbols])
    return TransitionMatrix(symbols, probs, tau)


def default_transition_matrix(charset: CharSet, tau: float = DEFAULT_TAU) -> TransitionMatrix:
    return build_transition_matrix(pairwise_similarity(builtin_variant_set(charset)), tau)
