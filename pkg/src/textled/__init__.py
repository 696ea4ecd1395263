"""textled: label-error detection for scene-text image/label pairs.

Submodules:
  charset     character inventory, label encoding, tokenization
  manifest    dataset manifest TSV I/O
  images      PGM image I/O
  glyphs      embedded bitmap font and variant rendering
  similarity  glyph-similarity substitution transition matrix
  corruption  sequence-label corruption engine and benchmark builder
  autodiff    reverse-mode autodiff tensor core
  optim       AdamW and EMA shadow parameters
  model       the image-text matching network and losses
  training    training loop and checkpoints
  evaluation  detection metrics, error-type classification, ranked removal
  toydata     toy dataset generation
  cli         command-line interface
"""

__version__ = "0.1.0"
