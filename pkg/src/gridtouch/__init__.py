"""gridtouch: attribute-conditioned diffusion retouching through an affine
bilateral grid, plus the scoring, training, evaluation and serving machinery
around it."""

__version__ = "0.1.0"
