"""HTTP scoring service: semantic image-vs-prompt losses with exact pixel
gradients, split at the rendered-image boundary."""

__version__ = "0.1.0"
