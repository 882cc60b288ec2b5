"""Pixel-superpixel contrastive learning with pseudo-label correction for HSI clustering."""

__version__ = "0.1.0"
