"""Toy CLIP-style dual encoder with entropy-weighted gradient saliency."""

__version__ = "0.1.0"
