"""Piece-wise affine perception abstractions with certified safe radii."""

__version__ = "0.1.0"
