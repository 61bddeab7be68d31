"""Generative machine-learning toolkit for planar connecting-nodes antennas."""

__version__ = "0.1.0"
