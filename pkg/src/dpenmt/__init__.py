"""Transformer translation with dynamic position encoding, on numpy."""

__version__ = "0.1.0"
