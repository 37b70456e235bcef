"""Sequence distances by entropic optimal transport over fused semantic and positional costs."""

__version__ = "0.1.0"
