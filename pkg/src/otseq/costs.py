"""Semantic, positional and fused cost matrices between segment sequences.

A segment sequence is an ``(M, D)`` float array: row ``m`` is the embedding of
the m-th segment.  Positions are 1-based inside the positional formulas so that
the relative position ``m / M`` lies in ``(0, 1]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class CostError(ValueError):
    pass


class PositionalVariant(str, enum.Enum):
    PAPER_FORM = "paper_form"
    UNIFORM_PE = "uniform_pe"
    SINUSOID_PE = "sinusoid_pe"


@dataclass(frozen=True)
class PositionalConfig:
    sigma: float = 1.2
    variant: PositionalVariant = PositionalVariant.PAPER_FORM
    # encoding width for the *_PE variants; None means "use the embedding dim"
    pe_dimension: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise CostError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "variant", PositionalVariant(self.variant))
        if self.pe_dimension is not None and self.pe_dimension < 1:
            raise CostError("pe_dimension must be >= 1")


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.4

    def __post_init__(self):
        if not self.alpha >= 0:
            raise CostError(f"alpha must be nonnegative, got {self.alpha}")


def as_sequence(x) -> np.ndarray:
    """Validate and return a segment sequence as a 2-d float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise CostError(f"a segment sequence must be a non-empty (M, D) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise CostError("segment sequence has non-finite entries")
    return a


def semantic_cost(a, b) -> np.ndarray:
    """Pairwise Euclidean distances ``C[p, q] = ||a[p] - b[q]||``."""
    a, b = as_sequence(a), as_sequence(b)
    if a.shape[1] != b.shape[1]:
        raise CostError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("pqd,pqd->pq", diff, diff))


def uniform_encoding(m: int, dim: int) -> np.ndarray:
    """Encoding with every coordinate of row ``i`` equal to ``i / m`` (1-based)."""
    pos = np.arange(1, m + 1, dtype=float) / m
    return np.repeat(pos[:, None], dim, axis=1)


def sinusoid_encoding(m: int, dim: int) -> np.ndarray:
    """Transformer-style sinusoid encoding, positions and channels 1-based.

    Even channels use ``sin(m / 10000^(d/D))`` and odd channels
    ``cos(m / 10000^((d-1)/D))``.
    """
    pos = np.arange(1, m + 1, dtype=float)[:, None]
    d = np.arange(1, dim + 1)
    even = d % 2 == 0
    expo = np.where(even, d, d - 1) / dim
    angle = pos / np.power(10000.0, expo)[None, :]
    return np.where(even[None, :], np.sin(angle), np.cos(angle))


def _encoding_distance(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    diff = pa[:, None, :] - pb[None, :, :]
    return np.sqrt(np.einsum("pqd,pqd->pq", diff, diff))


def positional_cost(m1: int, m2: int, cfg: PositionalConfig | None = None,
                    embedding_dim: int | None = None) -> np.ndarray:
    """Cost between segment positions of an ``m1``- and an ``m2``-long sequence.

    ``PAPER_FORM`` grows with the squared gap of relative positions, each index
    normalized by its own sequence length.  The encoding variants take the
    Euclidean distance between positional encodings of width ``pe_dimension``
    (falling back to ``embedding_dim``, then 1).
    """
    cfg = cfg or PositionalConfig()
    if m1 < 1 or m2 < 1:
        raise CostError("sequence lengths must be >= 1")
    if cfg.variant is PositionalVariant.PAPER_FORM:
        rel_a = np.arange(1, m1 + 1) / m1
        rel_b = np.arange(1, m2 + 1) / m2
        gap2 = (rel_a[:, None] - rel_b[None, :]) ** 2
        return np.exp(-(1.0 / cfg.sigma**2) / (gap2 + 1.0))

    dim = cfg.pe_dimension or embedding_dim or 1
    if cfg.variant is PositionalVariant.UNIFORM_PE:
        return _encoding_distance(uniform_encoding(m1, dim), uniform_encoding(m2, dim))
    # sinusoid encodings use absolute positions, so unequal lengths just truncate
    enc = sinusoid_encoding(max(m1, m2), dim)
    return _encoding_distance(enc[:m1], enc[:m2])


def fused_cost(semantic, positional, cfg: FusionConfig | None = None) -> np.ndarray:
    cfg = cfg or FusionConfig()
    se = np.asarray(semantic, dtype=float)
    po = np.asarray(positional, dtype=float)
    if se.shape != po.shape:
        raise CostError(f"cost shapes differ: {se.shape} vs {po.shape}")
    if cfg.alpha == 0:
        return se.copy()
    return se + cfg.alpha * po

