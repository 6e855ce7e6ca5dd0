"""Nested-lattice multi-level uniform scalar quantization.

The ladder of step sizes doubles at each level, so the bins of level k+1
are exact unions of adjacent bin pairs at level k.  Bin convention is
[n*step, (n+1)*step) with reconstruction point (n + 0.5) * step; symbols
are the lattice indices n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LadderError, NumericError

# int32 symbol storage; quantize() rejects inputs that could overflow it.
_SYMBOL_LIMIT = 2**31 - 1


@dataclass(frozen=True)
class QuantLadder:
    """Family of uniform quantizers with strictly doubling steps."""

    base_step: float
    n_levels: int

    def __post_init__(self):
        if not (self.base_step > 0.0 and np.isfinite(self.base_step)):
            raise LadderError(f"base_step must be positive, got {self.base_step}")
        if self.n_levels < 1:
            raise LadderError(f"n_levels must be >= 1, got {self.n_levels}")

    def step(self, level: int) -> float:
        """Step size at a ladder level, computed as base_step * 2**level."""
        self.check_level(level)
        return self.base_step * (2.0 ** level)

    def check_level(self, level: int) -> None:
        if not 0 <= level < self.n_levels:
            raise LadderError(
                f"level {level} outside ladder [0, {self.n_levels})"
            )


@dataclass(frozen=True)
class SymbolTensor:
    """Integer lattice indices for one latent tensor at one ladder level."""

    symbols: np.ndarray  # int32, shape (C, H, W)
    level: int
    ladder: QuantLadder

    def __post_init__(self):
        self.ladder.check_level(self.level)
        if self.symbols.dtype != np.int32:
            raise NumericError(f"symbols must be int32, got {self.symbols.dtype}")

    @property
    def step(self) -> float:
        return self.ladder.step(self.level)


def quantize(y: np.ndarray, ladder: QuantLadder, level: int) -> SymbolTensor:
    """Map each entry to the lattice index n with y in [n*step, (n+1)*step)."""
    ladder.check_level(level)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NumericError("quantize: non-finite latent entries")
    step = ladder.step(level)
    n = np.floor(y / step)
    if np.any(np.abs(n) > _SYMBOL_LIMIT):
        raise NumericError(
            "quantize: lattice index exceeds int32 range; "
            "latents are out of the supported dynamic range"
        )
    return SymbolTensor(n.astype(np.int32), level, ladder)


def dequantize(s: SymbolTensor) -> np.ndarray:
    """Reconstruction points (n + 0.5) * step for every symbol."""
    return (s.symbols.astype(np.float64) + 0.5) * s.step


def coarsen(s: SymbolTensor, levels: int) -> SymbolTensor:
    """Re-index symbols at a coarser level without touching the latents.

    Floor division toward -inf halves the index per level, which is exactly
    the merge of adjacent bin pairs, so the result equals quantizing the
    original latents at level + levels.
    """
    if levels < 1:
        raise LadderError(f"coarsen: levels must be >= 1, got {levels}")
    target = s.level + levels
    s.ladder.check_level(target)  # raises on level overflow
    merged = np.floor_divide(s.symbols, np.int32(2**levels))
    return SymbolTensor(merged.astype(np.int32), target, s.ladder)


def symbol_histogram(symbols: np.ndarray) -> dict[int, int]:
    """Exact integer counts per symbol value."""
    values, counts = np.unique(np.asarray(symbols), return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def _histogram_entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def empirical_entropy(s: SymbolTensor, per_channel: bool = False) -> float:
    """Shannon entropy (bits/symbol) of the empirical symbol histogram.

    With per_channel=True each latent channel gets its own histogram
    (matching a per-channel alphabet) and the result is the count-weighted
    mean of the per-channel entropies.
    """
    symbols = s.symbols
    if symbols.size == 0:
        raise NumericError("empirical_entropy: empty symbol tensor")
    if not per_channel:
        _, counts = np.unique(symbols, return_counts=True)
        return _histogram_entropy_bits(counts)
    total_bits = 0.0
    for c in range(symbols.shape[0]):
        _, counts = np.unique(symbols[c], return_counts=True)
        total_bits += _histogram_entropy_bits(counts) * symbols[c].size
    return total_bits / symbols.size
