"""Byte-oriented rANS entropy coder over fixed-point PMF tables.

Construction: 32-bit state kept in [2^23, 2^31), 16-bit probability
precision, 8-bit renormalization.  Symbols are encoded in reverse raster
order (channel-major, then row, then column) so the decoder reads them
forward.  Integer arithmetic only, so output bytes are identical across
platforms.

Serialized payload layout (frozen):
    final state, big-endian u32 | renormalization bytes in decode order
    | CRC-32 of everything before it, big-endian u32
"""

from __future__ import annotations

import zlib
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .entropy_model import TABLE_PRECISION, PmfTableSet
from .errors import CoderRangeError, ConfigurationError, CorruptionError, TruncationError
from .quantizer import SymbolTensor

_STATE_LOW = 1 << 23           # lower bound of the normalized state interval
_PROB_MASK = (1 << TABLE_PRECISION) - 1
_RENORM_FACTOR = (_STATE_LOW >> TABLE_PRECISION) << 8


@dataclass(frozen=True)
class Payload:
    """Coded byte sequence plus its integrity checksum."""

    data: bytes        # final state (4B, big-endian) + renorm bytes
    symbol_count: int
    checksum: int      # CRC-32 of data

    def serialize(self) -> bytes:
        return self.data + self.checksum.to_bytes(4, "big")

    @staticmethod
    def deserialize(raw: bytes, symbol_count: int) -> "Payload":
        if len(raw) < 8:
            raise TruncationError(f"payload too short: {len(raw)} bytes")
        data, crc = raw[:-4], int.from_bytes(raw[-4:], "big")
        if zlib.crc32(data) != crc:
            raise CorruptionError("payload checksum mismatch")
        return Payload(data=data, symbol_count=symbol_count, checksum=crc)

    @property
    def bit_length(self) -> int:
        """Bits in the serialized payload, checksum included."""
        return 8 * (len(self.data) + 4)


def _check_tables(s_shape: tuple, level: int, tables: PmfTableSet) -> None:
    if len(tables) != s_shape[0]:
        raise ConfigurationError(
            f"{len(tables)} tables for {s_shape[0]} latent channels"
        )
    if tables.level != level:
        raise ConfigurationError(
            f"tables built for level {tables.level}, symbols at level {level}"
        )


def encode_symbols(s: SymbolTensor, tables: PmfTableSet) -> Payload:
    """Losslessly encode a symbol tensor against its channel tables."""
    sym = s.symbols
    _check_tables(sym.shape, s.level, tables)
    n_channels = sym.shape[0]

    state = _STATE_LOW
    emitted = bytearray()
    append = emitted.append
    # reverse raster order; per channel the table is fixed
    for c in range(n_channels - 1, -1, -1):
        table = tables[c]
        if sym[c].size == 0:
            continue
        lo, hi = table.n_min, table.n_max
        cmin, cmax = int(sym[c].min()), int(sym[c].max())
        if cmin < lo or cmax > hi:
            raise CoderRangeError(
                f"channel {c}: symbol outside table range [{lo}, {hi}]"
            )
        cum = table.cum.tolist()
        freq = table.freq.tolist()
        flat = sym[c].ravel().tolist()
        for n in reversed(flat):
            i = n - lo
            f = freq[i]
            start = cum[i]
            while state >= _RENORM_FACTOR * f:
                append(state & 0xFF)
                state >>= 8
            state = ((state // f) << TABLE_PRECISION) + (state % f) + start
    data = state.to_bytes(4, "big") + bytes(reversed(emitted))
    return Payload(data=data, symbol_count=int(sym.size), checksum=zlib.crc32(data))


def decode_symbols(payload: Payload, tables: PmfTableSet, shape: tuple) -> SymbolTensor:
    """Exactly invert encode_symbols; never returns a partial tensor."""
    _check_tables(shape, tables.level, tables)
    count = int(np.prod(shape))
    if count != payload.symbol_count:
        raise ConfigurationError(
            f"shape {shape} has {count} symbols, payload carries {payload.symbol_count}"
        )
    data = payload.data
    if zlib.crc32(data) != payload.checksum:
        raise CorruptionError("payload checksum mismatch")
    if len(data) < 4:
        raise TruncationError("payload shorter than the 4-byte state")

    state = int.from_bytes(data[:4], "big")
    pos = 4
    end = len(data)
    out = np.empty(count, dtype=np.int32)
    k = 0
    per_channel = shape[1] * shape[2]
    for c in range(shape[0]):
        table = tables[c]
        lo = table.n_min
        cum = table.cum.tolist()
        freq = table.freq.tolist()
        for _ in range(per_channel):
            cf = state & _PROB_MASK
            i = bisect_right(cum, cf) - 1
            state = freq[i] * (state >> TABLE_PRECISION) + cf - cum[i]
            while state < _STATE_LOW:
                if pos >= end:
                    raise TruncationError("payload exhausted before all symbols")
                state = (state << 8) | data[pos]
                pos += 1
            out[k] = i + lo
            k += 1
    if pos != end or state != _STATE_LOW:
        raise CorruptionError("payload has trailing or inconsistent data")
    return SymbolTensor(out.reshape(shape), tables.level, tables.ladder)
