"""End-to-end codec: framing, capacity-adaptive level selection, metrics.

A CodecModel bundles trained transforms, the entropy model, the shared
normalization, and lazily built coder tables per ladder level.  Bitstreams
frame one channel instance each ("CSIB" header + rANS payload).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelTensor, Scale, nmse, nmse_db
from .entropy_model import (
    DEFAULT_TAIL_MASS,
    EntropyModelParams,
    PmfTableSet,
    build_pmf_tables,
    model_cross_entropy,
)
from .errors import CapacityError, ConfigurationError, DataFormatError, TruncationError
from .quantizer import QuantLadder, SymbolTensor, dequantize, quantize
from .rans import Payload, decode_symbols, encode_symbols
from .transforms import TransformParams, analyze, count_parameters, synthesize
from .weights_io import load_weights, save_weights

BITSTREAM_MAGIC = b"CSIB"
BITSTREAM_VERSION = 1
_STREAM_HEADER = struct.Struct("<4sBBHHHddI")
HEADER_BYTES = _STREAM_HEADER.size  # 32

# select_level safety terms on top of mean model cross-entropy: multiplicative
# margin for coder/table overhead plus a per-symbol allowance for table KL
_ESTIMATE_MARGIN = 1.01
_TABLE_KL_ALLOWANCE_BITS = 2e-3


@dataclass(frozen=True)
class RateBudget:
    """Feedback capacity in bits per feedback instance."""

    capacity_bits: float

    def __post_init__(self):
        if not self.capacity_bits > 0:
            raise ConfigurationError(f"capacity must be positive, got {self.capacity_bits}")


@dataclass
class CodecModel:
    """Everything the encoder and decoder share."""

    params: TransformParams
    entropy: EntropyModelParams
    scale: Scale
    lambda_: float
    tail_mass: float = DEFAULT_TAIL_MASS
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def ladder(self) -> QuantLadder:
        return self.entropy.ladder

    def tables(self, level: int) -> PmfTableSet:
        if level not in self._tables:
            self._tables[level] = build_pmf_tables(self.entropy, level, self.tail_mass)
        return self._tables[level]

    def parameter_count(self) -> int:
        return count_parameters(self.params, entropy_channels=self.entropy.n_channels)

    def save(self, path) -> None:
        save_weights(path, self.params, self.entropy, self.scale, self.lambda_)

    @staticmethod
    def load(path) -> "CodecModel":
        params, entropy, scale, lambda_ = load_weights(path)
        return CodecModel(params=params, entropy=entropy, scale=scale, lambda_=lambda_)


@dataclass
class Bitstream:
    """One framed feedback instance."""

    level: int
    latent_shape: tuple
    scale: Scale
    payload: Payload
    fold_events: int = 0  # encode-time diagnostics, not serialized

    def serialize(self) -> bytes:
        c, h, w = self.latent_shape
        body = self.payload.serialize()
        header = _STREAM_HEADER.pack(
            BITSTREAM_MAGIC, BITSTREAM_VERSION, self.level, c, h, w,
            self.scale.offset, self.scale.gain, len(body),
        )
        return header + body

    @property
    def bit_length(self) -> int:
        """l(s): total serialized size in bits, header included."""
        return 8 * (HEADER_BYTES + len(self.payload.serialize()))

    @staticmethod
    def deserialize(raw: bytes) -> "Bitstream":
        if len(raw) < HEADER_BYTES:
            raise TruncationError("bitstream shorter than its header")
        magic, version, level, c, h, w, offset, gain, payload_len = _STREAM_HEADER.unpack_from(raw)
        if magic != BITSTREAM_MAGIC:
            raise DataFormatError(f"bad magic {magic!r}, expected {BITSTREAM_MAGIC!r}")
        if version != BITSTREAM_VERSION:
            raise DataFormatError(f"unsupported bitstream version {version}")
        if len(raw) != HEADER_BYTES + payload_len:
            raise TruncationError(
                f"bitstream is {len(raw)} bytes, header implies {HEADER_BYTES + payload_len}"
            )
        payload = Payload.deserialize(raw[HEADER_BYTES:], symbol_count=c * h * w)
        return Bitstream(
            level=level, latent_shape=(c, h, w), scale=Scale(offset, gain), payload=payload
        )


def _encode_latent(y: np.ndarray, scale: Scale, model: CodecModel, level: int) -> Bitstream:
    s = quantize(y, model.ladder, level)
    tables = model.tables(level)
    folded = np.empty_like(s.symbols)
    fold_events = 0
    for c in range(s.symbols.shape[0]):
        folded[c] = tables[c].fold(s.symbols[c])
        fold_events += int(np.count_nonzero(folded[c] != s.symbols[c]))
    s = SymbolTensor(folded, level, model.ladder)
    payload = encode_symbols(s, tables)
    return Bitstream(
        level=level, latent_shape=model.params.latent_shape, scale=scale,
        payload=payload, fold_events=fold_events,
    )


def encode_csi(t: ChannelTensor, model: CodecModel, level: int) -> Bitstream:
    """analyze -> quantize -> entropy-encode -> frame."""
    model.ladder.check_level(level)
    y = analyze(t, model.params)
    return _encode_latent(y, t.scale, model, level)


def decode_csi(stream: Bitstream, model: CodecModel) -> ChannelTensor:
    """entropy-decode -> dequantize -> synthesize."""
    if not 0 <= stream.level < model.ladder.n_levels:
        raise DataFormatError(
            f"stream level {stream.level} outside ladder of {model.ladder.n_levels} levels"
        )
    if tuple(stream.latent_shape) != tuple(model.params.latent_shape):
        raise ConfigurationError(
            f"stream latent {stream.latent_shape} does not match model "
            f"{model.params.latent_shape}"
        )
    tables = model.tables(stream.level)
    symbols = decode_symbols(stream.payload, tables, stream.latent_shape)
    y_hat = dequantize(symbols)
    return synthesize(y_hat, model.params, stream.scale)


def select_level(expected_bits_per_level: list, budget: RateBudget) -> int:
    """Smallest (finest) level whose expected bits fit the capacity."""
    if not expected_bits_per_level:
        raise ConfigurationError("expected_bits_per_level is empty")
    bits = [float(b) for b in expected_bits_per_level]
    for a, b in zip(bits, bits[1:]):
        if b > a + 1e-9:
            raise ConfigurationError("expected bits must be nonincreasing across levels")
    for k, b in enumerate(bits):
        if b <= budget.capacity_bits:
            return k
    raise CapacityError(
        f"coarsest level needs {bits[-1]:.1f} bits, capacity is {budget.capacity_bits:.1f}"
    )


def expected_bits_per_level(model: CodecModel, calibration: np.ndarray) -> list:
    """Per-level mean serialized-size estimate from model cross-entropy on a
    calibration split (no encoding), with framing and coder overhead added."""
    calibration = np.asarray(calibration, dtype=np.float64)
    k_levels = model.ladder.n_levels
    n_symbols = int(np.prod(model.params.latent_shape))
    ce_sums = np.zeros(k_levels)
    for planes in calibration:
        t = ChannelTensor(planes=planes, scale=model.scale)
        y = analyze(t, model.params)
        for k in range(k_levels):
            ce_sums[k] += model_cross_entropy(model.entropy, quantize(y, model.ladder, k))
    overhead = 8 * HEADER_BYTES + 64  # header + final state + CRC
    estimates = (
        _ESTIMATE_MARGIN * ce_sums / calibration.shape[0]
        + _TABLE_KL_ALLOWANCE_BITS * n_symbols
        + overhead
    )
    return [float(e) for e in estimates]


def bits_per_entry(streams: list, n_delay: int, n_tx: int) -> float:
    """Mean serialized stream length in bits over channel entries."""
    if not streams:
        raise ConfigurationError("bits_per_entry needs at least one stream")
    total = sum(s.bit_length for s in streams)
    return total / (len(streams) * n_delay * n_tx)


@dataclass(frozen=True)
class RdPoint:
    model_id: str
    lambda_: float
    level: int
    bits_per_entry: float
    nmse: float
    nmse_db: float


CSV_COLUMNS = ("model_id", "lambda", "level", "bits_per_entry", "nmse", "nmse_db")


def sweep_model(model_id: str, model: CodecModel, test_planes: np.ndarray) -> list:
    """RD points for one model at every ladder level over a test set.

    The latent is analyzed once per sample; distortion is measured on the
    dequantized in-process path, which the lossless-coder tests pin to be
    identical to decoding the bitstream.
    """
    test_planes = np.asarray(test_planes, dtype=np.float64)
    _, n_delay, n_tx = model.params.input_shape
    points = []
    k_levels = model.ladder.n_levels
    bit_totals = np.zeros(k_levels)
    nmse_totals = np.zeros(k_levels)
    for planes in test_planes:
        t = ChannelTensor(planes=planes, scale=model.scale)
        y = analyze(t, model.params)
        for k in range(k_levels):
            stream = _encode_latent(y, t.scale, model, k)
            bit_totals[k] += stream.bit_length
            symbols = decode_symbols(stream.payload, model.tables(k), stream.latent_shape)
            t_hat = synthesize(dequantize(symbols), model.params, t.scale)
            nmse_totals[k] += nmse(t, t_hat)
    n = test_planes.shape[0]
    for k in range(k_levels):
        mean_nmse = nmse_totals[k] / n
        points.append(
            RdPoint(
                model_id=model_id,
                lambda_=model.lambda_,
                level=k,
                bits_per_entry=bit_totals[k] / (n * n_delay * n_tx),
                nmse=mean_nmse,
                nmse_db=nmse_db(mean_nmse),
            )
        )
    return points


def rd_sweep(models: list, test_planes: np.ndarray, csv_path=None) -> list:
    """Sweep a list of (model_id, CodecModel) and optionally emit the CSV.

    Rows are sorted by bits_per_entry; columns are frozen as CSV_COLUMNS.
    """
    points = []
    for model_id, model in models:
        points.extend(sweep_model(model_id, model, test_planes))
    points.sort(key=lambda p: (p.bits_per_entry, p.model_id, p.level))
    if csv_path is not None:
        write_rd_csv(points, csv_path)
    return points


def write_rd_csv(points: list, csv_path) -> None:
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for p in points:
            writer.writerow(
                [p.model_id, repr(p.lambda_), p.level,
                 f"{p.bits_per_entry:.6f}", f"{p.nmse:.9f}", f"{p.nmse_db:.4f}"]
            )
