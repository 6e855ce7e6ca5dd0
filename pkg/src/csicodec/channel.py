"""Synthetic MIMO-OFDM channels, delay-domain preprocessing, and metrics.

The frequency-domain channel (subcarriers x tx antennas) is sparse in the
delay domain, so preprocessing takes a unitary inverse DFT over subcarriers,
keeps the first n_delay taps, splits real/imag planes, and applies a shared
affine normalization into [-1, 1].  All math here is double precision and
the DFT convention is unitary, so Parseval checks hold to roundoff.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataFormatError, DimensionError, NumericError

TENSOR_MAGIC = b"CSIT"
TENSOR_VERSION = 1
_TENSOR_HEADER = struct.Struct("<4sBHHIdd")


@dataclass(frozen=True)
class ChannelConfig:
    """Generator and preprocessing dimensions."""

    n_tx: int
    n_subcarriers: int
    n_delay: int
    seed: int
    n_paths: int
    decay: float = 0.0

    def __post_init__(self):
        if self.n_tx < 1:
            raise ConfigurationError(f"n_tx must be positive, got {self.n_tx}")
        if self.n_subcarriers < 1 or self.n_subcarriers & (self.n_subcarriers - 1):
            raise ConfigurationError(
                f"n_subcarriers must be a positive power of two, got {self.n_subcarriers}"
            )
        if not 1 <= self.n_delay <= self.n_subcarriers:
            raise ConfigurationError(
                f"n_delay must be in [1, n_subcarriers], got {self.n_delay}"
            )
        if not 1 <= self.n_paths <= self.n_delay:
            raise ConfigurationError(
                f"n_paths must be in [1, n_delay], got {self.n_paths}"
            )
        if self.decay < 0:
            raise ConfigurationError(f"decay must be nonnegative, got {self.decay}")


@dataclass(frozen=True)
class Scale:
    """Affine normalization record: normalized = (x - offset) * gain."""

    offset: float
    gain: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset) * self.gain

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x / self.gain + self.offset


@dataclass(frozen=True)
class ChannelTensor:
    """Preprocessed channel: real/imag planes of the truncated delay response."""

    planes: np.ndarray  # (2, n_delay, n_tx) float64, normalized into [-1, 1]
    scale: Scale

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 2:
            raise DimensionError(f"planes must be (2, n_delay, n_tx), got {planes.shape}")
        if not np.all(np.isfinite(planes)):
            raise NumericError("channel tensor has non-finite entries")
        object.__setattr__(self, "planes", planes)

    @property
    def shape(self) -> tuple:
        return self.planes.shape

    def denormalized(self) -> np.ndarray:
        return self.scale.invert(self.planes)

    def to_complex_delay(self) -> np.ndarray:
        d = self.denormalized()
        return d[0] + 1j * d[1]


def _sample_delay_taps(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Sparse delay-domain response (n_delay, n_tx), complex128.

    Each column carries n_paths complex Gaussian taps on the first n_paths
    delays (a decaying power-delay profile shared by all antennas), with tap
    variance proportional to exp(-decay * delay) and scaled so the expected
    squared Frobenius norm per column is n_subcarriers.
    """
    g = np.zeros((cfg.n_delay, cfg.n_tx), dtype=np.complex128)
    delays = np.arange(cfg.n_paths)
    w = np.exp(-cfg.decay * delays.astype(np.float64))
    var = cfg.n_subcarriers * w / w.sum()
    gauss = rng.standard_normal((cfg.n_paths, cfg.n_tx, 2))
    g[delays] = np.sqrt(var[:, None] / 2.0) * (gauss[..., 0] + 1j * gauss[..., 1])
    return g


def generate_channel(cfg: ChannelConfig, index: int = 0) -> np.ndarray:
    """Frequency-domain channel (n_subcarriers, n_tx), deterministic in
    (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    g = np.zeros((cfg.n_subcarriers, cfg.n_tx), dtype=np.complex128)
    g[: cfg.n_delay] = _sample_delay_taps(cfg, rng)
    return np.fft.fft(g, axis=0, norm="ortho")


def preprocess(h_freq: np.ndarray, cfg: ChannelConfig, scale: Scale | None = None) -> ChannelTensor:
    """Delay-domain truncation and normalization of one frequency channel.

    With scale=None the affine map is fitted to this sample; a dataset-wide
    Scale can be passed instead so encoder and decoder share one convention.
    """
    h_freq = np.asarray(h_freq)
    if h_freq.shape != (cfg.n_subcarriers, cfg.n_tx):
        raise DimensionError(
            f"expected ({cfg.n_subcarriers}, {cfg.n_tx}) channel, got {h_freq.shape}"
        )
    delay = np.fft.ifft(h_freq, axis=0, norm="ortho")[: cfg.n_delay]
    planes = np.stack([delay.real, delay.imag])
    if scale is None:
        scale = fit_scale(planes)
    return ChannelTensor(planes=scale.apply(planes), scale=scale)


def postprocess(t: ChannelTensor, cfg: ChannelConfig) -> np.ndarray:
    """Invert preprocess: denormalize, zero-pad delays, unitary DFT back."""
    if t.planes.shape[1:] != (cfg.n_delay, cfg.n_tx):
        raise DimensionError(
            f"tensor is {t.planes.shape}, config wants (2, {cfg.n_delay}, {cfg.n_tx})"
        )
    g = np.zeros((cfg.n_subcarriers, cfg.n_tx), dtype=np.complex128)
    g[: cfg.n_delay] = t.to_complex_delay()
    return np.fft.fft(g, axis=0, norm="ortho")


def fit_scale(planes: np.ndarray) -> Scale:
    """Affine map sending [min, max] of the data onto [-1, 1]."""
    mn = float(planes.min())
    mx = float(planes.max())
    if mx > mn:
        return Scale(offset=(mx + mn) / 2.0, gain=2.0 / (mx - mn))
    # degenerate (constant) data: center it, keep unit gain
    return Scale(offset=mn, gain=1.0)


def nmse(h: ChannelTensor, h_hat: ChannelTensor) -> float:
    """Squared Frobenius error over reference energy, in the denormalized
    delay domain."""
    if h.planes.shape != h_hat.planes.shape:
        raise DimensionError(f"shape mismatch: {h.planes.shape} vs {h_hat.planes.shape}")
    ref = h.denormalized()
    err = ref - h_hat.denormalized()
    denom = float(np.sum(ref * ref))
    if denom <= 0.0:
        raise NumericError("nmse: reference channel has zero norm")
    return float(np.sum(err * err)) / denom


def nmse_arrays(h: np.ndarray, h_hat: np.ndarray) -> float:
    """NMSE between two complex arrays (used for full-band comparisons)."""
    if h.shape != h_hat.shape:
        raise DimensionError(f"shape mismatch: {h.shape} vs {h_hat.shape}")
    denom = float(np.sum(np.abs(h) ** 2))
    if denom <= 0.0:
        raise NumericError("nmse: reference channel has zero norm")
    return float(np.sum(np.abs(h - h_hat) ** 2)) / denom


def nmse_db(value: float) -> float:
    return float(10.0 * np.log10(value)) if value > 0 else float("-inf")


def generate_dataset(cfg: ChannelConfig, count: int) -> tuple[np.ndarray, Scale]:
    """Batch of preprocessed channels with one dataset-global Scale.

    Returns (planes (count, 2, n_delay, n_tx) float32 in [-1, 1], scale).
    Sample i uses an independent RNG stream derived from (seed, i).
    """
    if count < 1:
        raise ConfigurationError(f"count must be positive, got {count}")
    raw = np.empty((count, 2, cfg.n_delay, cfg.n_tx), dtype=np.float64)
    for i in range(count):
        h = generate_channel(cfg, index=i)
        delay = np.fft.ifft(h, axis=0, norm="ortho")[: cfg.n_delay]
        raw[i] = np.stack([delay.real, delay.imag])
    scale = fit_scale(raw)
    return scale.apply(raw).astype(np.float32), scale


def save_tensor_file(path, planes: np.ndarray, scale: Scale) -> None:
    """Write the canonical little-endian tensor file ("CSIT")."""
    planes = np.asarray(planes, dtype=np.float32)
    if planes.ndim != 4 or planes.shape[1] != 2:
        raise DimensionError(f"expected (count, 2, n_delay, n_tx), got {planes.shape}")
    count, _, n_delay, n_tx = planes.shape
    header = _TENSOR_HEADER.pack(
        TENSOR_MAGIC, TENSOR_VERSION, n_delay, n_tx, count, scale.offset, scale.gain
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(planes).tobytes())


def load_tensor_file(path) -> tuple[np.ndarray, Scale]:
    """Read a canonical tensor file back as (float32 planes, Scale)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _TENSOR_HEADER.size:
        raise DataFormatError("tensor file shorter than its header")
    magic, version, n_delay, n_tx, count, offset, gain = _TENSOR_HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise DataFormatError(f"unsupported tensor file version {version}")
    expected = _TENSOR_HEADER.size + count * 2 * n_delay * n_tx * 4
    if len(raw) != expected:
        raise DataFormatError(
            f"tensor file is {len(raw)} bytes, header implies {expected}"
        )
    planes = np.frombuffer(raw, dtype="<f4", offset=_TENSOR_HEADER.size)
    planes = planes.reshape(count, 2, n_delay, n_tx).copy()
    return planes, Scale(offset=offset, gain=gain)
