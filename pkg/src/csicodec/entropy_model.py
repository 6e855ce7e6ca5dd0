"""Factorized per-channel probability model over quantized latents.

Each latent channel gets one logistic distribution (location mu, scale
exp(log_scale)) shared across spatial positions.  Bin masses are CDF
differences at lattice-bin endpoints, which makes the pairwise-merge
identity between adjacent ladder levels hold by telescoping.  The same
closed-form masses feed the differentiable rate term used in training and
the fixed-point tables used by the entropy coder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, NumericError, PrecisionError
from .quantizer import QuantLadder, SymbolTensor

TABLE_PRECISION = 16
TABLE_TOTAL = 1 << TABLE_PRECISION
DEFAULT_TAIL_MASS = 1e-9

# analytically the masses are strictly positive; this floor only guards the
# log against float underflow far in the tails
_MASS_FLOOR = 1e-300


@dataclass(frozen=True)
class EntropyModelParams:
    """Per-channel logistic parameters plus the ladder they are paired with."""

    mu: np.ndarray         # (C,) float64
    log_scale: np.ndarray  # (C,) float64
    ladder: QuantLadder
    version: str = "logistic-v1"

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        ls = np.asarray(self.log_scale, dtype=np.float64)
        if mu.ndim != 1 or ls.shape != mu.shape:
            raise ConfigurationError("mu and log_scale must be 1-D with equal length")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(ls))):
            raise NumericError("entropy model parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_scale", ls)

    @property
    def n_channels(self) -> int:
        return self.mu.shape[0]

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)


def init_params(n_channels: int, ladder: QuantLadder) -> EntropyModelParams:
    """Fresh model: standard logistic (mu=0, scale=1) per channel."""
    return EntropyModelParams(
        mu=np.zeros(n_channels), log_scale=np.zeros(n_channels), ladder=ladder
    )


# -- generic math: works on numpy arrays and autodiff Tensors alike --------


def _is_tensor(x) -> bool:
    return isinstance(x, ad.Tensor)


def _raw(x) -> np.ndarray:
    return x.data if _is_tensor(x) else np.asarray(x)


def _sigmoid(x):
    if _is_tensor(x):
        return ad.sigmoid(x)
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    e = np.exp(-a)
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _log(x):
    return ad.log(x) if _is_tensor(x) else np.log(x)


def _exp(x):
    return ad.exp(x) if _is_tensor(x) else np.exp(x)


def _clip_min(x, floor):
    return ad.clip_min(x, floor) if _is_tensor(x) else np.maximum(x, floor)


def interval_mass(lower_z, upper_z):
    """CDF(upper_z) - CDF(lower_z) for the standard logistic, evaluated on
    the half-line where the sigmoid keeps full float resolution."""
    flip = np.where(_raw(lower_z) + _raw(upper_z) > 0, -1.0, 1.0)
    return (_sigmoid(upper_z * flip) - _sigmoid(lower_z * flip)) * flip


def interval_rate_nats(mu, log_scale, v, step: float):
    """Total code length in nats of latents v under per-channel logistics.

    v has shape (..., C, H, W); mu and log_scale have shape (C,).  Each
    entry contributes -log of the probability mass on (v - step/2,
    v + step/2).  Differentiable end to end when called with Tensors.
    """
    c = _raw(mu).shape[0]
    mu_b = mu.reshape((c, 1, 1))
    inv_s = _exp(-log_scale.reshape((c, 1, 1)))
    half = 0.5 * step
    zl = (v - mu_b - half) * inv_s
    zu = (v - mu_b + half) * inv_s
    mass = _clip_min(interval_mass(zl, zu), _MASS_FLOOR)
    return -_log(mass).sum()


# -- spec-facing operations on numpy parameters -----------------------------


def _bin_masses(params: EntropyModelParams, channel: int, n: np.ndarray, level: int) -> np.ndarray:
    step = params.ladder.step(level)
    s = float(params.scale[channel])
    m = float(params.mu[channel])
    n = np.asarray(n, dtype=np.float64)
    zl = (n * step - m) / s
    zu = ((n + 1.0) * step - m) / s
    return np.maximum(interval_mass(zl, zu), _MASS_FLOOR)


def bin_probability(params: EntropyModelParams, channel: int, n: int, level: int) -> float:
    """Model probability that a latent falls in bin [n*step, (n+1)*step)."""
    return float(_bin_masses(params, channel, np.array([n]), level)[0])


def rate_nats(params: EntropyModelParams, v: np.ndarray, level: int) -> float:
    """Evaluation-time rate of a (dequantized or noisy) latent tensor."""
    step = params.ladder.step(level)
    return float(
        _raw(interval_rate_nats(params.mu, params.log_scale, np.asarray(v, dtype=np.float64), step))
    )


def model_cross_entropy(params: EntropyModelParams, s: SymbolTensor) -> float:
    """Sum over entries of -log2 of the model bin mass, in bits."""
    total = 0.0
    for c in range(s.symbols.shape[0]):
        masses = _bin_masses(params, c, s.symbols[c].ravel(), s.level)
        total -= np.log2(masses).sum()
    return float(total)


# -- fixed-point tables for the coder ---------------------------------------


@dataclass(frozen=True)
class PmfTable:
    """Integer frequencies for one channel at one level, summing to 2^16."""

    n_min: int
    n_max: int
    freq: np.ndarray  # (n_max - n_min + 1,) int64, every entry >= 1
    cum: np.ndarray = field(init=False)  # (len + 1,) int64, cum[-1] == 2^16

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=np.int64)
        if freq.min() < 1:
            raise PrecisionError("every table entry needs frequency >= 1")
        if freq.sum() != TABLE_TOTAL:
            raise PrecisionError(f"table must sum to {TABLE_TOTAL}, got {freq.sum()}")
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "cum", np.concatenate(([0], np.cumsum(freq))))

    def __len__(self) -> int:
        return self.n_max - self.n_min + 1

    def contains(self, n: int) -> bool:
        return self.n_min <= n <= self.n_max

    def fold(self, n: np.ndarray) -> np.ndarray:
        """Clamp symbols into the table range (edge folding)."""
        return np.clip(n, self.n_min, self.n_max)


@dataclass(frozen=True)
class PmfTableSet:
    """One table per latent channel, all at the same ladder level."""

    tables: tuple
    level: int
    ladder: QuantLadder

    def __getitem__(self, channel: int) -> PmfTable:
        return self.tables[channel]

    def __len__(self) -> int:
        return len(self.tables)


def _quantize_pmf(p: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of a probability vector to integers that
    sum to 2^16 with every entry at least 1."""
    if p.shape[0] > TABLE_TOTAL:
        raise PrecisionError(
            f"symbol range {p.shape[0]} cannot get frequency >= 1 each at "
            f"{TABLE_PRECISION}-bit precision; raise tail_mass or precision"
        )
    p = p / p.sum()
    raw = p * TABLE_TOTAL
    freq = np.floor(raw).astype(np.int64)
    frac = raw - freq
    short = TABLE_TOTAL - int(freq.sum())
    if short > 0:
        # stable: largest fractional part first, ties to the lower index
        order = np.lexsort((np.arange(len(p)), -frac))
        freq[order[:short]] += 1
    while freq.sum() > TABLE_TOTAL:
        freq[int(np.argmax(freq))] -= 1
    # lift zeros to 1, stealing from the current largest bins
    for i in np.nonzero(freq == 0)[0]:
        j = int(np.argmax(freq))
        freq[j] -= 1
        freq[i] = 1
    if freq.min() < 1:
        raise PrecisionError("minimum-frequency constraint infeasible")
    return freq


def build_pmf_tables(
    params: EntropyModelParams,
    level: int,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> PmfTableSet:
    """Discretize the model into coder tables at one ladder level.

    The symbol range per channel is chosen so the model mass outside it is
    below tail_mass, and that mass is folded into the edge bins before
    integer rounding.
    """
    if not 0.0 < tail_mass <= 1e-6:
        raise ConfigurationError(f"tail_mass must be in (0, 1e-6], got {tail_mass}")
    step = params.ladder.step(level)
    tables = []
    for c in range(params.n_channels):
        m = float(params.mu[c])
        s = float(params.scale[c])
        # logistic quantiles at tail_mass/2 on each side
        q = np.log(tail_mass / 2.0 / (1.0 - tail_mass / 2.0))
        n_min = int(np.floor((m + s * q) / step))
        n_max = int(np.floor((m - s * q) / step))
        n = np.arange(n_min, n_max + 1)
        p = _bin_masses(params, c, n, level).astype(np.float64)
        # fold out-of-range mass into the edges
        zl_edge = (n_min * step - m) / s
        zu_edge = ((n_max + 1) * step - m) / s
        p[0] += float(_sigmoid(np.array([zl_edge]))[0])
        p[-1] += float(_sigmoid(np.array([-zu_edge]))[0])
        tables.append(PmfTable(n_min=n_min, n_max=n_max, freq=_quantize_pmf(p)))
    return PmfTableSet(tables=tuple(tables), level=level, ladder=params.ladder)
