"""Analysis and synthesis transforms.

Four architectures share one interface: identity (debug/reference), linear
(single affine map each way), mlp (one hidden layer each way), and swin_toy
(patch embedding, alternating plain/shifted window attention blocks at
constant resolution, linear head).  Forward passes run on autodiff Tensors
so the training loop gets exact reverse-mode gradients; the convenience
wrappers below take and return plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import ChannelTensor, Scale
from .errors import ConfigurationError, DimensionError

ARCHITECTURES = ("identity", "linear", "mlp", "swin_toy")


@dataclass(frozen=True)
class SwinConfig:
    patch_size: int = 4
    heads: int = 2
    depths: tuple = (2, 2)
    embed_dim: int = 8
    window: int = 4

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if self.embed_dim % self.heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if any(d < 1 for d in self.depths) or not self.depths:
            raise ConfigurationError(f"depths must be positive, got {self.depths}")


@dataclass
class TransformParams:
    """Weights for one encoder/decoder pair."""

    architecture: str
    input_shape: tuple   # (2, n_delay, n_tx)
    latent_shape: tuple  # (C, H, W)
    weights: dict = field(default_factory=dict)  # name -> Tensor, "enc."/"dec." prefixed
    swin: SwinConfig | None = None
    hidden: int | None = None

    def set_trainable(self, trainable: bool) -> None:
        for t in self.weights.values():
            t.requires_grad = trainable


def _uniform(rng, fan_in: int, shape, gain: float = 1.0) -> np.ndarray:
    a = gain / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


# the decoder's final layer starts damped so initial reconstructions sit
# near zero and the early distortion gradient stays modest
_OUTPUT_INIT_GAIN = 0.125


def build_transform(
    architecture: str,
    input_shape: tuple,
    seed: int = 0,
    latent_dim: int = 64,
    hidden: int = 256,
    swin: SwinConfig | None = None,
) -> TransformParams:
    """Construct initialized weights; creation order is fixed so runs with
    the same seed are identical."""
    if architecture not in ARCHITECTURES:
        raise ConfigurationError(f"unknown architecture {architecture!r}")
    if len(input_shape) != 3 or input_shape[0] != 2:
        raise DimensionError(f"input shape must be (2, n_delay, n_tx), got {input_shape}")
    rng = np.random.default_rng([seed, 7])
    d_in = int(np.prod(input_shape))
    w: dict[str, Tensor] = {}

    if architecture == "identity":
        return TransformParams(architecture, input_shape, input_shape, w)

    if architecture == "linear":
        w["enc.w"] = Tensor(_uniform(rng, d_in, (d_in, latent_dim)))
        w["enc.b"] = Tensor(np.zeros(latent_dim))
        w["dec.w"] = Tensor(_uniform(rng, latent_dim, (latent_dim, d_in), gain=_OUTPUT_INIT_GAIN))
        w["dec.b"] = Tensor(np.zeros(latent_dim))  # input-side bias on the latent
        return TransformParams(architecture, input_shape, (latent_dim, 1, 1), w)

    if architecture == "mlp":
        w["enc.w1"] = Tensor(_uniform(rng, d_in, (d_in, hidden)))
        w["enc.b1"] = Tensor(np.zeros(hidden))
        w["enc.w2"] = Tensor(_uniform(rng, hidden, (hidden, latent_dim)))
        w["enc.b2"] = Tensor(np.zeros(latent_dim))
        w["dec.w1"] = Tensor(_uniform(rng, latent_dim, (latent_dim, hidden)))
        w["dec.b1"] = Tensor(np.zeros(hidden))
        w["dec.w2"] = Tensor(_uniform(rng, hidden, (hidden, d_in), gain=_OUTPUT_INIT_GAIN))
        w["dec.b2"] = Tensor(np.zeros(d_in))
        return TransformParams(
            architecture, input_shape, (latent_dim, 1, 1), w, hidden=hidden
        )

    cfg = swin or SwinConfig()
    _, h_in, w_in = input_shape
    p = cfg.patch_size
    if h_in % p or w_in % p:
        raise ConfigurationError(
            f"input {h_in}x{w_in} not divisible by patch size {p}"
        )
    gh, gw = h_in // p, w_in // p
    if gh % cfg.window or gw % cfg.window:
        raise ConfigurationError(
            f"token grid {gh}x{gw} not divisible by window {cfg.window}"
        )
    d = cfg.embed_dim
    patch_dim = 2 * p * p

    def add_blocks(side: str):
        for s, depth in enumerate(cfg.depths):
            for b in range(depth):
                for kind in ("a", "s"):  # plain, then shifted
                    pre = f"{side}.s{s}.b{b}{kind}"
                    w[f"{pre}.ln1.g"] = Tensor(np.ones(d))
                    w[f"{pre}.ln1.b"] = Tensor(np.zeros(d))
                    w[f"{pre}.qkv.w"] = Tensor(_uniform(rng, d, (d, 3 * d)))
                    w[f"{pre}.qkv.b"] = Tensor(np.zeros(3 * d))
                    w[f"{pre}.proj.w"] = Tensor(_uniform(rng, d, (d, d)))
                    w[f"{pre}.proj.b"] = Tensor(np.zeros(d))
                    w[f"{pre}.ln2.g"] = Tensor(np.ones(d))
                    w[f"{pre}.ln2.b"] = Tensor(np.zeros(d))
                    w[f"{pre}.mlp.w1"] = Tensor(_uniform(rng, d, (d, 2 * d)))
                    w[f"{pre}.mlp.b1"] = Tensor(np.zeros(2 * d))
                    w[f"{pre}.mlp.w2"] = Tensor(_uniform(rng, 2 * d, (2 * d, d)))
                    w[f"{pre}.mlp.b2"] = Tensor(np.zeros(d))

    w["enc.embed.w"] = Tensor(_uniform(rng, patch_dim, (patch_dim, d)))
    w["enc.embed.b"] = Tensor(np.zeros(d))
    add_blocks("enc")
    w["enc.head.w"] = Tensor(_uniform(rng, d, (d, d)))
    w["enc.head.b"] = Tensor(np.zeros(d))
    w["dec.embed.w"] = Tensor(_uniform(rng, d, (d, d)))
    w["dec.embed.b"] = Tensor(np.zeros(d))
    add_blocks("dec")
    w["dec.head.w"] = Tensor(_uniform(rng, d, (d, patch_dim), gain=_OUTPUT_INIT_GAIN))
    w["dec.head.b"] = Tensor(np.zeros(patch_dim))
    return TransformParams(architecture, input_shape, (d, gh, gw), w, swin=cfg)


# -- swin forward pieces ------------------------------------------------------


def _window_attention(x: Tensor, w: dict, pre: str, cfg: SwinConfig, shifted: bool) -> Tensor:
    b, h, wd, d = x.shape
    win = cfg.window
    if shifted:
        x = x.roll((-(win // 2), -(win // 2)), (1, 2))
    nh, nw = h // win, wd // win
    t = (
        x.reshape(b, nh, win, nw, win, d)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, nh * nw, win * win, d)
    )
    qkv = ad.linear(t, w[pre + ".qkv.w"], w[pre + ".qkv.b"])
    out = ad.window_attention_qkv(qkv, cfg.heads)
    out = ad.linear(out, w[pre + ".proj.w"], w[pre + ".proj.b"])
    out = (
        out.reshape(b, nh, nw, win, win, d)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, h, wd, d)
    )
    if shifted:
        out = out.roll((win // 2, win // 2), (1, 2))
    return out


def _swin_block(x: Tensor, w: dict, pre: str, cfg: SwinConfig, shifted: bool) -> Tensor:
    a = ad.layer_norm(x, w[pre + ".ln1.g"], w[pre + ".ln1.b"])
    x = x + _window_attention(a, w, pre, cfg, shifted)
    a = ad.layer_norm(x, w[pre + ".ln2.g"], w[pre + ".ln2.b"])
    hid = ad.gelu(ad.linear(a, w[pre + ".mlp.w1"], w[pre + ".mlp.b1"]))
    return x + ad.linear(hid, w[pre + ".mlp.w2"], w[pre + ".mlp.b2"])


def _swin_stages(x: Tensor, w: dict, side: str, cfg: SwinConfig) -> Tensor:
    for s, depth in enumerate(cfg.depths):
        for bb in range(depth):
            x = _swin_block(x, w, f"{side}.s{s}.b{bb}a", cfg, shifted=False)
            x = _swin_block(x, w, f"{side}.s{s}.b{bb}s", cfg, shifted=True)
    return x


# -- batched forward passes ---------------------------------------------------


def analyze_batch(x: Tensor, params: TransformParams) -> Tensor:
    """(B, 2, n_delay, n_tx) -> (B, C, H, W)."""
    b = x.shape[0]
    if tuple(x.shape[1:]) != tuple(params.input_shape):
        raise DimensionError(
            f"input {x.shape[1:]} does not match transform input {params.input_shape}"
        )
    w = params.weights
    arch = params.architecture
    if arch == "identity":
        return x.reshape((b, *params.latent_shape))
    if arch == "linear":
        flat = x.reshape(b, int(np.prod(params.input_shape)))
        y = ad.linear(flat, w["enc.w"], w["enc.b"])
        return y.reshape((b, *params.latent_shape))
    if arch == "mlp":
        flat = x.reshape(b, int(np.prod(params.input_shape)))
        y = ad.linear(ad.gelu(ad.linear(flat, w["enc.w1"], w["enc.b1"])), w["enc.w2"], w["enc.b2"])
        return y.reshape((b, *params.latent_shape))
    cfg = params.swin
    p = cfg.patch_size
    _, h, wd = params.input_shape
    gh, gw = h // p, wd // p
    t = (
        x.transpose(0, 2, 3, 1)
        .reshape(b, gh, p, gw, p, 2)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, gh, gw, 2 * p * p)
    )
    t = ad.linear(t, w["enc.embed.w"], w["enc.embed.b"])
    t = _swin_stages(t, w, "enc", cfg)
    t = ad.linear(t, w["enc.head.w"], w["enc.head.b"])
    return t.transpose(0, 3, 1, 2)


def synthesize_batch(y: Tensor, params: TransformParams) -> Tensor:
    """(B, C, H, W) -> (B, 2, n_delay, n_tx)."""
    b = y.shape[0]
    if tuple(y.shape[1:]) != tuple(params.latent_shape):
        raise DimensionError(
            f"latent {y.shape[1:]} does not match transform latent {params.latent_shape}"
        )
    w = params.weights
    arch = params.architecture
    if arch == "identity":
        return y.reshape((b, *params.input_shape))
    if arch == "linear":
        flat = y.reshape(b, int(np.prod(params.latent_shape)))
        x = (flat + w["dec.b"]) @ w["dec.w"]
        return x.reshape((b, *params.input_shape))
    if arch == "mlp":
        flat = y.reshape(b, int(np.prod(params.latent_shape)))
        x = ad.linear(ad.gelu(ad.linear(flat, w["dec.w1"], w["dec.b1"])), w["dec.w2"], w["dec.b2"])
        return x.reshape((b, *params.input_shape))
    cfg = params.swin
    p = cfg.patch_size
    _, h, wd = params.input_shape
    gh, gw = h // p, wd // p
    t = ad.linear(y.transpose(0, 2, 3, 1), w["dec.embed.w"], w["dec.embed.b"])
    t = _swin_stages(t, w, "dec", cfg)
    t = ad.linear(t, w["dec.head.w"], w["dec.head.b"])
    x = (
        t.reshape(b, gh, gw, p, p, 2)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, h, wd, 2)
        .transpose(0, 3, 1, 2)
    )
    return x


# -- single-sample wrappers over plain arrays ---------------------------------


def analyze(t: ChannelTensor, params: TransformParams) -> np.ndarray:
    """Latent (C, H, W) for one preprocessed channel."""
    y = analyze_batch(Tensor(t.planes[None]), params)
    return y.data[0]


def synthesize(y: np.ndarray, params: TransformParams, scale: Scale) -> ChannelTensor:
    """Reconstructed channel tensor from one latent (C, H, W)."""
    x = synthesize_batch(Tensor(np.asarray(y, dtype=np.float64)[None]), params)
    return ChannelTensor(planes=x.data[0], scale=scale)


def count_parameters(params: TransformParams, entropy_channels: int = 0) -> int:
    """Exact trainable scalar count; pass the latent channel count to include
    the per-channel entropy model (mu, log-scale pairs)."""
    n = sum(t.size for t in params.weights.values())
    return int(n + 2 * entropy_channels)
