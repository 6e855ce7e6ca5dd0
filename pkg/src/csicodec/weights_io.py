"""Weight file ("CSIW") serialization.

Little-endian layout, frozen by golden tests:

    magic "CSIW" | version u8 | arch u8 | n_delay u16 | n_tx u16
    | latent C u16, H u16, W u16 | hidden u32
    | patch u8 | heads u8 | window u8 | embed u16 | n_depths u8 | depths u8 x n
    | offset f64 | gain f64 | lambda f64 | base_step f64 | n_levels u8
    | n_tensors u16
    then per tensor (sorted by name):
    name_len u16 | name utf-8 | rank u8 | dims u32 x rank | float32 data

The entropy model rides along as tensor "entropy.mu_logscale" of shape
(C, 2): per-channel (location, log-scale) pairs ordered by channel index.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .channel import Scale
from .entropy_model import EntropyModelParams
from .errors import DataFormatError
from .quantizer import QuantLadder
from .transforms import ARCHITECTURES, SwinConfig, TransformParams

WEIGHTS_MAGIC = b"CSIW"
WEIGHTS_VERSION = 1
ENTROPY_TENSOR = "entropy.mu_logscale"

_FIXED = struct.Struct("<4sBBHHHHHI")
_SWIN = struct.Struct("<BBBHB")
_SCALARS = struct.Struct("<ddddB")


def save_weights(
    path,
    params: TransformParams,
    entropy: EntropyModelParams,
    scale: Scale,
    lambda_: float,
) -> None:
    arch = ARCHITECTURES.index(params.architecture)
    _, n_delay, n_tx = params.input_shape
    c, h, w = params.latent_shape
    swin = params.swin or SwinConfig()
    depths = swin.depths if params.swin else ()
    parts = [
        _FIXED.pack(
            WEIGHTS_MAGIC, WEIGHTS_VERSION, arch, n_delay, n_tx, c, h, w,
            params.hidden or 0,
        ),
        _SWIN.pack(
            swin.patch_size if params.swin else 0,
            swin.heads if params.swin else 0,
            swin.window if params.swin else 0,
            swin.embed_dim if params.swin else 0,
            len(depths),
        ),
        bytes(depths),
        _SCALARS.pack(
            scale.offset, scale.gain, lambda_,
            entropy.ladder.base_step, entropy.ladder.n_levels,
        ),
    ]
    tensors = {name: t.data for name, t in params.weights.items()}
    tensors[ENTROPY_TENSOR] = np.stack([entropy.mu, entropy.log_scale], axis=1)
    parts.append(struct.pack("<H", len(tensors)))
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_weights(path) -> tuple[TransformParams, EntropyModelParams, Scale, float]:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        magic, version, arch, n_delay, n_tx, c, h, w, hidden = _FIXED.unpack_from(raw, 0)
        pos = _FIXED.size
        if magic != WEIGHTS_MAGIC:
            raise DataFormatError(f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
        if version != WEIGHTS_VERSION:
            raise DataFormatError(f"unsupported weight file version {version}")
        if arch >= len(ARCHITECTURES):
            raise DataFormatError(f"unknown architecture tag {arch}")
        patch, heads, window, embed, n_depths = _SWIN.unpack_from(raw, pos)
        pos += _SWIN.size
        depths = tuple(raw[pos : pos + n_depths])
        pos += n_depths
        offset, gain, lambda_, base_step, n_levels = _SCALARS.unpack_from(raw, pos)
        pos += _SCALARS.size
        (n_tensors,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            tensors[name] = data.reshape(dims).astype(np.float64)
        if pos != len(raw):
            raise DataFormatError("trailing bytes after the last tensor")
    except struct.error as e:
        raise DataFormatError(f"truncated weight file: {e}") from None

    if ENTROPY_TENSOR not in tensors:
        raise DataFormatError("weight file is missing the entropy model tensor")
    mu_ls = tensors.pop(ENTROPY_TENSOR)
    ladder = QuantLadder(base_step=base_step, n_levels=n_levels)
    entropy = EntropyModelParams(
        mu=mu_ls[:, 0].copy(), log_scale=mu_ls[:, 1].copy(), ladder=ladder
    )
    architecture = ARCHITECTURES[arch]
    params = TransformParams(
        architecture=architecture,
        input_shape=(2, n_delay, n_tx),
        latent_shape=(c, h, w),
        weights={name: Tensor(data) for name, data in tensors.items()},
        swin=SwinConfig(patch, heads, depths, embed, window)
        if architecture == "swin_toy"
        else None,
        hidden=hidden or None,
    )
    return params, entropy, Scale(offset=offset, gain=gain), lambda_
