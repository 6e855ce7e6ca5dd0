"""Fast in-process invariant suite behind the `selftest` CLI subcommand.

Each check returns (name, passed, detail).  This is a smoke-level subset of
the full pytest suite, sized to run in a few seconds.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .channel import ChannelConfig, generate_channel, nmse_arrays, postprocess, preprocess
from .entropy_model import bin_probability, init_params, model_cross_entropy
from .pipeline import Bitstream, CodecModel, encode_csi, decode_csi
from .quantizer import QuantLadder, coarsen, empirical_entropy, quantize
from .rans import decode_symbols, encode_symbols
from .training import TrainableEntropy, TrainConfig, loss_and_gradients
from .transforms import build_transform
from .channel import ChannelTensor, Scale


def _check_nesting():
    lad = QuantLadder(0.0625, 6)
    rng = np.random.default_rng(101)
    y = rng.normal(0, 0.5, (4, 16, 16))
    for k in range(lad.n_levels):
        for j in range(1, lad.n_levels - k):
            a = coarsen(quantize(y, lad, k), j)
            b = quantize(y, lad, k + j)
            if not np.array_equal(a.symbols, b.symbols):
                return False, f"nesting violated at (k={k}, j={j})"
    return True, "coarsen(quantize(y,k),j) == quantize(y,k+j) for all (k,j)"


def _check_entropy_chain():
    lad = QuantLadder(0.0625, 6)
    rng = np.random.default_rng(102)
    y = rng.laplace(0, 0.4, (2, 32, 32))
    entropies = [empirical_entropy(quantize(y, lad, k)) for k in range(lad.n_levels)]
    ok = all(b <= a + 1e-12 for a, b in zip(entropies, entropies[1:]))
    return ok, "empirical entropy nonincreasing: " + ", ".join(f"{e:.3f}" for e in entropies)


def _check_coder_roundtrip():
    lad = QuantLadder(0.0625, 4)
    em = init_params(3, lad)
    rng = np.random.default_rng(103)
    for level in range(lad.n_levels):
        y = rng.logistic(0, 1.0, (3, 8, 8))
        s = quantize(y, lad, level)
        from .entropy_model import build_pmf_tables

        tables = build_pmf_tables(em, level)
        folded = np.stack([tables[c].fold(s.symbols[c]) for c in range(3)])
        from .quantizer import SymbolTensor

        s = SymbolTensor(folded.astype(np.int32), level, lad)
        payload = encode_symbols(s, tables)
        back = decode_symbols(payload, tables, s.symbols.shape)
        if not np.array_equal(back.symbols, s.symbols):
            return False, f"roundtrip failed at level {level}"
    return True, "lossless roundtrip at every level"


def _check_unitarity():
    cfg = ChannelConfig(n_tx=8, n_subcarriers=128, n_delay=16, seed=77, n_paths=8, decay=0.1)
    h = generate_channel(cfg)
    t = preprocess(h, cfg)
    h2 = postprocess(t, cfg)
    err = nmse_arrays(h, h2)
    return err < 1e-20, f"preprocess/postprocess roundtrip NMSE {err:.2e}"


def _check_gradients():
    params = build_transform("mlp", (2, 8, 8), seed=9, latent_dim=8, hidden=16)
    ent = TrainableEntropy.create(8)
    lad = QuantLadder(0.0625, 6)
    cfg = TrainConfig(lambda_=1e-3, learning_rate=1e-3, epochs=1, batch_size=2, seed=0)
    x = np.random.default_rng(104).normal(0, 0.4, (2, 2, 8, 8))
    _, _, _, grads = loss_and_gradients(x, params, ent, cfg, lad, np.random.default_rng(0))
    name = "enc.w1"
    t = params.weights[name]
    idx = (3, 5)
    h = 3e-6
    orig = float(t.data[idx])
    t.data[idx] = orig + h
    lp = loss_and_gradients(x, params, ent, cfg, lad, np.random.default_rng(0))[0]
    t.data[idx] = orig - h
    lm = loss_and_gradients(x, params, ent, cfg, lad, np.random.default_rng(0))[0]
    t.data[idx] = orig
    fd = (lp - lm) / (2 * h)
    an = grads[name][idx]
    rel = abs(fd - an) / max(abs(an), 1e-12)
    return rel < 1e-5, f"finite-difference relative error {rel:.2e}"


def _check_bitstream():
    params = build_transform("linear", (2, 8, 8), seed=13, latent_dim=16)
    lad = QuantLadder(0.0625, 6)
    em = init_params(16, lad)
    model = CodecModel(params=params, entropy=em, scale=Scale(0.0, 1.0), lambda_=1e-3)
    planes = np.random.default_rng(105).uniform(-1, 1, (2, 8, 8))
    t = ChannelTensor(planes=planes, scale=model.scale)
    stream = encode_csi(t, model, 2)
    parsed = Bitstream.deserialize(stream.serialize())
    t2 = decode_csi(parsed, model)
    t3 = decode_csi(stream, model)
    ok = np.array_equal(t2.planes, t3.planes) and parsed.level == 2
    return ok, f"bitstream framing roundtrip, l(s)={stream.bit_length} bits"


def _check_aggregation():
    lad = QuantLadder(0.25, 3)
    em = init_params(1, lad)
    for n in range(-8, 8):
        merged = bin_probability(em, 0, n, 1)
        parts = bin_probability(em, 0, 2 * n, 0) + bin_probability(em, 0, 2 * n + 1, 0)
        if abs(merged - parts) > 1e-12:
            return False, f"merge identity off at n={n}: {merged} vs {parts}"
    return True, "bin mass merge identity holds across adjacent levels"


CHECKS = (
    ("quantizer nesting", _check_nesting),
    ("entropy chain", _check_entropy_chain),
    ("pmf merge identity", _check_aggregation),
    ("coder lossless roundtrip", _check_coder_roundtrip),
    ("transform unitarity", _check_unitarity),
    ("gradient correctness", _check_gradients),
    ("bitstream framing", _check_bitstream),
)


def run_selftest(verbose: bool = True) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
