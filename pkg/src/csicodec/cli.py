"""Command-line interface.

Batch work (generate/train/rd-sweep/selftest/dump-symbols) runs in process.
The codec commands (encode/decode/select-level) run in process by default
and act as thin HTTP clients of a running `csicodec serve` instance when
--server is given.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 capacity error.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

import numpy as np

from .channel import (
    ChannelConfig,
    ChannelTensor,
    Scale,
    generate_dataset,
    load_tensor_file,
    save_tensor_file,
)
from .entropy_model import TABLE_TOTAL, model_cross_entropy
from .errors import CapacityError, CodecError, ConfigurationError, DataFormatError
from .pipeline import (
    Bitstream,
    CodecModel,
    RateBudget,
    decode_csi,
    encode_csi,
    expected_bits_per_level,
    rd_sweep,
    select_level,
)
from .quantizer import QuantLadder, empirical_entropy, quantize
from .rans import encode_symbols
from .training import TrainConfig, train
from .transforms import ARCHITECTURES, SwinConfig, analyze, build_transform


def _parse_config_file(path) -> dict:
    """Simple `key = value` format; '#' starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file: {e}")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _build_from_config(cfg: dict, input_shape: tuple):
    arch = cfg.get("architecture", "linear")
    if arch not in ARCHITECTURES:
        raise ConfigurationError(f"unknown architecture {arch!r}; pick from {ARCHITECTURES}")
    seed = int(cfg.get("seed", 0))
    kwargs = dict(
        latent_dim=int(cfg.get("latent_dim", 64)),
        hidden=int(cfg.get("hidden", 256)),
    )
    if arch == "swin_toy":
        kwargs["swin"] = SwinConfig(
            patch_size=int(cfg.get("patch", 4)),
            heads=int(cfg.get("heads", 2)),
            depths=tuple(int(d) for d in cfg.get("depths", "2,2").split(",")),
            embed_dim=int(cfg.get("embed", 8)),
            window=int(cfg.get("window", 4)),
        )
    params = build_transform(arch, input_shape, seed=seed, **kwargs)
    ladder = QuantLadder(
        base_step=float(cfg.get("base_step", 0.03125)),
        n_levels=int(cfg.get("levels", 6)),
    )
    train_cfg = TrainConfig(
        lambda_=float(cfg.get("lambda", 1e-3)),
        learning_rate=float(cfg.get("lr", 1e-3)),
        epochs=int(cfg.get("epochs", 20)),
        batch_size=int(cfg.get("batch_size", 32)),
        seed=seed,
    )
    return params, ladder, train_cfg


def cmd_generate(args) -> int:
    cfg = ChannelConfig(
        n_tx=args.n_tx,
        n_subcarriers=args.n_subcarriers,
        n_delay=args.n_delay,
        seed=args.seed,
        n_paths=args.paths,
        decay=args.decay,
    )
    planes, scale = generate_dataset(cfg, args.count)
    save_tensor_file(args.out, planes, scale)
    print(f"wrote {args.count} channels ({planes.shape[2]}x{planes.shape[3]}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    planes, scale = load_tensor_file(args.data)
    cfg = _parse_config_file(args.config)
    params, ladder, train_cfg = _build_from_config(cfg, tuple(planes.shape[1:]))
    params, entropy, history = train(planes.astype(np.float64), train_cfg, params, ladder)
    model = CodecModel(params=params, entropy=entropy, scale=scale, lambda_=train_cfg.lambda_)
    model.save(args.out)
    last = history[-1]
    print(
        f"trained {params.architecture} for {len(history)} epochs: "
        f"loss {last.loss:.5f}, distortion {last.distortion:.5f}, "
        f"rate {last.rate_nats:.1f} nats -> {args.out}"
    )
    return 0


def _load_streams_dir(path) -> list:
    files = sorted(Path(path).glob("*.csib"))
    if not files:
        raise DataFormatError(f"no .csib files in {path}")
    return [Bitstream.deserialize(f.read_bytes()) for f in files]


def cmd_encode(args) -> int:
    planes, scale = load_tensor_file(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_bits = 0
    if args.server:
        client = _ServiceClient(args.server)
        for i, sample in enumerate(planes):
            blob = client.encode(sample, args.level)
            (out_dir / f"{i:06d}.csib").write_bytes(blob)
            total_bits += 8 * len(blob)
    else:
        model = CodecModel.load(args.weights)
        _check_scale(model, scale)
        for i, sample in enumerate(planes):
            t = ChannelTensor(planes=sample.astype(np.float64), scale=scale)
            stream = encode_csi(t, model, args.level)
            (out_dir / f"{i:06d}.csib").write_bytes(stream.serialize())
            total_bits += stream.bit_length
    n = planes.shape[0]
    per_entry = total_bits / (n * planes.shape[2] * planes.shape[3])
    print(f"encoded {n} channels at level {args.level}: "
          f"{total_bits} bits total, {per_entry:.4f} bits/entry -> {out_dir}")
    return 0


def cmd_decode(args) -> int:
    if args.server:
        client = _ServiceClient(args.server)
        info = client.model_info()
        scale = Scale(info["offset"], info["gain"])
        files = sorted(Path(args.input).glob("*.csib"))
        if not files:
            raise DataFormatError(f"no .csib files in {args.input}")
        planes = np.stack([client.decode(f.read_bytes()) for f in files])
    else:
        model = CodecModel.load(args.weights)
        streams = _load_streams_dir(args.input)
        scale = streams[0].scale
        planes = np.stack([decode_csi(s, model).planes for s in streams])
    save_tensor_file(args.out, planes.astype(np.float32), scale)
    print(f"decoded {planes.shape[0]} channels -> {args.out}")
    return 0


def cmd_select_level(args) -> int:
    if args.server:
        client = _ServiceClient(args.server)
        level, estimates = client.select_level(args.capacity)
    else:
        model = CodecModel.load(args.weights)
        planes, scale = load_tensor_file(args.calibration)
        _check_scale(model, scale)
        estimates = expected_bits_per_level(model, planes.astype(np.float64))
        level = select_level(estimates, RateBudget(args.capacity))
    print(level)
    if args.verbose:
        for k, e in enumerate(estimates):
            marker = " <-- selected" if k == level else ""
            print(f"  level {k}: expected {e:.1f} bits{marker}", file=sys.stderr)
    return 0


def cmd_rd_sweep(args) -> int:
    planes, scale = load_tensor_file(args.data)
    models = []
    for path in args.weights:
        model = CodecModel.load(path)
        _check_scale(model, scale)
        models.append((Path(path).stem, model))
    points = rd_sweep(models, planes.astype(np.float64), csv_path=args.out)
    print(f"swept {len(models)} model(s) x {models[0][1].ladder.n_levels} levels "
          f"over {planes.shape[0]} channels -> {args.out} ({len(points)} rows)")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import load_app

    app = load_app(args.weights, args.calibration)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_dump_symbols(args) -> int:
    """Write the plain-text symbol/pmf exchange files plus a stats sidecar.

    Formats (one file each):
      symbols.txt  lines `channel <c>` then one integer symbol per line
      pmf.txt      lines `channel <c> offset <n_min>` then one probability
                   (table frequency / 65536) per line
      stats.json   measured sizes and entropies for cross-checking
    """
    model = CodecModel.load(args.weights)
    planes, scale = load_tensor_file(args.data)
    _check_scale(model, scale)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = model.tables(args.level)

    sym_lines = []
    all_symbols = []
    code_bits = 0
    payload_bits = 0
    ce_bits = 0.0
    for sample in planes[: args.count].astype(np.float64):
        t = ChannelTensor(planes=sample, scale=scale)
        y = analyze(t, model.params)
        s = quantize(y, model.ladder, args.level)
        folded = np.stack(
            [tables[c].fold(s.symbols[c]) for c in range(s.symbols.shape[0])]
        ).astype(np.int32)
        from .quantizer import SymbolTensor

        s = SymbolTensor(folded, args.level, model.ladder)
        payload = encode_symbols(s, tables)
        code_bits += 8 * len(payload.data)
        payload_bits += payload.bit_length
        ce_bits += model_cross_entropy(model.entropy, s)
        all_symbols.append(s)
    for c in range(model.params.latent_shape[0]):
        sym_lines.append(f"channel {c}")
        for s in all_symbols:
            sym_lines.extend(str(v) for v in s.symbols[c].ravel().tolist())
    (out_dir / "symbols.txt").write_text("\n".join(sym_lines) + "\n")

    pmf_lines = []
    for c in range(model.params.latent_shape[0]):
        table = tables[c]
        pmf_lines.append(f"channel {c} offset {table.n_min}")
        pmf_lines.extend(repr(int(f) / TABLE_TOTAL) for f in table.freq)
    (out_dir / "pmf.txt").write_text("\n".join(pmf_lines) + "\n")

    pooled = np.concatenate([s.symbols.reshape(s.symbols.shape[0], -1) for s in all_symbols], axis=1)
    from .quantizer import SymbolTensor

    pooled_t = SymbolTensor(pooled[:, None, :].astype(np.int32), args.level, model.ladder)
    stats = {
        "level": args.level,
        "n_channels": int(model.params.latent_shape[0]),
        "total_symbols": int(pooled.size),
        "code_bits": int(code_bits),
        "payload_bits_with_crc": int(payload_bits),
        "cross_entropy_bits": float(ce_bits),
        "empirical_entropy_bits_per_symbol": float(
            empirical_entropy(pooled_t, per_channel=True)
        ),
    }
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(f"wrote symbols.txt, pmf.txt, stats.json -> {out_dir}")
    return 0


def _check_scale(model: CodecModel, scale: Scale) -> None:
    if (scale.offset, scale.gain) != (model.scale.offset, model.scale.gain):
        raise ConfigurationError(
            "tensor file normalization does not match the model weights; "
            "encode/decode must share one convention"
        )


class _ServiceClient:
    """Thin HTTP client for the codec service."""

    def __init__(self, base_url: str):
        import httpx

        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=60.0)

    def _raise_for_status(self, response):
        if response.status_code >= 400:
            detail = response.json().get("detail", response.text)
            status_map = {400: ConfigurationError, 409: CapacityError, 422: DataFormatError}
            raise status_map.get(response.status_code, CodecError)(str(detail))

    def model_info(self) -> dict:
        r = self._client.get("/model")
        self._raise_for_status(r)
        return r.json()

    def encode(self, planes: np.ndarray, level: int) -> bytes:
        blob = base64.b64encode(
            np.ascontiguousarray(planes, dtype="<f4").tobytes()
        ).decode("ascii")
        r = self._client.post("/encode", json={"planes_b64": blob, "level": level})
        self._raise_for_status(r)
        return base64.b64decode(r.json()["bitstream_b64"])

    def decode(self, stream: bytes) -> np.ndarray:
        r = self._client.post(
            "/decode", json={"bitstream_b64": base64.b64encode(stream).decode("ascii")}
        )
        self._raise_for_status(r)
        body = r.json()
        planes = np.frombuffer(base64.b64decode(body["planes_b64"]), dtype="<f4")
        return planes.reshape(body["shape"])

    def select_level(self, capacity: float) -> tuple:
        r = self._client.post("/select-level", json={"capacity_bits": capacity})
        self._raise_for_status(r)
        body = r.json()
        return body["level"], body["expected_bits"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csicodec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a channel dataset into a tensor file")
    p.add_argument("--n-tx", type=int, default=32)
    p.add_argument("--n-subcarriers", type=int, default=1024)
    p.add_argument("--n-delay", type=int, default=32)
    p.add_argument("--paths", type=int, default=16)
    p.add_argument("--decay", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a codec model on a tensor file")
    p.add_argument("--config", required=True, help="key = value file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("encode", help="tensor file -> directory of bitstream files")
    p.add_argument("--weights")
    p.add_argument("--server", help="codec service URL (thin-client mode)")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=int, required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="directory of bitstream files -> tensor file")
    p.add_argument("--weights")
    p.add_argument("--server")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("select-level", help="print the finest level fitting a capacity")
    p.add_argument("--weights")
    p.add_argument("--server")
    p.add_argument("--calibration")
    p.add_argument("--capacity", type=float, required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_select_level)

    p = sub.add_parser("rd-sweep", help="rate-distortion sweep CSV over models")
    p.add_argument("--weights", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rd_sweep)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.set_defaults(fn=cmd_selftest)

    p = sub.add_parser("serve", help="start the HTTP codec service")
    p.add_argument("--weights", required=True)
    p.add_argument("--calibration")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser(
        "dump-symbols", help="export symbol/pmf exchange files for external oracles"
    )
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_symbols)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("encode", "decode", "select-level") and not (
        getattr(args, "server", None) or args.weights
    ):
        parser.error(f"{args.command}: provide --weights or --server")
    if args.command == "select-level" and not args.server and not args.calibration:
        parser.error("select-level: provide --calibration (or --server)")
    try:
        return args.fn(args)
    except CodecError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
