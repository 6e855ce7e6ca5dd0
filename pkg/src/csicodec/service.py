"""HTTP codec service.

Wraps one loaded CodecModel behind encode/decode/select-level endpoints so
many clients (e.g. user devices encoding, a base station decoding) can share
a single long-lived model instance.  Tensors travel as base64 float32
little-endian C-order blobs in the normalized domain, matching the payload
section of the canonical tensor file.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .channel import ChannelTensor, nmse, nmse_db
from .errors import CapacityError, CodecError, ConfigurationError, DataFormatError
from .pipeline import (
    Bitstream,
    CodecModel,
    RateBudget,
    bits_per_entry,
    decode_csi,
    encode_csi,
    expected_bits_per_level,
    select_level,
)


class HealthResponse(BaseModel):
    status: str


class ModelInfoResponse(BaseModel):
    architecture: str
    input_shape: list[int]
    latent_shape: list[int]
    base_step: float
    n_levels: int
    offset: float
    gain: float
    lambda_: float = Field(alias="lambda")
    parameter_count: int

    model_config = {"populate_by_name": True}


class EncodeRequest(BaseModel):
    planes_b64: str = Field(description="float32 LE (2, n_delay, n_tx), normalized")
    level: int = Field(ge=0)


class EncodeResponse(BaseModel):
    bitstream_b64: str
    bits: int
    bits_per_entry: float
    fold_events: int


class DecodeRequest(BaseModel):
    bitstream_b64: str


class DecodeResponse(BaseModel):
    planes_b64: str
    shape: list[int]


class SelectLevelRequest(BaseModel):
    capacity_bits: float = Field(gt=0)


class SelectLevelResponse(BaseModel):
    level: int
    expected_bits: list[float]


class NmseRequest(BaseModel):
    reference_b64: str
    reconstruction_b64: str


class NmseResponse(BaseModel):
    nmse: float
    nmse_db: float


def _http_error(e: CodecError) -> HTTPException:
    status = {2: 400, 3: 422, 4: 409}.get(e.exit_code, 500)
    return HTTPException(status_code=status, detail=str(e))


def _decode_planes(b64: str, shape: tuple) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=422, detail="invalid base64 tensor")
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise HTTPException(
            status_code=422,
            detail=f"tensor blob is {len(raw)} bytes, shape {shape} needs {expected}",
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def _encode_planes(planes: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(planes, dtype="<f4").tobytes()
    ).decode("ascii")


def create_app(model: CodecModel, calibration: np.ndarray | None = None) -> FastAPI:
    """Build the service around a loaded model.

    calibration (N, 2, n_delay, n_tx) enables /select-level; the per-level
    expected bits are computed once at startup.
    """
    app = FastAPI(title="csicodec", version="0.1.0")
    input_shape = model.params.input_shape
    n_entries = input_shape[1] * input_shape[2]
    estimates = (
        expected_bits_per_level(model, calibration) if calibration is not None else None
    )

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok")

    @app.get("/model", response_model=ModelInfoResponse)
    def model_info():
        return ModelInfoResponse(
            architecture=model.params.architecture,
            input_shape=list(input_shape),
            latent_shape=list(model.params.latent_shape),
            base_step=model.ladder.base_step,
            n_levels=model.ladder.n_levels,
            offset=model.scale.offset,
            gain=model.scale.gain,
            parameter_count=model.parameter_count(),
            **{"lambda": model.lambda_},
        )

    @app.post("/encode", response_model=EncodeResponse)
    def encode(req: EncodeRequest):
        planes = _decode_planes(req.planes_b64, input_shape)
        t = ChannelTensor(planes=planes, scale=model.scale)
        try:
            stream = encode_csi(t, model, req.level)
        except CodecError as e:
            raise _http_error(e)
        return EncodeResponse(
            bitstream_b64=base64.b64encode(stream.serialize()).decode("ascii"),
            bits=stream.bit_length,
            bits_per_entry=stream.bit_length / n_entries,
            fold_events=stream.fold_events,
        )

    @app.post("/decode", response_model=DecodeResponse)
    def decode(req: DecodeRequest):
        try:
            raw = base64.b64decode(req.bitstream_b64, validate=True)
        except (binascii.Error, ValueError):
            raise HTTPException(status_code=422, detail="invalid base64 bitstream")
        try:
            stream = Bitstream.deserialize(raw)
            t = decode_csi(stream, model)
        except CodecError as e:
            raise _http_error(e)
        return DecodeResponse(
            planes_b64=_encode_planes(t.planes), shape=list(t.planes.shape)
        )

    @app.post("/select-level", response_model=SelectLevelResponse)
    def select(req: SelectLevelRequest):
        if estimates is None:
            raise HTTPException(
                status_code=409,
                detail="service started without a calibration set; /select-level disabled",
            )
        try:
            level = select_level(estimates, RateBudget(req.capacity_bits))
        except CodecError as e:
            raise _http_error(e)
        return SelectLevelResponse(level=level, expected_bits=estimates)

    @app.post("/metrics/nmse", response_model=NmseResponse)
    def metrics_nmse(req: NmseRequest):
        a = ChannelTensor(planes=_decode_planes(req.reference_b64, input_shape), scale=model.scale)
        b = ChannelTensor(
            planes=_decode_planes(req.reconstruction_b64, input_shape), scale=model.scale
        )
        try:
            value = nmse(a, b)
        except CodecError as e:
            raise _http_error(e)
        return NmseResponse(nmse=value, nmse_db=nmse_db(value))

    return app


def load_app(weights_path: str, calibration_path: str | None = None) -> FastAPI:
    """App factory for uvicorn: model (and optional calibration) from disk."""
    from .channel import load_tensor_file

    model = CodecModel.load(weights_path)
    calibration = None
    if calibration_path:
        planes, scale = load_tensor_file(calibration_path)
        if (scale.offset, scale.gain) != (model.scale.offset, model.scale.gain):
            raise ConfigurationError(
                "calibration file normalization does not match the model"
            )
        calibration = planes.astype(np.float64)
    return create_app(model, calibration)
