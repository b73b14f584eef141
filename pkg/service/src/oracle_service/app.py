"""FastAPI application: /v1/denoise, /v1/depth, /v1/health."""

from __future__ import annotations

from typing import Any

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from oracle_service.config import ServiceConfig
from oracle_service.synthetic import DENOISE_FNS, DEPTH_FNS
from oracle_service.tensors import TensorError, decode_tensor, encode_tensor


class TensorPayload(BaseModel):
    shape: list[int]
    dtype: str
    data: str
    crc32: int


class ConditionPayload(BaseModel):
    prompt: str = ""
    mask: TensorPayload
    known: TensorPayload
    seed: int


class DenoiseRequest(BaseModel):
    request_id: int | str | None = None
    state: TensorPayload
    t: int = Field(ge=1)
    condition: ConditionPayload


class DenoiseResponse(BaseModel):
    request_id: int | str | None = None
    state: TensorPayload


class DepthRequest(BaseModel):
    request_id: int | str | None = None
    crop: TensorPayload
    seed: int


class DepthResponse(BaseModel):
    request_id: int | str | None = None
    depth: TensorPayload


class HealthResponse(BaseModel):
    mode: str
    models: dict[str, str]
    max_crop: int


def _decode(payload: TensorPayload, name: str) -> np.ndarray:
    try:
        return decode_tensor(payload.model_dump())
    except TensorError as exc:
        raise HTTPException(status_code=400, detail=f"{name}: {exc}") from exc


def _check_size(arr: np.ndarray, max_crop: int) -> None:
    if arr.ndim < 2 or max(arr.shape[:2]) > max_crop:
        raise HTTPException(
            status_code=413, detail=f"crop {arr.shape} exceeds max size {max_crop}"
        )


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="pano-oracle-service", version="0.1.0")

    if config.mode == "synthetic":
        denoise_fn = DENOISE_FNS[config.synth_denoise]
        depth_fn = DEPTH_FNS[config.synth_depth]
        models = {
            "denoise": f"synthetic:{config.synth_denoise}",
            "depth": f"synthetic:{config.synth_depth}",
        }
    else:
        from oracle_service.real import RealDenoiser, RealDepthEstimator

        denoiser = RealDenoiser(config)
        depther = RealDepthEstimator(config)
        denoise_fn = denoiser.denoise_step
        depth_fn = depther.estimate
        models = {"denoise": config.denoise_model, "depth": config.depth_model}

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> Any:
        return HealthResponse(mode=config.mode, models=models, max_crop=config.max_crop)

    @app.post("/v1/denoise", response_model=DenoiseResponse)
    def denoise(req: DenoiseRequest) -> Any:
        state = _decode(req.state, "state")
        mask = _decode(req.condition.mask, "mask")
        known = _decode(req.condition.known, "known")
        _check_size(state, config.max_crop)
        if mask.shape != state.shape[:2] or known.shape != state.shape:
            raise HTTPException(
                status_code=400,
                detail=f"shape mismatch: state {state.shape}, mask {mask.shape}, "
                f"known {known.shape}",
            )
        try:
            out = denoise_fn(state, mask, known, req.t, req.condition.seed)
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"denoiser failed: {exc}") from exc
        return DenoiseResponse(request_id=req.request_id, state=TensorPayload(**encode_tensor(out)))

    @app.post("/v1/depth", response_model=DepthResponse)
    def depth(req: DepthRequest) -> Any:
        crop = _decode(req.crop, "crop")
        _check_size(crop, config.max_crop)
        try:
            out = depth_fn(crop, req.seed)
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"depth estimator failed: {exc}") from exc
        return DepthResponse(request_id=req.request_id, depth=TensorPayload(**encode_tensor(out)))

    return app
