from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class ServiceConfig(BaseModel):
    """Service configuration; synthetic mode requires no model downloads."""

    mode: str = Field(default="synthetic", pattern="^(synthetic|real)$")
    synth_denoise: str = Field(default="blend", pattern="^(identity|blend)$")
    synth_depth: str = Field(default="luma_affine", pattern="^(constant|luma_affine)$")
    denoise_model: str = "stabilityai/stable-diffusion-2-inpainting"
    depth_model: str = "depth-anything/Depth-Anything-V2-Small-hf"
    device: str = "cpu"
    max_crop: int = Field(default=1024, ge=8)
    denoise_steps: int = Field(default=50, ge=1)
    host: str = "127.0.0.1"
    port: int = Field(default=8400, ge=1, le=65535)

    @model_validator(mode="after")
    def _check(self):
        return self
