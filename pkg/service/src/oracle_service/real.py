"""Real-model adapters (optional; install the [real] extra and model weights).

Encapsulates model choice, scheduler, and latent handling behind the same
(state, mask, known, t, seed) -> state step contract the synthetic mode
serves. Tensors for the denoiser are latent-space (h/8, w/8, 4); the
condition's `known` rides in pixel space and is VAE-encoded per call.
Everything here is GPU-friendly but runs on CPU if configured.
"""

from __future__ import annotations

import numpy as np

from oracle_service.config import ServiceConfig


def _require(module: str):
    try:
        return __import__(module)
    except ImportError as exc:
        raise RuntimeError(
            f"real mode requires {module!r}: install 'pano-oracle-service[real]' "
            "and download the configured model weights"
        ) from exc


class RealDepthEstimator:
    def __init__(self, config: ServiceConfig):
        _require("torch")
        transformers = _require("transformers")
        self._pipe = transformers.pipeline(
            "depth-estimation", model=config.depth_model, device=config.device
        )

    def estimate(self, crop: np.ndarray, seed: int) -> np.ndarray:
        from PIL import Image

        img = np.clip(crop, 0.0, 1.0)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        pil = Image.fromarray((img * 255).astype(np.uint8))
        pred = self._pipe(pil)["predicted_depth"]
        depth = pred.squeeze().float().cpu().numpy()
        if depth.shape != crop.shape[:2]:
            import torch

            t = torch.from_numpy(depth)[None, None]
            t = torch.nn.functional.interpolate(
                t, size=crop.shape[:2], mode="bilinear", align_corners=False
            )
            depth = t[0, 0].numpy()
        return depth.astype(np.float32)


class RealDenoiser:
    """One scheduler step of a pretrained inpainting diffusion model."""

    def __init__(self, config: ServiceConfig):
        torch = _require("torch")
        diffusers = _require("diffusers")
        self.torch = torch
        self.device = config.device
        self.steps = config.denoise_steps
        pipe = diffusers.StableDiffusionInpaintPipeline.from_pretrained(config.denoise_model)
        pipe.to(config.device)
        self.vae = pipe.vae
        self.unet = pipe.unet
        self.scheduler = pipe.scheduler
        self.tokenizer = pipe.tokenizer
        self.text_encoder = pipe.text_encoder
        self.scheduler.set_timesteps(self.steps)
        self._prompt_cache: dict[str, object] = {}

    def _embed(self, prompt: str):
        if prompt not in self._prompt_cache:
            tok = self.tokenizer(
                prompt,
                padding="max_length",
                max_length=self.tokenizer.model_max_length,
                truncation=True,
                return_tensors="pt",
            )
            with self.torch.no_grad():
                self._prompt_cache[prompt] = self.text_encoder(
                    tok.input_ids.to(self.device)
                )[0]
        return self._prompt_cache[prompt]

    def denoise_step(
        self, state: np.ndarray, mask: np.ndarray, known: np.ndarray, t: int, seed: int
    ) -> np.ndarray:
        """state: latent (h, w, 4); mask/known: pixel-space (8h, 8w[, 3])."""
        torch = self.torch
        if t > self.steps:
            raise ValueError(f"step index {t} exceeds configured steps {self.steps}")
        timestep = self.scheduler.timesteps[self.steps - t]
        lat = torch.from_numpy(np.ascontiguousarray(state)).permute(2, 0, 1)[None].to(self.device)
        m = torch.from_numpy(np.ascontiguousarray(mask))[None, None].to(self.device)
        img = torch.from_numpy(np.ascontiguousarray(known)).permute(2, 0, 1)[None].to(self.device)
        with torch.no_grad():
            masked = img * (1.0 - m)
            cond_lat = self.vae.encode(masked * 2.0 - 1.0).latent_dist.sample(
                generator=torch.Generator(self.device).manual_seed(seed)
            ) * self.vae.config.scaling_factor
            m_lat = torch.nn.functional.interpolate(m, size=lat.shape[2:])
            unet_in = torch.cat([lat, m_lat, cond_lat], dim=1)
            noise_pred = self.unet(
                unet_in, timestep, encoder_hidden_states=self._embed("")
            ).sample
            prev = self.scheduler.step(
                noise_pred,
                timestep,
                lat,
                generator=torch.Generator(self.device).manual_seed(seed),
            ).prev_sample
        return prev[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)
