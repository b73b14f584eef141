"""Batch pipeline: panorama -> depth -> layered seeds, with file outputs.

Each stage reads the previous stage's files, so runs can resume after a
failure. All outputs are deterministic under a fixed (config, seed) with
the synthetic oracles; the effective configuration is written next to the
outputs and reproduces the run exactly when loaded back.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from panofuse import fileio
from panofuse.depthfusion import FusionConfig, PanoDepth, fuse
from panofuse.gateway import OracleClient, OracleEndpoint, RemoteDenoiserOracle, RemoteDepthOracle
from panofuse.geometry import (
    CropLayout,
    CylinderSpec,
    PerspectiveCamera,
    build_flat_layout,
    build_layout,
)
from panofuse.ldi import ClusterConfig, cluster_layers, export_ply, fill_holes, init_gaussians
from panofuse.oracles import AffineLumaDepthOracle, ContractiveDenoiser, fixture_panorama
from panofuse.sampler import Rect, SamplerConfig, run as run_sampler

PANO_PNG = "pano.png"
PANO_DIAG = "pano_diagnostics.json"
DEPTH_PFM = "depth.pfm"
DEPTH_PREVIEW = "depth_preview.png"
THETA_JSON = "theta.json"
DEPTH_DIAG = "depth_diagnostics.json"
SEEDS_PLY = "seeds.ply"
LDI_META = "ldi_meta.json"
CONFIG_TOML = "config.toml"

ORACLE_URL_ENV = "ORACLE_URL"


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    input_path: str = ""
    out_dir: str = "out"
    # layout
    fov_deg: float = 45.0
    n_crops: int = 16
    crop_size: int = 512
    flat_width: int | None = None  # set for wide-image (non-cyclic) mode
    # placement (None -> centered)
    place_x: int | None = None
    place_y: int | None = None
    # sampler (outer_iters None -> 20 cylindrical, 15 wide)
    outer_iters: int | None = None
    inner_steps: int = 10
    seed: int = 0
    second_term_weight: float = 0.0
    prompt: str = ""
    # depth fusion
    depth_iters: int = 4
    depth_segments: int = 8
    depth_monotone: bool = True
    depth_anchor: int = 0
    # ldi
    ldi_layers: int = 4
    fill_band: int = 16
    # oracle
    oracle_mode: str = "synthetic"
    oracle_url: str | None = None
    synth_depth_distort: bool = True  # False = mutually consistent synthetic patches

    def resolved_outer_iters(self) -> int:
        if self.outer_iters is not None:
            return self.outer_iters
        return 15 if self.flat_width is not None else 20

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_toml(self) -> str:
        return fileio.emit_toml(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "PipelineConfig":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return cls.from_dict(tomllib.loads(text))


def build_pipeline_layout(cfg: PipelineConfig) -> CropLayout:
    cam = PerspectiveCamera(cfg.fov_deg, cfg.crop_size, cfg.crop_size)
    if cfg.flat_width is not None:
        return build_flat_layout(cfg.flat_width, cam, cfg.n_crops)
    return build_layout(CylinderSpec.for_camera(cam), cam, cfg.n_crops)


def _placement(cfg: PipelineConfig, layout: CropLayout, input_shape: tuple[int, int]) -> Rect:
    H, W = layout.canvas_shape
    hi, wi = input_shape
    top = cfg.place_y if cfg.place_y is not None else (H - hi) // 2
    left = cfg.place_x if cfg.place_x is not None else (W - wi) // 2
    return Rect(top=top, left=left, height=hi, width=wi)


def _oracle_client(cfg: PipelineConfig) -> OracleClient:
    url = cfg.oracle_url or os.environ.get(ORACLE_URL_ENV)
    if not url:
        raise PipelineError("remote oracle mode requires --oracle-url or ORACLE_URL")
    return OracleClient(OracleEndpoint(base_url=url))


def _denoiser(cfg: PipelineConfig, layout: CropLayout, channels: int):
    if cfg.oracle_mode == "synthetic":
        H, W = layout.canvas_shape
        target = fixture_panorama(H, W, channels, seed=cfg.seed)
        return ContractiveDenoiser(
            target,
            layout,
            steps=cfg.inner_steps,
            rate=0.5,
            condition_blend=0.25,
            seed=cfg.seed,
        )
    return RemoteDenoiserOracle(_oracle_client(cfg), steps=cfg.inner_steps, seed=cfg.seed)


def _depth_oracle(cfg: PipelineConfig):
    if cfg.oracle_mode == "synthetic":
        return AffineLumaDepthOracle(seed=cfg.seed, distort=cfg.synth_depth_distort)
    return RemoteDepthOracle(_oracle_client(cfg), seed=cfg.seed)


def run_pano(cfg: PipelineConfig, layout: CropLayout | None = None) -> dict:
    """Generate the panorama; writes 16-bit PNG plus per-iteration diagnostics."""
    layout = layout or build_pipeline_layout(cfg)
    if not Path(cfg.input_path).exists():
        raise FileNotFoundError(f"input image does not exist: {cfg.input_path}")
    inp = fileio.read_image(cfg.input_path)
    placement = _placement(cfg, layout, inp.shape[:2])
    channels = inp.shape[2] if inp.ndim == 3 else 1
    sc = SamplerConfig(
        outer_iters=cfg.resolved_outer_iters(),
        inner_steps=cfg.inner_steps,
        seed=cfg.seed,
        second_term_weight=cfg.second_term_weight,
        prompt=cfg.prompt,
    )
    oracle = _denoiser(cfg, layout, channels)
    canvas, diagnostics = run_sampler(inp, placement, oracle, layout, sc)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pano_path = out / PANO_PNG
    fileio.write_png16(pano_path, canvas)
    diag_path = out / PANO_DIAG
    diag_path.write_text(
        json.dumps(
            {
                "iterations": diagnostics,
                "placement": asdict(placement),
                "canvas_shape": list(layout.canvas_shape),
            },
            indent=2,
        )
    )
    return {"pano": str(pano_path), "pano_diagnostics": str(diag_path)}


def run_depth(cfg: PipelineConfig, pano_path: str | None = None, layout: CropLayout | None = None) -> dict:
    """Fuse panoramic depth; writes lossless PFM, a preview PNG, and the alignment maps."""
    layout = layout or build_pipeline_layout(cfg)
    pano_path = pano_path or str(Path(cfg.out_dir) / PANO_PNG)
    if not Path(pano_path).exists():
        raise FileNotFoundError(f"panorama does not exist: {pano_path}")
    pano = fileio.read_image(pano_path)
    if pano.shape[:2] != layout.canvas_shape:
        raise PipelineError(
            f"panorama shape {pano.shape[:2]} does not match layout canvas {layout.canvas_shape}"
        )
    fc = FusionConfig(
        iters=cfg.depth_iters,
        segments=cfg.depth_segments,
        anchor_index=cfg.depth_anchor,
        monotone=cfg.depth_monotone,
    )
    depth, maps, history = fuse(pano, layout, _depth_oracle(cfg), fc)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    depth_path = out / DEPTH_PFM
    fileio.write_pfm(depth_path, depth.D)
    lo, hi = float(depth.D.min()), float(depth.D.max())
    preview = (depth.D - lo) / max(hi - lo, 1e-12)
    fileio.write_png16(out / DEPTH_PREVIEW, preview)
    theta = [
        {"knots": m.knots.tolist(), "scales": m.scales.tolist(), "shifts": m.shifts.tolist()}
        for m in maps
    ]
    (out / THETA_JSON).write_text(json.dumps(theta, indent=2))
    (out / DEPTH_DIAG).write_text(
        json.dumps(
            {
                "objective_history": history,
                "final_objective": history[-1],
                "depth_range": [lo, hi],
            },
            indent=2,
        )
    )
    return {
        "depth": str(depth_path),
        "depth_preview": str(out / DEPTH_PREVIEW),
        "theta": str(out / THETA_JSON),
        "depth_diagnostics": str(out / DEPTH_DIAG),
    }


def run_ldi(
    cfg: PipelineConfig,
    pano_path: str | None = None,
    depth_path: str | None = None,
    layout: CropLayout | None = None,
) -> dict:
    """Decompose into layers, fill disocclusions, export Gaussian seeds as PLY."""
    layout = layout or build_pipeline_layout(cfg)
    if layout.cyl is None:
        raise PipelineError("layered export requires a cylindrical canvas (not wide-image mode)")
    pano_path = pano_path or str(Path(cfg.out_dir) / PANO_PNG)
    depth_path = depth_path or str(Path(cfg.out_dir) / DEPTH_PFM)
    for p in (pano_path, depth_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"required input does not exist: {p}")
    pano = fileio.read_image(pano_path)
    depth = fileio.read_pfm(depth_path).astype(np.float64)
    if pano.shape[:2] != depth.shape or pano.shape[:2] != layout.canvas_shape:
        raise PipelineError(
            f"dimension mismatch: pano {pano.shape[:2]}, depth {depth.shape}, "
            f"canvas {layout.canvas_shape}"
        )

    ldi = cluster_layers(
        pano, PanoDepth(D=depth), ClusterConfig(k=cfg.ldi_layers), cyclic=layout.cyclic
    )
    ldi = fill_holes(ldi, band_px=cfg.fill_band)
    seeds = init_gaussians(ldi, layout.cyl)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for i, layer in enumerate(ldi.layers):
        fileio.write_png16(out / f"layer_{i}_color.png", layer.color)
        fileio.write_pfm(out / f"layer_{i}_depth.pfm", layer.depth)
        fileio.write_png8(out / f"layer_{i}_mask.png", layer.occupancy)
        fileio.write_png8(out / f"layer_{i}_filled.png", layer.filled)
        written[f"layer_{i}"] = str(out / f"layer_{i}_color.png")
    ply_path = out / SEEDS_PLY
    export_ply(seeds, ply_path)
    meta = {
        "num_layers": len(ldi.layers),
        "num_seeds": len(seeds),
        "per_layer_active": [int(l.active.sum()) for l in ldi.layers],
        "fill": ldi.metadata,
    }
    (out / LDI_META).write_text(json.dumps(meta, indent=2))
    written.update({"seeds": str(ply_path), "meta": str(out / LDI_META)})
    return written


def run_all(cfg: PipelineConfig, resume: bool = False) -> dict:
    """Chain pano -> depth -> ldi; stops at the first failing stage, keeping
    completed outputs. With resume=True, stages whose outputs exist are skipped."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_TOML).write_text(cfg.to_toml())
    layout = build_pipeline_layout(cfg)
    results: dict = {}

    if resume and (out / PANO_PNG).exists():
        results["pano"] = str(out / PANO_PNG)
    else:
        results.update(run_pano(cfg, layout))

    if resume and (out / DEPTH_PFM).exists():
        results["depth"] = str(out / DEPTH_PFM)
    else:
        results.update(run_depth(cfg, layout=layout))

    if resume and (out / SEEDS_PLY).exists():
        results["seeds"] = str(out / SEEDS_PLY)
    else:
        results.update(run_ldi(cfg, layout=layout))
    return results
