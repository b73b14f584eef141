"""Command-line pipeline driver: pano, depth, ldi, all."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from panofuse.pipeline import ORACLE_URL_ENV, PipelineConfig, PipelineError
from panofuse import pipeline


def _layout_options(fn):
    opts = [
        click.option("--fov", "fov_deg", type=float, default=None, help="Crop camera FOV in degrees."),
        click.option("--crops", "n_crops", type=int, default=None, help="Number of overlapping crops."),
        click.option("--crop-size", type=int, default=None, help="Square crop size in pixels."),
        click.option("--flat-width", type=int, default=None, help="Wide-image mode: flat canvas width (disables wraparound)."),
        click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory."),
        click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="TOML config; flags override."),
        click.option("--seed", type=int, default=None, help="Run seed."),
        click.option("--synthetic", is_flag=True, default=False, help="Force the built-in synthetic oracles."),
        click.option("--oracle-url", envvar=ORACLE_URL_ENV, default=None, help="Remote oracle service URL (or ORACLE_URL)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _sampler_options(fn):
    opts = [
        click.option("--outer-iters", type=int, default=None, help="Outer iterations (default 20, 15 in wide mode)."),
        click.option("--steps", "inner_steps", type=int, default=None, help="Denoising steps per outer iteration."),
        click.option("--second-term-weight", type=float, default=None, help="Condition-proximity blend weight at the final step."),
        click.option("--prompt", type=str, default=None, help="Text prompt for the denoiser condition."),
        click.option("--place-x", type=int, default=None, help="Input placement column (default centered)."),
        click.option("--place-y", type=int, default=None, help="Input placement row (default centered)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _depth_options(fn):
    opts = [
        click.option("--depth-iters", type=int, default=None, help="Alternating depth-fusion iterations."),
        click.option("--segments", "depth_segments", type=int, default=None, help="Piecewise-linear alignment segments."),
        click.option("--no-monotone", "depth_monotone_off", is_flag=True, default=False, help="Drop the monotone-alignment constraint."),
        click.option("--anchor", "depth_anchor", type=int, default=None, help="Patch pinned to the identity map."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _ldi_options(fn):
    opts = [
        click.option("--layers", "ldi_layers", type=int, default=None, help="Number of disparity layers."),
        click.option("--fill-band", type=int, default=None, help="Disocclusion fill band width in pixels."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_config(config_path: str | None, input_path: str | None, **flags) -> PipelineConfig:
    data: dict = {}
    if config_path:
        data = PipelineConfig.from_toml(Path(config_path).read_text()).to_dict()
    if input_path is not None:
        data["input_path"] = input_path
    synthetic = flags.pop("synthetic", False)
    oracle_url = flags.pop("oracle_url", None)
    if flags.pop("depth_monotone_off", False):
        data["depth_monotone"] = False
    for key, val in flags.items():
        if val is not None:
            data[key] = val
    if oracle_url and not synthetic:
        data["oracle_mode"] = "remote"
        data["oracle_url"] = oracle_url
    elif synthetic:
        data["oracle_mode"] = "synthetic"
    cfg = PipelineConfig.from_dict(data)
    if not cfg.input_path:
        raise click.UsageError("an input image is required (--input or config input_path)")
    if not Path(cfg.input_path).exists():
        raise click.UsageError(f"input path does not exist: {cfg.input_path}")
    return cfg


def _run(stage_fn, *args, **kwargs) -> None:
    try:
        written = stage_fn(*args, **kwargs)
    except (PipelineError, FileNotFoundError, ValueError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for name, path in written.items():
        click.echo(f"{name}: {path}")


@click.group()
@click.version_option(package_name="panofuse")
def main():
    """Single-image 360 panorama, panoramic depth, and layered Gaussian export."""


@main.command()
@click.option("--input", "input_path", type=str, required=False, help="Input image (PNG).")
@_layout_options
@_sampler_options
def pano(config_path, input_path, **flags):
    """Generate the panorama and its diagnostics."""
    cfg = _build_config(config_path, input_path, **flags)
    _run(pipeline.run_pano, cfg)


@main.command()
@click.option("--input", "input_path", type=str, required=False, help="Input image (PNG).")
@click.option("--pano", "pano_path", type=str, default=None, help="Panorama PNG (default <out>/pano.png).")
@_layout_options
@_depth_options
def depth(config_path, input_path, pano_path, **flags):
    """Fuse the panoramic depth map from patch estimates."""
    cfg = _build_config(config_path, input_path, **flags)
    _run(pipeline.run_depth, cfg, pano_path)


@main.command()
@click.option("--input", "input_path", type=str, required=False, help="Input image (PNG).")
@click.option("--pano", "pano_path", type=str, default=None, help="Panorama PNG (default <out>/pano.png).")
@click.option("--depth", "depth_path", type=str, default=None, help="Depth PFM (default <out>/depth.pfm).")
@_layout_options
@_ldi_options
def ldi(config_path, input_path, pano_path, depth_path, **flags):
    """Decompose into layers and export Gaussian seeds."""
    cfg = _build_config(config_path, input_path, **flags)
    _run(pipeline.run_ldi, cfg, pano_path, depth_path)


@main.command(name="all")
@click.option("--input", "input_path", type=str, required=False, help="Input image (PNG).")
@click.option("--resume", is_flag=True, default=False, help="Skip stages whose outputs already exist.")
@_layout_options
@_sampler_options
@_depth_options
@_ldi_options
def run_all(config_path, input_path, resume, **flags):
    """Run the full pipeline: pano, depth, ldi."""
    cfg = _build_config(config_path, input_path, **flags)
    _run(pipeline.run_all, cfg, resume=resume)


if __name__ == "__main__":
    main()
