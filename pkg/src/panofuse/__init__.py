"""panofuse: single-image 360 panorama, panoramic depth, and layered 3D initialization.

The engine alternates two optimizations over pluggable model oracles:
crop-fused denoising on a cylindrical canvas (panorama synthesis) and
closed-form depth aggregation against per-patch piecewise-linear
alignment (depth fusion). A third stage decomposes the result into a
four-layer depth image and initializes exportable per-pixel Gaussians.
"""

__version__ = "0.1.0"

from panofuse.geometry import (
    CropLayout,
    CylinderSpec,
    PerspectiveCamera,
    ProjectionMap,
    build_flat_layout,
    build_layout,
    project_backward,
    project_forward,
)
from panofuse.sampler import (
    CanvasState,
    ConditionCanvas,
    DenoiseCondition,
    SamplerConfig,
    aggregate_crops,
    run,
    stage1_denoise,
    stage2_update,
)
from panofuse.depthfusion import (
    FusionConfig,
    PanoDepth,
    PiecewiseLinearMap,
    estimate_patches,
    fuse,
    solve_depth_stage,
    solve_theta_stage,
)
from panofuse.ldi import (
    ClusterConfig,
    GaussianSeed,
    LayeredDepthImage,
    cluster_layers,
    export_ply,
    fill_holes,
    init_gaussians,
    read_ply,
)

__all__ = [
    "CropLayout",
    "CylinderSpec",
    "PerspectiveCamera",
    "ProjectionMap",
    "build_flat_layout",
    "build_layout",
    "project_backward",
    "project_forward",
    "CanvasState",
    "ConditionCanvas",
    "DenoiseCondition",
    "SamplerConfig",
    "aggregate_crops",
    "run",
    "stage1_denoise",
    "stage2_update",
    "FusionConfig",
    "PanoDepth",
    "PiecewiseLinearMap",
    "estimate_patches",
    "fuse",
    "solve_depth_stage",
    "solve_theta_stage",
    "ClusterConfig",
    "GaussianSeed",
    "LayeredDepthImage",
    "cluster_layers",
    "export_ply",
    "fill_holes",
    "init_gaussians",
    "read_ply",
]
