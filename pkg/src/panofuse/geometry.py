"""Cylindrical canvas geometry and the crop/scatter projection operators.

The canvas is a full-360 cylindrical image whose columns sample azimuth
uniformly; rows map one-to-one to perspective-crop rows (the vertical
mapping is the identity, which keeps every canvas pixel covered by the
default crop ring and preserves per-pixel noise statistics). Projections
are pure nearest-neighbor index gathers/scatters precomputed once per
layout so no trigonometry runs in optimization inner loops.

Nearest-neighbor tie-break, fixed everywhere: index = floor(x + 0.5).
Changing it would reshuffle which pixels are bijective, never the
correctness of round trips on the bijective set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SENTINEL = -1

# nearest-neighbor tie-break used everywhere: index = floor(x + 0.5)
def _nearest(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


class LayoutError(ValueError):
    """Raised when a crop layout cannot cover its canvas."""


@dataclass(frozen=True)
class PerspectiveCamera:
    """Pinhole camera with equal horizontal/vertical FOV, yaw about the cylinder axis."""

    fov_deg: float
    width: int
    height: int
    yaw: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        if self.width < 8 or self.height < 8:
            raise ValueError("camera width/height must be >= 8 px")

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


@dataclass(frozen=True)
class CylinderSpec:
    """Cylindrical canvas: width spans the full 360 azimuth, one column per focal-scaled radian."""

    width: int
    height: int
    focal_px: float

    def __post_init__(self):
        if self.width != int(round(2.0 * math.pi * self.focal_px)):
            raise ValueError(
                f"cylinder width {self.width} != round(2*pi*focal) = "
                f"{int(round(2.0 * math.pi * self.focal_px))}"
            )

    @classmethod
    def for_camera(cls, cam: PerspectiveCamera, height: int | None = None) -> "CylinderSpec":
        f = cam.focal_px
        return cls(width=int(round(2.0 * math.pi * f)), height=height or cam.height, focal_px=f)

    @property
    def cols_per_radian(self) -> float:
        # exact azimuth->column scale; using width/(2*pi) rather than focal_px
        # makes the wrap seam close exactly in index arithmetic
        return self.width / (2.0 * math.pi)


@dataclass(frozen=True)
class ProjectionMap:
    """Precomputed nearest-neighbor index maps between one crop and the canvas.

    forward[p]  = flat canvas index sourcing crop pixel p (SENTINEL if the crop
                  pixel falls outside the canvas band; forward_fill then holds
                  the clamped edge index used for display-only gathers).
    backward[c] = flat crop index sourcing canvas pixel c (SENTINEL when crop i
                  does not cover c).
    bijective_mask marks crop pixels that survive backward(forward(p)) == p.
    """

    crop_index: int
    crop_shape: tuple[int, int]
    canvas_shape: tuple[int, int]
    forward: np.ndarray
    forward_fill: np.ndarray
    backward: np.ndarray
    bijective_mask: np.ndarray
    bijective_canvas_mask: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return (self.backward >= 0).reshape(self.canvas_shape)


@dataclass(frozen=True)
class CropLayout:
    """Ring (or flat strip) of overlapping crops with precomputed maps and coverage."""

    n: int
    cameras: list[PerspectiveCamera]
    maps: list[ProjectionMap]
    coverage: np.ndarray
    canvas_shape: tuple[int, int]
    cyclic: bool = True
    cyl: CylinderSpec | None = field(default=None, compare=False)

    @property
    def crop_shape(self) -> tuple[int, int]:
        return (self.cameras[0].height, self.cameras[0].width)

    def boundary_columns(self) -> np.ndarray:
        """Canvas columns at the azimuthal edges of each crop footprint."""
        cols = []
        for m in self.maps:
            covered_cols = np.flatnonzero(m.covered.any(axis=0))
            if covered_cols.size == 0:
                continue
            # a cyclic footprint can straddle column 0; detect the gap
            gaps = np.flatnonzero(np.diff(covered_cols) > 1)
            if self.cyclic and gaps.size:
                g = gaps[0]
                cols += [int(covered_cols[g]), int(covered_cols[g + 1])]
            else:
                cols += [int(covered_cols[0]), int(covered_cols[-1])]
        return np.unique(np.asarray(cols, dtype=np.int64))


def _build_map(
    cam: PerspectiveCamera, cyl: CylinderSpec, crop_index: int
) -> ProjectionMap:
    h, w = cam.height, cam.width
    H, W = cyl.height, cyl.width
    f = cam.focal_px
    s = cyl.cols_per_radian
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ccy = (H - 1) / 2.0

    # forward: crop pixel -> canvas pixel
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    delta = np.arctan((xs - cx) / f)
    u = np.mod((cam.yaw + delta) * s, W)
    ui = _nearest(u) % W                                   # (w,)
    v = ys - cy + ccy
    vi = _nearest(v)                                       # (h,)
    v_ok = (vi >= 0) & (vi < H)
    vi_fill = np.clip(vi, 0, H - 1)
    fwd_fill = (vi_fill[:, None] * W + ui[None, :]).astype(np.int64)
    fwd = np.where(v_ok[:, None], fwd_fill, SENTINEL)

    # backward: canvas pixel -> crop pixel
    uu = np.arange(W, dtype=np.float64)
    vv = np.arange(H, dtype=np.float64)
    d = np.mod(uu / s - cam.yaw + np.pi, 2.0 * np.pi) - np.pi
    in_front = np.abs(d) < (np.pi / 2.0)
    x = cx + f * np.tan(np.where(in_front, d, 0.0))
    xi = _nearest(x)                                       # (W,)
    x_ok = in_front & (xi >= 0) & (xi < w)
    y = vv - ccy + cy
    yi = _nearest(y)                                       # (H,)
    y_ok = (yi >= 0) & (yi < h)
    valid = y_ok[:, None] & x_ok[None, :]
    bwd = np.where(
        valid,
        np.clip(yi, 0, h - 1)[:, None] * w + np.clip(xi, 0, w - 1)[None, :],
        SENTINEL,
    ).astype(np.int64)

    fwd_flat = fwd.ravel()
    bwd_flat = bwd.ravel()
    crop_ids = np.arange(h * w, dtype=np.int64)
    rt = np.full(h * w, SENTINEL, dtype=np.int64)
    has_fwd = fwd_flat >= 0
    rt[has_fwd] = bwd_flat[fwd_flat[has_fwd]]
    bij_crop = (rt == crop_ids).reshape(h, w)

    canvas_ids = np.arange(H * W, dtype=np.int64)
    rt2 = np.full(H * W, SENTINEL, dtype=np.int64)
    has_bwd = bwd_flat >= 0
    rt2[has_bwd] = fwd_flat[bwd_flat[has_bwd]]
    bij_canvas = (rt2 == canvas_ids).reshape(H, W)

    return ProjectionMap(
        crop_index=crop_index,
        crop_shape=(h, w),
        canvas_shape=(H, W),
        forward=fwd_flat.astype(np.int32),
        forward_fill=fwd_fill.ravel().astype(np.int32),
        backward=bwd_flat.astype(np.int32),
        bijective_mask=bij_crop,
        bijective_canvas_mask=bij_canvas,
    )


def build_layout(cyl: CylinderSpec, cam: PerspectiveCamera, n: int) -> CropLayout:
    """Ring of n crops at evenly spaced yaws 2*pi*k/n covering the full cylinder.

    Raises LayoutError naming the first uncovered canvas column if any pixel
    ends up with zero covering crops.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if cam.fov_deg * n < 360.0:
        raise LayoutError(
            f"fov {cam.fov_deg} deg * {n} crops = {cam.fov_deg * n:.1f} < 360: cannot cover"
        )
    if abs(cyl.focal_px - cam.focal_px) > 1e-6:
        raise ValueError(
            f"cylinder focal {cyl.focal_px:.4f} != camera focal {cam.focal_px:.4f}"
        )

    cameras = [
        PerspectiveCamera(cam.fov_deg, cam.width, cam.height, yaw=2.0 * math.pi * k / n)
        for k in range(n)
    ]
    maps = [_build_map(c, cyl, k) for k, c in enumerate(cameras)]
    coverage = np.zeros((cyl.height, cyl.width), dtype=np.int32)
    for m in maps:
        coverage += m.covered.astype(np.int32)
    if (coverage == 0).any():
        col = int(np.flatnonzero((coverage == 0).any(axis=0))[0])
        raise LayoutError(f"coverage gap: canvas column {col} covered by zero crops")
    return CropLayout(
        n=n,
        cameras=cameras,
        maps=maps,
        coverage=coverage,
        canvas_shape=(cyl.height, cyl.width),
        cyclic=True,
        cyl=cyl,
    )


def build_flat_layout(width: int, cam: PerspectiveCamera, n: int) -> CropLayout:
    """Non-cyclic strip of n plain crop windows evenly spanning a wide canvas.

    The identical projection code path as the cylindrical layout, with
    F_i reduced to a window shift (wide-image mode, no wraparound).
    """
    h, w = cam.height, cam.width
    if n < 1:
        raise ValueError("n must be >= 1")
    if width < w:
        raise LayoutError(f"canvas width {width} narrower than crop width {w}")
    if n == 1:
        offsets = [0] if width == w else None
        if offsets is None:
            raise LayoutError("single crop cannot cover a wider canvas")
    else:
        step = (width - w) / (n - 1)
        if step > w:
            raise LayoutError(f"coverage gap: {n} crops of width {w} leave holes on {width}")
        offsets = [int(round(k * step)) for k in range(n)]

    H, W = h, width
    maps = []
    canvas_ids = np.arange(H * W, dtype=np.int64).reshape(H, W)
    for k, off in enumerate(offsets):
        fwd = canvas_ids[:, off : off + w].ravel().astype(np.int32)
        bwd = np.full((H, W), SENTINEL, dtype=np.int32)
        bwd[:, off : off + w] = np.arange(h * w, dtype=np.int32).reshape(h, w)
        bij = np.ones((h, w), dtype=bool)
        bij_canvas = np.zeros((H, W), dtype=bool)
        bij_canvas[:, off : off + w] = True
        maps.append(
            ProjectionMap(
                crop_index=k,
                crop_shape=(h, w),
                canvas_shape=(H, W),
                forward=fwd,
                forward_fill=fwd.copy(),
                backward=bwd.ravel().astype(np.int32),
                bijective_mask=bij,
                bijective_canvas_mask=bij_canvas,
            )
        )
    cameras = [PerspectiveCamera(cam.fov_deg, w, h, yaw=0.0) for _ in offsets]
    coverage = np.zeros((H, W), dtype=np.int32)
    for m in maps:
        coverage += m.covered.astype(np.int32)
    if (coverage == 0).any():
        col = int(np.flatnonzero((coverage == 0).any(axis=0))[0])
        raise LayoutError(f"coverage gap: canvas column {col} covered by zero crops")
    return CropLayout(
        n=len(offsets),
        cameras=cameras,
        maps=maps,
        coverage=coverage,
        canvas_shape=(H, W),
        cyclic=False,
        cyl=None,
    )


def _flatten_spatial(img: np.ndarray, shape: tuple[int, int], kind: str) -> np.ndarray:
    if img.shape[:2] != shape:
        raise ValueError(f"{kind} shape {img.shape[:2]} does not match map {shape}")
    return img.reshape(shape[0] * shape[1], -1)


def project_forward(pmap: ProjectionMap, canvas: np.ndarray) -> np.ndarray:
    """Gather a crop from the canvas: pure index lookup, no filtering.

    Unmapped crop pixels (canvas band narrower than the crop) receive the
    nearest band-edge value; they are excluded from aggregation weights by
    the backward map never selecting them.
    """
    flat = _flatten_spatial(canvas, pmap.canvas_shape, "canvas")
    out = flat[pmap.forward_fill]
    h, w = pmap.crop_shape
    return out.reshape((h, w) + canvas.shape[2:])


def project_backward(
    pmap: ProjectionMap, crop: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Scatter weight*crop and weight into canvas-sized accumulators.

    Canvas pixels without a backward mapping are left at zero. Accumulators
    are float64 so downstream sums stay order-independent in practice.
    """
    flat = _flatten_spatial(crop, pmap.crop_shape, "crop")
    if weight.shape[:2] != pmap.crop_shape:
        raise ValueError(
            f"weight shape {weight.shape[:2]} does not match crop {pmap.crop_shape}"
        )
    wflat = weight.reshape(-1).astype(np.float64)
    H, W = pmap.canvas_shape
    acc = np.zeros((H * W, flat.shape[1]), dtype=np.float64)
    wacc = np.zeros(H * W, dtype=np.float64)
    covered = pmap.backward >= 0
    src = pmap.backward[covered]
    acc[covered] = flat[src].astype(np.float64) * wflat[src, None]
    wacc[covered] = wflat[src]
    return acc.reshape((H, W) + crop.shape[2:]), wacc.reshape(H, W)
