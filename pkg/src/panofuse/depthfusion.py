"""Panoramic depth by alternating closed-form aggregation and per-patch alignment.

Monocular depth estimates on overlapping patches are relative and
mutually inconsistent; naive averaging leaves banding at patch seams.
This module alternates two exact subproblem solves: a per-pixel
coverage-normalized mean of the aligned patches (depth stage) and a
constrained least-squares fit of one monotone piecewise-linear map per
patch against the current fused depth (alignment stage). Each half-step
minimizes its subproblem exactly, so the joint objective never increases.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from panofuse.geometry import CropLayout, project_forward


class FusionError(RuntimeError):
    pass


class DepthOracle(abc.ABC):
    """Monocular relative-depth estimator: crop image in, crop-sized depth out."""

    value_range: tuple[float, float] = (0.0, float("inf"))

    @abc.abstractmethod
    def estimate(self, crop: np.ndarray, crop_index: int) -> np.ndarray: ...


@dataclass(frozen=True)
class PiecewiseLinearMap:
    """Continuous piecewise-linear depth alignment with per-segment scale/shift.

    Values outside the knot range extrapolate with the end-segment slope.
    """

    knots: np.ndarray
    scales: np.ndarray
    shifts: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        a = np.asarray(self.scales, dtype=np.float64)
        b = np.asarray(self.shifts, dtype=np.float64)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "scales", a)
        object.__setattr__(self, "shifts", b)
        if k.ndim != 1 or k.size < 2 or (np.diff(k) <= 0).any():
            raise ValueError("knots must be strictly increasing, length >= 2")
        if a.shape != (k.size - 1,) or b.shape != a.shape:
            raise ValueError("scales/shifts must have one entry per segment")
        # continuity at interior knots
        left = a[:-1] * k[1:-1] + b[:-1]
        right = a[1:] * k[1:-1] + b[1:]
        if k.size > 2 and np.max(np.abs(left - right)) > 1e-9 * max(1.0, np.max(np.abs(left))):
            raise ValueError("segments are discontinuous at interior knots")

    @classmethod
    def identity(cls, lo: float, hi: float, segments: int) -> "PiecewiseLinearMap":
        knots = np.linspace(lo, hi, segments + 1)
        return cls(knots, np.ones(segments), np.zeros(segments))

    @classmethod
    def from_knot_values(cls, knots: np.ndarray, values: np.ndarray) -> "PiecewiseLinearMap":
        knots = np.asarray(knots, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        scales = np.diff(values) / np.diff(knots)
        shifts = values[:-1] - scales * knots[:-1]
        return cls(knots, scales, shifts)

    @property
    def segments(self) -> int:
        return self.scales.size

    def knot_values(self) -> np.ndarray:
        v = self.scales * self.knots[:-1] + self.shifts
        return np.append(v, self.scales[-1] * self.knots[-1] + self.shifts[-1])

    def is_monotone(self, eps: float = 0.0) -> bool:
        return bool((self.scales >= eps).all())

    def is_identity(self, tol: float = 0.0) -> bool:
        return bool(
            np.max(np.abs(self.scales - 1.0)) <= tol and np.max(np.abs(self.shifts)) <= tol
        )

    def __call__(self, depth: np.ndarray) -> np.ndarray:
        x = np.asarray(depth, dtype=np.float64)
        if not np.isfinite(x).all():
            raise ValueError("piecewise-linear map input must be finite")
        seg = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.segments - 1)
        return self.scales[seg] * x + self.shifts[seg]


def apply_plmap(pmap: PiecewiseLinearMap, depth: np.ndarray) -> np.ndarray:
    """Evaluate the alignment map on a patch depth (end-slope extrapolation outside knots)."""
    return pmap(depth)


@dataclass
class PanoDepth:
    """Canvas-sized relative disparity (larger = nearer)."""

    D: np.ndarray
    units: str = "disparity"
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.D.shape, dtype=bool)
        if not np.isfinite(self.D[self.valid_mask]).all():
            raise ValueError("depth must be finite on valid_mask")


@dataclass(frozen=True)
class FusionConfig:
    iters: int = 4
    segments: int = 8
    anchor_index: int = 0
    monotone: bool = True
    min_slope: float = 1e-3

    def __post_init__(self):
        if self.iters < 1 or self.segments < 1:
            raise ValueError("iters and segments must be >= 1")


def estimate_patches(
    pano: np.ndarray, layout: CropLayout, oracle: DepthOracle
) -> list[np.ndarray]:
    """One raw depth estimate per crop, oracle called exactly once per crop."""
    patches = []
    for i, pmap in enumerate(layout.maps):
        crop = project_forward(pmap, pano)
        try:
            d = oracle.estimate(crop, i)
        except Exception as exc:
            raise FusionError(f"depth oracle failed on crop {i}: {exc}") from exc
        d = np.asarray(d, dtype=np.float64)
        if d.shape != pmap.crop_shape:
            raise FusionError(f"depth oracle returned {d.shape} for crop {i}, expected {pmap.crop_shape}")
        if not np.isfinite(d).all():
            raise FusionError(f"depth oracle returned non-finite values on crop {i}")
        patches.append(d)
    return patches


@dataclass
class _PatchSamples:
    """Backward-selected sample pairing of one patch with the canvas.

    cov: flat canvas indices covered by the patch; src: the crop pixel
    sourcing each covered canvas pixel. The fusion objective sums squared
    residuals over exactly these pairs.
    """

    cov: np.ndarray
    src: np.ndarray
    raw: np.ndarray  # raw crop depth at src, fixed across iterations


def _patch_samples(raw_patches: list[np.ndarray], layout: CropLayout) -> list[_PatchSamples]:
    out = []
    for raw, pmap in zip(raw_patches, layout.maps):
        cov = np.flatnonzero(pmap.backward >= 0)
        src = pmap.backward[cov]
        out.append(_PatchSamples(cov=cov, src=src, raw=raw.ravel()[src]))
    return out


def fusion_objective(
    D: np.ndarray,
    maps: list[PiecewiseLinearMap],
    samples: list[_PatchSamples],
) -> float:
    d = D.ravel()
    total = 0.0
    for pm, s in zip(maps, samples):
        r = d[s.cov] - pm(s.raw)
        total += float(np.dot(r, r))
    return total


def solve_depth_stage(aligned: list[np.ndarray], layout: CropLayout) -> PanoDepth:
    """Exact minimizer over D: the per-pixel unweighted mean of back-projected patches."""
    H, W = layout.canvas_shape
    value = np.zeros(H * W, dtype=np.float64)
    count = np.zeros(H * W, dtype=np.float64)
    for patch, pmap in zip(aligned, layout.maps):
        p = np.asarray(patch, dtype=np.float64)
        if p.shape != pmap.crop_shape:
            raise ValueError(f"aligned patch shape {p.shape} != crop {pmap.crop_shape}")
        if not np.isfinite(p).all():
            raise ValueError("aligned patches must be finite")
        cov = np.flatnonzero(pmap.backward >= 0)
        value[cov] += p.ravel()[pmap.backward[cov]]
        count[cov] += 1.0
    if (count == 0).any():
        raise FusionError(f"{int((count == 0).sum())} canvas pixels have zero patch coverage")
    return PanoDepth(D=(value / count).reshape(H, W))


def _hat_design(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Dense tent-basis design matrix mapping knot values to predictions at x."""
    K = knots.size - 1
    seg = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, K - 1)
    t = (x - knots[seg]) / (knots[seg + 1] - knots[seg])
    A = np.zeros((x.size, K + 1), dtype=np.float64)
    rows = np.arange(x.size)
    A[rows, seg] = 1.0 - t
    A[rows, seg + 1] += t
    return A


def _merge_sparse_segments(x: np.ndarray, knots: np.ndarray, patch_index: int) -> np.ndarray:
    """Drop knots of segments holding <2 distinct samples, merging them into a neighbor."""
    while knots.size > 2:
        K = knots.size - 1
        seg = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, K - 1)
        counts = np.array([np.unique(x[seg == j]).size for j in range(K)])
        thin = np.flatnonzero(counts < 2)
        if thin.size == 0:
            return knots
        j = int(thin[0])
        # remove the knot separating segment j from its thinner neighbor
        drop = j + 1 if j < K - 1 else j
        knots = np.delete(knots, drop)
        warnings.warn(
            f"patch {patch_index}: merged under-determined alignment segment {j} "
            f"({K} -> {K - 1} segments)",
            RuntimeWarning,
        )
    return knots


def fit_plmap(
    x: np.ndarray,
    y: np.ndarray,
    segments: int,
    monotone: bool = True,
    min_slope: float = 1e-3,
    patch_index: int = -1,
) -> PiecewiseLinearMap:
    """Least-squares piecewise-linear fit of y against x on equal-width knots.

    The continuity-constrained scale/shift parameters are solved through the
    equivalent knot-value parametrization; with the monotone flag the segment
    slopes are kept >= min_slope via bounded least squares on the knot-value
    increments (paper-standard LS machinery, scipy's bvls).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    lo, hi = float(x.min()), float(x.max())
    if hi - lo < 1e-12:
        # slope unidentifiable on a constant patch: keep it 1, fit the shift
        warnings.warn(
            f"patch {patch_index}: constant raw depth, fitting shift only", RuntimeWarning
        )
        shift = float(np.mean(y - x))
        return PiecewiseLinearMap(np.array([lo, lo + 1.0]), np.array([1.0]), np.array([shift]))

    knots = _merge_sparse_segments(x, np.linspace(lo, hi, segments + 1), patch_index)
    A = _hat_design(x, knots)
    if not monotone:
        v, *_ = np.linalg.lstsq(A, y, rcond=None)
        return PiecewiseLinearMap.from_knot_values(knots, v)

    # reparametrize v -> (v0, increments u_j = v_j - v_{j-1}); tent basis sums
    # to 1 so the v0 column is all ones, and u_j >= min_slope * knot_width_j
    K = knots.size - 1
    B = np.empty((x.size, K + 1), dtype=np.float64)
    B[:, 0] = 1.0
    for j in range(1, K + 1):
        B[:, j] = A[:, j:].sum(axis=1)
    lb = np.concatenate(([-np.inf], min_slope * np.diff(knots)))
    res = lsq_linear(B, y, bounds=(lb, np.full(K + 1, np.inf)), method="bvls")
    v0 = res.x[0]
    v = v0 + np.concatenate(([0.0], np.cumsum(res.x[1:])))
    return PiecewiseLinearMap.from_knot_values(knots, v)


def solve_theta_stage(
    D: PanoDepth,
    raw_patches: list[np.ndarray],
    layout: CropLayout,
    config: FusionConfig,
) -> list[PiecewiseLinearMap]:
    """Per-patch exact constrained LS alignment against the fused depth.

    The anchor patch is pinned to the identity map (gauge fix), exactly.
    """
    samples = _patch_samples(raw_patches, layout)
    d = D.D.ravel()
    maps = []
    for i, s in enumerate(samples):
        lo, hi = float(s.raw.min()), float(s.raw.max())
        if i == config.anchor_index:
            span = max(hi - lo, 1e-6)
            maps.append(PiecewiseLinearMap.identity(lo, lo + span, config.segments))
            continue
        maps.append(
            fit_plmap(
                s.raw,
                d[s.cov],
                config.segments,
                monotone=config.monotone,
                min_slope=config.min_slope,
                patch_index=i,
            )
        )
    return maps


def fuse(
    pano: np.ndarray,
    layout: CropLayout,
    oracle: DepthOracle,
    config: FusionConfig = FusionConfig(),
) -> tuple[PanoDepth, list[PiecewiseLinearMap], list[float]]:
    """Alternate the depth and alignment stages for config.iters iterations.

    Returns the fused depth, the per-patch alignment maps, and the objective
    value after every half-step. Both half-steps are exact subproblem
    minimizers, so an objective increase beyond 1e-9 is an internal error.
    """
    if config.anchor_index < 0 or config.anchor_index >= layout.n:
        raise ValueError(f"anchor_index {config.anchor_index} out of range for {layout.n} patches")
    raw = estimate_patches(pano, layout, oracle)
    samples = _patch_samples(raw, layout)
    maps = []
    for s in samples:
        lo, hi = float(s.raw.min()), float(s.raw.max())
        span = max(hi - lo, 1e-6)
        maps.append(PiecewiseLinearMap.identity(lo, lo + span, config.segments))

    history: list[float] = []
    prev = np.inf
    D = None
    for it in range(config.iters):
        aligned = [apply_plmap(m, r) for m, r in zip(maps, raw)]
        D = solve_depth_stage(aligned, layout)
        obj = fusion_objective(D.D, maps, samples)
        if obj > prev + 1e-9:
            raise FusionError(
                f"objective increased after depth stage at iteration {it}: {prev} -> {obj}"
            )
        history.append(obj)
        prev = obj

        maps = solve_theta_stage(D, raw, layout, config)
        obj = fusion_objective(D.D, maps, samples)
        if obj > prev + 1e-9:
            raise FusionError(
                f"objective increased after alignment stage at iteration {it}: {prev} -> {obj}"
            )
        history.append(obj)
        prev = obj
    return D, maps, history
