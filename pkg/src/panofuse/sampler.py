"""Crop-fused conditional denoising on the cylindrical canvas.

One outer iteration runs two stages: stage 1 denoises every overlapping
crop with an inpainting-denoiser oracle and fuses the outputs with the
closed-form per-pixel weighted mean; stage 2 replaces the condition
canvas with the freshly denoised result (re-stamping the user's input
pixels). Alternating the stages propagates the input's context around
the full canvas and removes crop seams.
"""

from __future__ import annotations

import abc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from panofuse.geometry import CropLayout, project_backward, project_forward


class SamplerError(RuntimeError):
    pass


class UncoveredPixelError(SamplerError):
    """An unknown-region pixel received zero aggregation weight."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned placement on the canvas (no wraparound)."""

    top: int
    left: int
    height: int
    width: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.top, self.top + self.height), slice(self.left, self.left + self.width))

    def validate(self, canvas_shape: tuple[int, int]) -> None:
        H, W = canvas_shape
        if self.top < 0 or self.left < 0 or self.top + self.height > H or self.left + self.width > W:
            raise ValueError(f"placement {self} does not fit canvas {canvas_shape}")


@dataclass
class DenoiseCondition:
    """Per-crop conditioning: prompt, synthesize-mask (1 = generate), condition content."""

    prompt: str
    mask: np.ndarray
    known: np.ndarray

    def __post_init__(self):
        vals = np.unique(self.mask)
        if not np.isin(vals, (0.0, 1.0)).all():
            raise ValueError("condition mask must be binary 0/1")
        if not np.isfinite(self.known).all():
            raise ValueError("condition content must be finite")


class DenoiserOracle(abc.ABC):
    """Inpainting denoiser behind a deterministic interface.

    Contract: `denoise_step` maps a crop state at step t to step t-1 and is
    deterministic given (inputs, seed); output shape equals input shape.
    `renoise` injects schedule-appropriate noise into clean content to match
    step t, with renoise(x, 0) == x exactly. `concurrency` > 1 permits the
    per-crop calls of one step to run on worker threads.
    """

    steps: int = 1
    concurrency: int = 1

    @abc.abstractmethod
    def denoise_step(
        self, crop_state: np.ndarray, t: int, condition: DenoiseCondition, crop_index: int
    ) -> np.ndarray: ...

    @abc.abstractmethod
    def renoise(self, clean: np.ndarray, t: int) -> np.ndarray: ...


@dataclass
class CanvasState:
    """Evolving canvas J at denoising step t with the unknown-region mask."""

    J: np.ndarray
    t: int
    unknown_mask: np.ndarray
    input_rect: Rect

    def __post_init__(self):
        known = self.unknown_mask == 0
        expected = np.zeros_like(known)
        expected[self.input_rect.slices] = True
        if not np.array_equal(known, expected):
            raise ValueError("unknown_mask must be 0 exactly on input_rect and 1 elsewhere")
        if not np.isfinite(self.J).all():
            raise ValueError("canvas state must be finite")


@dataclass
class ConditionCanvas:
    """Condition image L; its input_rect pixels always equal the user input."""

    L: np.ndarray
    generation: int
    input_rect: Rect
    input_image: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.L[self.input_rect.slices], self.input_image):
            raise ValueError("condition canvas must equal the input image on input_rect")


@dataclass(frozen=True)
class SamplerConfig:
    outer_iters: int = 20
    inner_steps: int = 10
    seed: int = 0
    second_term_weight: float = 0.0
    prompt: str = ""
    early_stop_rmse: float | None = None

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_steps < 1:
            raise ValueError("outer_iters and inner_steps must be >= 1")


def aggregate_crops(
    outputs: list[np.ndarray],
    masks: list[np.ndarray],
    layout: CropLayout,
    unknown_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse per-crop outputs into the canvas by the mask-weighted per-pixel mean.

    This is the exact closed-form minimizer of the per-step quadratic fusion
    objective. Returns the fused canvas and the residual weight map; pixels
    with zero total weight are left at zero for the caller's known-content
    injection. If `unknown_mask` is given, a zero-weight pixel inside the
    unknown region raises UncoveredPixelError.
    """
    if len(outputs) != layout.n or len(masks) != layout.n:
        raise ValueError(f"expected {layout.n} outputs/masks, got {len(outputs)}/{len(masks)}")
    H, W = layout.canvas_shape
    nch = outputs[0].shape[2] if outputs[0].ndim == 3 else 1
    value = np.zeros((H * W, nch), dtype=np.float64)
    wsum = np.zeros(H * W, dtype=np.float64)
    for out, m, pmap in zip(outputs, masks, layout.maps):
        acc, wacc = project_backward(pmap, out, m)
        value += acc.reshape(H * W, nch)
        wsum += wacc.reshape(H * W)
    pos = wsum > 0
    fused = np.zeros_like(value)
    fused[pos] = value[pos] / wsum[pos, None]
    if unknown_mask is not None:
        bad = (~pos) & (unknown_mask.reshape(-1) != 0) & (layout.coverage.reshape(-1) == 0)
        # zero-weight unknown pixels adjacent to the input rect are legal
        # (mask round-off); only genuinely uncovered ones are fatal
        if bad.any():
            raise UncoveredPixelError(
                f"{int(bad.sum())} unknown pixels received zero weight and have no covering crop"
            )
    fused = fused.reshape((H, W, nch) if outputs[0].ndim == 3 else (H, W))
    return fused.astype(outputs[0].dtype), wsum.reshape(H, W)


def _denoise_all(
    oracle: DenoiserOracle,
    crops: list[np.ndarray],
    t: int,
    conds: list[DenoiseCondition],
) -> list[np.ndarray]:
    """Run the n independent per-crop oracle calls, preserving crop order."""

    def call(i: int) -> np.ndarray:
        try:
            out = oracle.denoise_step(crops[i], t, conds[i], i)
        except Exception as exc:
            raise SamplerError(f"oracle failed on crop {i} at step {t}: {exc}") from exc
        if out.shape != crops[i].shape:
            raise SamplerError(
                f"oracle output shape {out.shape} != crop shape {crops[i].shape} "
                f"(crop {i}, step {t})"
            )
        return out

    if oracle.concurrency > 1 and len(crops) > 1:
        with ThreadPoolExecutor(max_workers=oracle.concurrency) as pool:
            futures = [pool.submit(call, i) for i in range(len(crops))]
            return [f.result() for f in futures]
    return [call(i) for i in range(len(crops))]


def stage1_denoise(
    state: CanvasState,
    L: ConditionCanvas,
    oracle: DenoiserOracle,
    layout: CropLayout,
    config: SamplerConfig,
) -> np.ndarray:
    """Denoise the canvas from step t=T down to the clean image J0.

    Every step crops the current canvas, denoises each crop conditioned on
    (prompt, mask, condition crop), fuses with aggregate_crops, and then
    overwrites zero-weight / known pixels with renoised condition content.
    When second_term_weight > 0, the final step blends the fused image with
    the condition canvas (the exact minimizer of the joint quadratic).
    """
    U = state.unknown_mask
    rect = state.input_rect
    J = state.J.copy()
    # U and L are fixed for the whole stage: precompute masks and condition crops
    masks = [project_forward(m, U) for m in layout.maps]
    conds = [
        DenoiseCondition(config.prompt, masks[i], project_forward(layout.maps[i], L.L))
        for i in range(layout.n)
    ]
    for t in range(state.t, 0, -1):
        crops = [project_forward(m, J) for m in layout.maps]
        outs = _denoise_all(oracle, crops, t, conds)
        fused, wsum = aggregate_crops(outs, masks, layout, unknown_mask=U)
        if t == 1 and config.second_term_weight > 0.0:
            lam = config.second_term_weight
            w = wsum[..., None] if fused.ndim == 3 else wsum
            num = fused.astype(np.float64) * w + lam * L.L.astype(np.float64)
            fused = (num / (w + lam)).astype(J.dtype)
        inject = (wsum == 0) | (U == 0)
        if inject.any():
            renoised = oracle.renoise(L.L, t - 1)
            fused[inject] = renoised[inject]
        J = fused
    return J


def stage2_update(L: ConditionCanvas, J0: np.ndarray) -> ConditionCanvas:
    """Replace the condition canvas with J0, re-stamping the input pixels."""
    newL = J0.copy()
    newL[L.input_rect.slices] = L.input_image
    return replace(L, L=newL, generation=L.generation + 1)


def seam_metric(canvas: np.ndarray, layout: CropLayout) -> tuple[float, float]:
    """Mean |horizontal gradient| across crop-boundary columns vs. interior columns."""
    H, W = layout.canvas_shape
    img = canvas.reshape(H, W, -1).astype(np.float64)
    if layout.cyclic:
        grad = np.abs(np.roll(img, -1, axis=1) - img).mean(axis=(0, 2))
    else:
        grad = np.abs(img[:, 1:] - img[:, :-1]).mean(axis=(0, 2))
    bcols = layout.boundary_columns()
    idx = set()
    for b in bcols:
        idx.add(int(b) % grad.shape[0])
        idx.add((int(b) - 1) % grad.shape[0])
    sel = np.zeros(grad.shape[0], dtype=bool)
    sel[list(idx)] = True
    boundary = float(grad[sel].mean()) if sel.any() else 0.0
    interior = float(grad[~sel].mean()) if (~sel).any() else 0.0
    return boundary, interior


def _init_noise(shape: tuple[int, ...], seed: int, outer_iter: int) -> np.ndarray:
    # re-drawn per outer iteration: keeps iterations i.i.d. yet reproducible
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, 11, outer_iter]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
    return rng.standard_normal(shape).astype(np.float32)


def run(
    input_image: np.ndarray,
    placement: Rect,
    oracle: DenoiserOracle,
    layout: CropLayout,
    config: SamplerConfig,
) -> tuple[np.ndarray, list[dict]]:
    """Alternate stage 1 / stage 2 for outer_iters iterations.

    Returns the final condition canvas (equal to the last clean image outside
    the input placement) and per-iteration diagnostics: RMSE between
    successive condition canvases and the crop-boundary seam metric.
    """
    H, W = layout.canvas_shape
    placement.validate((H, W))
    inp = np.asarray(input_image, dtype=np.float32)
    if inp.shape[:2] != (placement.height, placement.width):
        raise ValueError(
            f"input image {inp.shape[:2]} does not match placement "
            f"{(placement.height, placement.width)}"
        )
    nch = inp.shape[2] if inp.ndim == 3 else 1
    canvas_shape = (H, W, nch) if inp.ndim == 3 else (H, W)

    U = np.ones((H, W), dtype=np.float32)
    U[placement.slices] = 0.0
    L0 = np.zeros(canvas_shape, dtype=np.float32)
    L0[placement.slices] = inp
    L = ConditionCanvas(L=L0, generation=0, input_rect=placement, input_image=inp)

    T = oracle.steps
    if config.inner_steps != T:
        raise ValueError(f"config.inner_steps={config.inner_steps} but oracle.steps={T}")

    diagnostics: list[dict] = []
    prev = L.L.copy()
    for k in range(config.outer_iters):
        state = CanvasState(
            J=_init_noise(canvas_shape, config.seed, k), t=T, unknown_mask=U, input_rect=placement
        )
        J0 = stage1_denoise(state, L, oracle, layout, config)
        if not np.isfinite(J0).all():
            raise SamplerError(f"non-finite canvas at outer iteration {k}")
        L = stage2_update(L, J0)
        rmse = float(np.sqrt(np.mean((L.L.astype(np.float64) - prev.astype(np.float64)) ** 2)))
        boundary, interior = seam_metric(L.L, layout)
        diagnostics.append(
            {
                "iteration": k,
                "rmse_prev": rmse,
                "seam_boundary_grad": boundary,
                "seam_interior_grad": interior,
            }
        )
        prev = L.L.copy()
        if config.early_stop_rmse is not None and k > 0 and rmse < config.early_stop_rmse:
            break
    return L.L, diagnostics
