"""Deterministic synthetic oracles and procedural fixtures.

These stand in for the pretrained inpainting-denoiser and monocular-depth
models: they exercise every optimization code path with known closed
forms so convergence, exactness, and determinism can be asserted
numerically. The wire-twin functions at the bottom are the authoritative
closed forms mirrored by the HTTP oracle service's synthetic mode; they
restrict themselves to float32 arithmetic and integer-based pseudo-noise
so responses are bit-reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

from panofuse.depthfusion import DepthOracle, PiecewiseLinearMap
from panofuse.geometry import CropLayout, project_forward
from panofuse.sampler import DenoiseCondition, DenoiserOracle


def _rng(*tags: int) -> np.random.Generator:
    entropy = [int(t) & 0xFFFFFFFFFFFFFFFF for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def fixture_panorama(
    height: int, width: int, channels: int = 3, seed: int = 0
) -> np.ndarray:
    """Smooth wrap-continuous canvas in [0, 1]: the fixed point for contraction tests."""
    rng = _rng(seed, 101)
    az = 2.0 * np.pi * np.arange(width) / width
    vert = np.linspace(-1.0, 1.0, height)
    img = np.zeros((height, width, channels), dtype=np.float64)
    for c in range(channels):
        acc = np.zeros((height, width))
        for k in (1, 2, 3):
            amp = rng.uniform(0.05, 0.25)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            acc += amp * np.cos(k * az + phase)[None, :]
        acc += rng.uniform(0.1, 0.3) * vert[:, None]
        img[..., c] = acc
    img -= img.min()
    img /= max(img.max(), 1e-9)
    return img.astype(np.float32)


def fixture_depth(
    height: int,
    width: int,
    seed: int = 0,
    vertical_weight: float = 0.8,
    azimuth_amplitude: float = 0.3,
) -> np.ndarray:
    """Smooth wrap-continuous disparity field, mean 1.4, std ~0.48 (float64).

    Vertically dominated so every crop footprint spans (nearly) the full
    disparity range, which keeps the per-patch alignment fits well coupled.
    """
    rng = _rng(seed, 202)
    az = 2.0 * np.pi * np.arange(width) / width
    vert = np.linspace(-1.0, 1.0, height)
    d = vertical_weight * vert[:, None] * np.ones((height, width))
    for k in (1, 2, 4):
        amp = (azimuth_amplitude / 3.0) * rng.uniform(0.5, 1.0)
        d += amp * np.cos(k * az + rng.uniform(0, 2 * np.pi))[None, :]
    return d + 1.4


class IdentityDenoiser(DenoiserOracle):
    """denoise_step returns its input unchanged; renoise is the identity."""

    def __init__(self, steps: int = 1):
        self.steps = steps

    def denoise_step(self, crop_state, t, condition, crop_index):
        return crop_state

    def renoise(self, clean, t):
        return clean


class ContractiveDenoiser(DenoiserOracle):
    """Moves each crop a fixed fraction toward its view of a fixed-point canvas.

    With condition_blend > 0 the per-crop target mixes in the condition
    content, coupling successive outer iterations so the condition canvas
    converges geometrically toward the fixed point.
    """

    def __init__(
        self,
        target: np.ndarray,
        layout: CropLayout,
        steps: int = 10,
        rate: float = 0.5,
        condition_blend: float = 0.0,
        noise_scale: float = 0.05,
        seed: int = 0,
    ):
        self.steps = steps
        self.rate = rate
        self.condition_blend = condition_blend
        self.noise_scale = noise_scale
        self.seed = seed
        self._targets = [
            project_forward(m, np.asarray(target, dtype=np.float32)) for m in layout.maps
        ]

    def denoise_step(self, crop_state, t, condition: DenoiseCondition, crop_index: int):
        tgt = self._targets[crop_index]
        if self.condition_blend > 0.0:
            tgt = (1.0 - self.condition_blend) * tgt + self.condition_blend * condition.known
        return (crop_state + self.rate * (tgt - crop_state)).astype(np.float32)

    def renoise(self, clean, t):
        if t == 0:
            return clean
        noise = _rng(self.seed, 12, t).standard_normal(clean.shape).astype(np.float32)
        return (clean + self.noise_scale * (t / self.steps) * noise).astype(np.float32)


class GroundTruthDepthOracle(DepthOracle):
    """Returns the crop of a known canvas depth: patches mutually consistent."""

    def __init__(self, depth_canvas: np.ndarray, layout: CropLayout):
        self._patches = [
            project_forward(m, np.asarray(depth_canvas, dtype=np.float64)) for m in layout.maps
        ]

    def estimate(self, crop, crop_index):
        return self._patches[crop_index]


class DistortedDepthOracle(DepthOracle):
    """Ground-truth patches through per-patch random monotone piecewise-linear
    distortions plus i.i.d. Gaussian noise: the depth-fusion recovery fixture.

    Default distortion magnitudes mirror how monocular estimators actually
    disagree between overlapping patches (modest slope/shift drift);
    alternating minimization converges at a rate set by that magnitude, so
    the 4-iteration recovery bound is calibrated against these defaults.
    """

    def __init__(
        self,
        depth_canvas: np.ndarray,
        layout: CropLayout,
        seed: int = 0,
        distort_segments: int = 2,
        slope_range: tuple[float, float] = (0.96, 1.05),
        shift_range: tuple[float, float] = (-0.03, 0.03),
        noise_sigma: float = 0.01,
        identity_index: int | None = 0,
    ):
        d = np.asarray(depth_canvas, dtype=np.float64)
        self.noise_sigma = noise_sigma
        self.seed = seed
        self._patches = [project_forward(m, d) for m in layout.maps]
        lo, hi = float(d.min()), float(d.max())
        span = max(hi - lo, 1e-9)
        self.distortions: list[PiecewiseLinearMap] = []
        for i in range(layout.n):
            if identity_index is not None and i == identity_index:
                self.distortions.append(PiecewiseLinearMap.identity(lo, hi, 1))
                continue
            rng = _rng(seed, 33, i)
            knots = np.linspace(lo - 0.05 * span, hi + 0.05 * span, distort_segments + 1)
            slopes = rng.uniform(*slope_range, size=distort_segments)
            values = knots[0] + rng.uniform(*shift_range)
            values = values + np.concatenate(([0.0], np.cumsum(slopes * np.diff(knots))))
            self.distortions.append(PiecewiseLinearMap.from_knot_values(knots, values))

    def estimate(self, crop, crop_index):
        gt = self._patches[crop_index]
        noisy = self.distortions[crop_index](gt)
        if self.noise_sigma > 0:
            noisy = noisy + _rng(self.seed, 34, crop_index).normal(
                0.0, self.noise_sigma, size=gt.shape
            )
        return noisy


class ConstantDepthOracle(DepthOracle):
    def __init__(self, value: float = 1.0):
        self.value = value

    def estimate(self, crop, crop_index):
        return np.full(crop.shape[:2], self.value, dtype=np.float64)


class AffineLumaDepthOracle(DepthOracle):
    """Content-based synthetic depth: per-patch affine map of crop luminance.

    Distinct per-patch coefficients emulate the inconsistent relative range
    of real monocular estimators, so fusion has actual work to do.
    """

    def __init__(self, seed: int = 0, distort: bool = True):
        self.seed = seed
        self.distort = distort

    def estimate(self, crop, crop_index):
        lum = np.asarray(crop, dtype=np.float64)
        if lum.ndim == 3:
            lum = lum.mean(axis=2)
        if not self.distort:
            return lum + 0.5
        rng = _rng(self.seed, 55, crop_index)
        a = rng.uniform(0.8, 1.25)
        b = rng.uniform(-0.2, 0.2)
        return a * (lum + 0.5) + b


# ---------------------------------------------------------------------------
# Wire twins: the authoritative synthetic closed forms of the oracle service.
# float32 arithmetic and integer-derived pseudo-noise only, so the in-process
# and over-the-wire paths agree bit for bit.
# ---------------------------------------------------------------------------

DITHER_AMPLITUDE = np.float32(0.001)


def wire_uniform(shape: tuple[int, ...], *tags: int) -> np.ndarray:
    """Pseudo-noise in [-1, 1): PCG64 integer stream scaled in float32."""
    ints = _rng(*tags).integers(0, 2**31, size=shape, dtype=np.int64)
    return (ints.astype(np.float32) / np.float32(2**30)) - np.float32(1.0)


def wire_denoise_identity(state: np.ndarray, mask, known, t: int, seed: int) -> np.ndarray:
    return np.asarray(state, dtype=np.float32)


def wire_denoise_blend(
    state: np.ndarray, mask: np.ndarray, known: np.ndarray, t: int, seed: int
) -> np.ndarray:
    """Synthesized pixels move halfway to the condition plus a seeded dither;
    known pixels pass through: out = mask * (0.5*(state+known) + a*u) + (1-mask)*state."""
    state = np.asarray(state, dtype=np.float32)
    known = np.asarray(known, dtype=np.float32)
    m = np.asarray(mask, dtype=np.float32)
    if state.ndim == 3 and m.ndim == 2:
        m = m[..., None]
    u = wire_uniform(state.shape, seed, 71, t)
    blended = np.float32(0.5) * (state + known) + DITHER_AMPLITUDE * u
    return (m * blended + (np.float32(1.0) - m) * state).astype(np.float32)


def wire_depth_constant(crop: np.ndarray, seed: int) -> np.ndarray:
    return np.ones(np.asarray(crop).shape[:2], dtype=np.float32)


def wire_depth_luma_affine(crop: np.ndarray, seed: int) -> np.ndarray:
    """depth = a*luma + b with a = 1 + (seed mod 7 - 3)/20, b = (seed mod 11)/100."""
    c = np.asarray(crop, dtype=np.float32)
    lum = c.mean(axis=2, dtype=np.float32) if c.ndim == 3 else c
    a = np.float32(1.0) + np.float32((seed % 7) - 3) / np.float32(20.0)
    b = np.float32(seed % 11) / np.float32(100.0)
    return (a * lum + b).astype(np.float32)


WIRE_DENOISE_FNS = {"identity": wire_denoise_identity, "blend": wire_denoise_blend}
WIRE_DEPTH_FNS = {"constant": wire_depth_constant, "luma_affine": wire_depth_luma_affine}
