"""Deterministic synthetic oracle functions (documented closed forms).

These must stay bit-identical to the client package's in-process twins,
so they restrict themselves to float32 arithmetic and integer-derived
pseudo-noise (no transcendental libm calls):

  pseudo-noise u = PCG64(SeedSequence([seed & M64, 71, t])).integers(0, 2**31)
                   -> float32 / 2**30 - 1                       (~[-1, 1])
  denoise "identity": out = state
  denoise "blend":    out = mask * (0.5*(state + known) + 0.001*u)
                          + (1 - mask) * state
  depth "constant":   out = 1
  depth "luma_affine": out = a * mean_channels(crop) + b,
                       a = 1 + ((seed mod 7) - 3)/20, b = (seed mod 11)/100
"""

from __future__ import annotations

import numpy as np

DITHER_AMPLITUDE = np.float32(0.001)
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _rng(*tags: int) -> np.random.Generator:
    entropy = [int(t) & _MASK64 for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def pseudo_uniform(shape: tuple[int, ...], *tags: int) -> np.ndarray:
    ints = _rng(*tags).integers(0, 2**31, size=shape, dtype=np.int64)
    return (ints.astype(np.float32) / np.float32(2**30)) - np.float32(1.0)


def denoise_identity(state, mask, known, t: int, seed: int) -> np.ndarray:
    return np.asarray(state, dtype=np.float32)


def denoise_blend(state, mask, known, t: int, seed: int) -> np.ndarray:
    state = np.asarray(state, dtype=np.float32)
    known = np.asarray(known, dtype=np.float32)
    m = np.asarray(mask, dtype=np.float32)
    if state.ndim == 3 and m.ndim == 2:
        m = m[..., None]
    u = pseudo_uniform(state.shape, seed, 71, t)
    blended = np.float32(0.5) * (state + known) + DITHER_AMPLITUDE * u
    return (m * blended + (np.float32(1.0) - m) * state).astype(np.float32)


def depth_constant(crop, seed: int) -> np.ndarray:
    return np.ones(np.asarray(crop).shape[:2], dtype=np.float32)


def depth_luma_affine(crop, seed: int) -> np.ndarray:
    c = np.asarray(crop, dtype=np.float32)
    lum = c.mean(axis=2, dtype=np.float32) if c.ndim == 3 else c
    a = np.float32(1.0) + np.float32((seed % 7) - 3) / np.float32(20.0)
    b = np.float32(seed % 11) / np.float32(100.0)
    return (a * lum + b).astype(np.float32)


DENOISE_FNS = {"identity": denoise_identity, "blend": denoise_blend}
DEPTH_FNS = {"constant": depth_constant, "luma_affine": depth_luma_affine}
