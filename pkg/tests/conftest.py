import numpy as np
import pytest

from panofuse.geometry import CylinderSpec, PerspectiveCamera, build_layout


def make_cyl_layout(crop_w=30, crop_h=32, fov=90.0, n=5):
    cam = PerspectiveCamera(fov, crop_w, crop_h)
    return build_layout(CylinderSpec.for_camera(cam), cam, n)


@pytest.fixture
def cyl_layout():
    return make_cyl_layout()


def brute_force_aggregate(outputs, masks, layout):
    """Per-pixel normal-equations solve of the crop-fusion quadratic.

    Independent of aggregate_crops: gathers each pixel's (weight, value)
    terms and solves the 1-unknown least-squares system with lstsq.
    """
    H, W = layout.canvas_shape
    first = np.asarray(outputs[0])
    nch = first.shape[2] if first.ndim == 3 else 1
    fused = np.zeros((H * W, nch))
    wsum = np.zeros(H * W)
    flat_out = [np.asarray(o, dtype=np.float64).reshape(-1, nch) for o in outputs]
    flat_m = [np.asarray(m, dtype=np.float64).reshape(-1) for m in masks]
    for c in range(H * W):
        rows_w, rows_v = [], []
        for i, pm in enumerate(layout.maps):
            src = pm.backward[c]
            if src < 0:
                continue
            rows_w.append(flat_m[i][src])
            rows_v.append(flat_out[i][src])
        if not rows_w:
            continue
        wts = np.asarray(rows_w)
        vals = np.asarray(rows_v)
        wsum[c] = wts.sum()
        if wsum[c] <= 0:
            continue
        a = np.sqrt(wts)[:, None]
        for ch in range(nch):
            b = np.sqrt(wts) * vals[:, ch]
            sol, *_ = np.linalg.lstsq(a, b[:, None], rcond=None)
            fused[c, ch] = sol[0, 0]
    shape = (H, W, nch) if first.ndim == 3 else (H, W)
    return fused.reshape(shape), wsum.reshape(H, W)
