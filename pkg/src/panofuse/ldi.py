"""Layered decomposition of panorama+depth and per-pixel Gaussian initialization.

Pixels are grouped into four disparity layers by agglomerative merging of
a 256-bin disparity histogram (average linkage on disjoint 1D clusters
reduces to the weighted-mean gap, so merges stay adjacent). Each layer's
disoccluded band is filled by harmonic neighborhood diffusion from the
layer's own pixels - a deliberately simple fallback, flagged per pixel so
a downstream learned inpainter can redo it. Finally every occupied or
filled pixel becomes one Gaussian seed, unprojected from the cylinder at
radius 1/disparity, exportable as binary PLY.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from panofuse.depthfusion import PanoDepth
from panofuse.geometry import CylinderSpec


class LdiError(RuntimeError):
    pass


@dataclass
class LdiLayer:
    color: np.ndarray
    depth: np.ndarray
    occupancy: np.ndarray
    filled: np.ndarray | None = None

    def __post_init__(self):
        if self.filled is None:
            self.filled = np.zeros(self.occupancy.shape, dtype=bool)

    @property
    def active(self) -> np.ndarray:
        return self.occupancy | self.filled

    def mean_disparity(self) -> float:
        return float(self.depth[self.occupancy].mean()) if self.occupancy.any() else float("nan")


@dataclass
class LayeredDepthImage:
    layers: list[LdiLayer]
    canvas_shape: tuple[int, int]
    cyclic: bool = True
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 4
    linkage: str = "average"
    bins: int = 256
    min_cluster_frac: float = 0.0


@dataclass(frozen=True)
class GaussianSeed:
    position: np.ndarray    # (3,) float32
    color: np.ndarray       # (3,) float32 linear RGB, no spherical harmonics
    rotation: np.ndarray    # (4,) float32 quaternion, identity at init
    scale: np.ndarray       # (3,) float32 isotropic pixel footprint
    opacity: float          # 0.5 exactly at init
    layer_id: int


def _merge_adjacent_1d(centers: np.ndarray, counts: np.ndarray, k: int) -> np.ndarray:
    """Average-linkage agglomeration of weighted 1D points down to k clusters.

    For disjoint ordered clusters the average pairwise distance equals the
    difference of weighted means, so the closest pair is always adjacent;
    returns a cluster label per input point (labels ordered by value).
    """
    groups = [[i] for i in range(centers.size)]
    sums = [counts[i] * centers[i] for i in range(centers.size)]
    wts = [float(counts[i]) for i in range(centers.size)]
    while len(groups) > k:
        means = [s / w for s, w in zip(sums, wts)]
        gaps = np.diff(means)
        j = int(np.argmin(gaps))
        groups[j] += groups[j + 1]
        sums[j] += sums[j + 1]
        wts[j] += wts[j + 1]
        del groups[j + 1], sums[j + 1], wts[j + 1]
    labels = np.empty(centers.size, dtype=np.int64)
    for lab, grp in enumerate(groups):
        labels[grp] = lab
    return labels


def cluster_layers(
    pano: np.ndarray, depth: PanoDepth, cfg: ClusterConfig = ClusterConfig(), cyclic: bool = True
) -> LayeredDepthImage:
    """Partition the canvas into disparity layers, foreground (layer 0) first.

    Fewer distinct disparity modes than cfg.k yields fewer layers with a
    warning; the occupancy masks always partition the canvas exactly.
    """
    d = np.asarray(depth.D, dtype=np.float64)
    if not np.isfinite(d).all():
        raise LdiError("depth must be finite everywhere for layer clustering")
    H, W = d.shape
    lo, hi = float(d.min()), float(d.max())
    if hi - lo < 1e-12:
        warnings.warn("constant disparity: single layer, no decomposition", RuntimeWarning)
        bin_of = np.zeros((H, W), dtype=np.int64)
        nonempty = np.array([0])
        centers = np.array([lo])
        counts = np.array([d.size])
    else:
        width = (hi - lo) / cfg.bins
        bin_of = np.clip(((d - lo) / width).astype(np.int64), 0, cfg.bins - 1)
        counts_all = np.bincount(bin_of.ravel(), minlength=cfg.bins)
        nonempty = np.flatnonzero(counts_all)
        centers = lo + (nonempty + 0.5) * width
        counts = counts_all[nonempty]

    k = min(cfg.k, nonempty.size)
    if k < cfg.k:
        warnings.warn(
            f"only {nonempty.size} distinct disparity modes: producing {k} layers "
            f"instead of {cfg.k}",
            RuntimeWarning,
        )
    labels_of_bin = _merge_adjacent_1d(centers, counts.astype(np.float64), k)

    if cfg.min_cluster_frac > 0.0:
        total = d.size
        while True:
            sizes = np.array(
                [counts[labels_of_bin == lab].sum() for lab in range(labels_of_bin.max() + 1)]
            )
            small = np.flatnonzero(sizes < cfg.min_cluster_frac * total)
            if small.size == 0 or len(np.unique(labels_of_bin)) == 1:
                break
            lab = int(small[0])
            neighbor = lab - 1 if lab > 0 else lab + 1
            warnings.warn(
                f"merging undersized disparity layer {lab} into {neighbor}", RuntimeWarning
            )
            labels_of_bin[labels_of_bin == lab] = neighbor
            labels_of_bin = np.unique(labels_of_bin, return_inverse=True)[1]

    lut = np.zeros(cfg.bins, dtype=np.int64)
    lut[nonempty] = labels_of_bin
    pixel_label = lut[bin_of]

    # order layers by mean disparity, largest (nearest) first
    n_layers = int(labels_of_bin.max()) + 1
    means = np.array([d[pixel_label == lab].mean() for lab in range(n_layers)])
    order = np.argsort(-means)
    pano = np.asarray(pano)
    layers = []
    for rank, lab in enumerate(order):
        occ = pixel_label == lab
        color = np.where(occ[..., None] if pano.ndim == 3 else occ, pano, 0).astype(np.float32)
        layers.append(
            LdiLayer(
                color=color,
                depth=np.where(occ, d, 0.0),
                occupancy=occ,
            )
        )
    md = means[order]
    if (np.diff(md) >= 0).any():
        raise LdiError("layer mean disparities are not strictly decreasing")
    return LayeredDepthImage(
        layers=layers, canvas_shape=(H, W), cyclic=cyclic, metadata={"num_layers": n_layers}
    )


def _neighbor_stack(a: np.ndarray, cyclic: bool) -> list[np.ndarray]:
    """4-neighborhood shifts; columns wrap on cyclic canvases, rows never do."""
    left = np.roll(a, 1, axis=1)
    right = np.roll(a, -1, axis=1)
    if not cyclic:
        left[:, 0] = 0
        right[:, -1] = 0
    up = np.zeros_like(a)
    up[1:] = a[:-1]
    down = np.zeros_like(a)
    down[:-1] = a[1:]
    return [left, right, up, down]


def _diffuse_fill(
    values: np.ndarray, known: np.ndarray, target: np.ndarray, cyclic: bool,
    relax_iters: int = 400, tol: float = 1e-8,
) -> np.ndarray:
    """Fill `target` from `known` by onion-peel init then Jacobi relaxation.

    The relaxation converges to the discrete harmonic extension where the
    target is enclosed by known pixels (constants and linear ramps are
    reproduced exactly up to the tolerance).
    """
    vals = values.astype(np.float64).copy()
    have = known.copy()
    vals[~have] = 0.0
    # onion peel: propagate the known front inward one ring at a time
    while True:
        want = target & ~have
        if not want.any():
            break
        nb_have = _neighbor_stack(have.astype(np.float64), cyclic)
        nb_vals = _neighbor_stack(vals, cyclic)
        cnt = sum(nb_have)
        ssum = sum(v * h for v, h in zip(nb_vals, nb_have))
        frontier = want & (cnt > 0)
        if not frontier.any():
            break  # unreachable pixels (disconnected target)
        vals[frontier] = ssum[frontier] / cnt[frontier]
        have |= frontier
    # Jacobi sweeps toward the harmonic fill, Dirichlet on the known pixels
    fillable = target & have & ~known
    if not fillable.any():
        return vals
    for _ in range(relax_iters):
        nb_have = _neighbor_stack(have.astype(np.float64), cyclic)
        nb_vals = _neighbor_stack(vals, cyclic)
        cnt = sum(nb_have)
        ssum = sum(v * h for v, h in zip(nb_vals, nb_have))
        new = np.where(fillable & (cnt > 0), ssum / np.maximum(cnt, 1.0), vals)
        change = np.max(np.abs(new - vals)) if fillable.any() else 0.0
        vals = new
        if change < tol:
            break
    return vals


def _dilate(mask: np.ndarray, px: int, cyclic: bool) -> np.ndarray:
    out = mask.copy()
    for _ in range(px):
        nb = _neighbor_stack(out.astype(np.uint8), cyclic)
        out = out | (sum(nb) > 0)
    return out


def fill_holes(ldi: LayeredDepthImage, band_px: int = 16) -> LayeredDepthImage:
    """Complete each layer's disoccluded band (pixels hidden by nearer layers).

    Color and depth diffuse in from the layer's own pixels out to band_px;
    filled pixels are flagged so downstream tools can re-inpaint them.
    """
    new_layers = []
    H, W = ldi.canvas_shape
    nearer = np.zeros((H, W), dtype=bool)
    for li, layer in enumerate(ldi.layers):
        if not layer.occupancy.any():
            new_layers.append(layer)
            continue
        target = nearer & ~layer.occupancy
        if band_px > 0:
            target &= _dilate(layer.occupancy, band_px, ldi.cyclic)
        if target.any():
            color = layer.color.astype(np.float64)
            if color.ndim == 3:
                chans = [
                    _diffuse_fill(color[..., c], layer.occupancy, target, ldi.cyclic)
                    for c in range(color.shape[2])
                ]
                color = np.stack(chans, axis=-1)
            else:
                color = _diffuse_fill(color, layer.occupancy, target, ldi.cyclic)
            depth = _diffuse_fill(layer.depth, layer.occupancy, target, ldi.cyclic)
            filled = target & ~layer.occupancy
            new_layers.append(
                LdiLayer(
                    color=color.astype(np.float32),
                    depth=depth,
                    occupancy=layer.occupancy,
                    filled=filled,
                )
            )
        else:
            new_layers.append(layer)
        nearer |= layer.occupancy
    meta = dict(ldi.metadata)
    meta["fill_method"] = "neighborhood-diffusion-fallback"
    meta["fill_band_px"] = band_px
    return LayeredDepthImage(
        layers=new_layers, canvas_shape=ldi.canvas_shape, cyclic=ldi.cyclic, metadata=meta
    )


def init_gaussians(ldi: LayeredDepthImage, cyl: CylinderSpec) -> list[GaussianSeed]:
    """One Gaussian per occupied or filled layer pixel, unprojected to 3D.

    Radius = 1/disparity; azimuth 0 faces +z with y up; the isotropic scale
    is the pixel's angular footprint times the radius, so doubling disparity
    halves both the distance and the scale. Non-positive disparities are
    skipped with a warning naming the count.
    """
    H, W = ldi.canvas_shape
    if (H, W) != (cyl.height, cyl.width):
        raise LdiError(f"LDI canvas {(H, W)} does not match cylinder {(cyl.height, cyl.width)}")
    px_angle = 2.0 * np.pi / cyl.width
    ccy = (cyl.height - 1) / 2.0
    seeds: list[GaussianSeed] = []
    skipped = 0
    identity_rot = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)
    for li, layer in enumerate(ldi.layers):
        rows, cols = np.nonzero(layer.active)
        if rows.size == 0:
            continue
        disparity = layer.depth[rows, cols]
        ok = disparity > 0
        skipped += int((~ok).sum())
        rows, cols, disparity = rows[ok], cols[ok], disparity[ok]
        radius = 1.0 / disparity
        phi = cols * px_angle
        x = radius * np.sin(phi)
        z = radius * np.cos(phi)
        y = -(rows - ccy) / cyl.focal_px * radius
        scale = (px_angle * radius).astype(np.float32)
        if layer.color.ndim == 3:
            colors = layer.color[rows, cols].astype(np.float32)
        else:
            colors = np.repeat(layer.color[rows, cols, None], 3, axis=1).astype(np.float32)
        pos = np.stack([x, y, z], axis=1).astype(np.float32)
        for j in range(rows.size):
            seeds.append(
                GaussianSeed(
                    position=pos[j],
                    color=colors[j],
                    rotation=identity_rot.copy(),
                    scale=np.full(3, scale[j], dtype=np.float32),
                    opacity=0.5,
                    layer_id=li,
                )
            )
    if skipped:
        warnings.warn(f"skipped {skipped} pixels with non-positive disparity", RuntimeWarning)
    return seeds


_PLY_PROPS = [
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "<f4"), ("green", "<f4"), ("blue", "<f4"),
    ("scale_0", "<f4"), ("scale_1", "<f4"), ("scale_2", "<f4"),
    ("rot_0", "<f4"), ("rot_1", "<f4"), ("rot_2", "<f4"), ("rot_3", "<f4"),
    ("opacity", "<f4"),
    ("layer_id", "u1"),
]
_PLY_TYPE = {"<f4": "float", "u1": "uchar"}


def export_ply(seeds: list[GaussianSeed], path) -> None:
    """Binary little-endian PLY; round-trips through read_ply bit-exactly."""
    if not seeds:
        raise LdiError("cannot export an empty seed list")
    rec = np.empty(len(seeds), dtype=np.dtype(_PLY_PROPS))
    for i, s in enumerate(seeds):
        rec[i] = (
            s.position[0], s.position[1], s.position[2],
            s.color[0], s.color[1], s.color[2],
            s.scale[0], s.scale[1], s.scale[2],
            s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3],
            np.float32(s.opacity),
            np.uint8(s.layer_id),
        )
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(seeds)}"]
    header += [f"property {_PLY_TYPE[t]} {name}" for name, t in _PLY_PROPS]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def read_ply(path) -> list[GaussianSeed]:
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise LdiError(f"{path} is not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    count = None
    props = []
    for line in lines:
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        elif line.startswith("property"):
            _, typ, name = line.split()
            props.append((name, typ))
    expected = [(n, _PLY_TYPE[t]) for n, t in _PLY_PROPS]
    if props != expected or count is None:
        raise LdiError(f"{path}: unexpected PLY schema")
    rec = np.frombuffer(data[end + len(b"end_header\n"):], dtype=np.dtype(_PLY_PROPS), count=count)
    seeds = []
    for r in rec:
        seeds.append(
            GaussianSeed(
                position=np.array([r["x"], r["y"], r["z"]], dtype=np.float32),
                color=np.array([r["red"], r["green"], r["blue"]], dtype=np.float32),
                rotation=np.array(
                    [r["rot_0"], r["rot_1"], r["rot_2"], r["rot_3"]], dtype=np.float32
                ),
                scale=np.array([r["scale_0"], r["scale_1"], r["scale_2"]], dtype=np.float32),
                opacity=float(r["opacity"]),
                layer_id=int(r["layer_id"]),
            )
        )
    return seeds
