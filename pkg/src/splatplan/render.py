"""Deterministic CPU splat renderer.

Produces color, expected depth, accumulated opacity, and per-pixel depth/weight
profiles. Every primitive is evaluated against every pixel (no tile culling);
primitives are composited front to back in order of the camera-frame depth of
their means, with per-pixel blend weights

    w_i = alpha_i * prod_{j<i} (1 - alpha_j),

where alpha_i comes from the primitive's opacity times its projected 2D
Gaussian footprint. Entries with w_i below ``min_weight`` are dropped from the
stored profiles but still consume transmittance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import BehindCamera, RenderError
from .geometry import CameraIntrinsics, GaussianPrimitive, Pose, SplatModel, covariance



@dataclass(frozen=True)
class RenderConfig:
    """Renderer knobs.

    weight_form "blend" is the standard per-primitive blend weight; the
    "printed_difference" alternative stores consecutive differences of blend
    weights instead (comparison only — it can produce negative entries and is
    never the default). ``alpha_floor`` bounds the evaluation window of each
    footprint: contributions whose alpha cannot exceed it are skipped, which
    perturbs per-pixel sums by at most primitives * alpha_floor (orders of
    magnitude inside every stated tolerance).
    """

    min_weight: float = 1e-4
    near_plane: float = 0.01
    eigen_floor_px2: float = 0.3
    weight_form: str = "blend"
    alpha_floor: float = 1e-14

    def __post_init__(self):
        if not (0.0 <= self.min_weight <= 0.1):
            raise ValueError("min_weight must be in [0, 0.1]")
        if self.near_plane <= 0:
            raise ValueError("near_plane must be positive")
        if self.weight_form not in ("blend", "printed_difference"):
            raise ValueError(f"unknown weight_form {self.weight_form!r}")
        if not (0.0 <= self.alpha_floor <= 1e-6):
            raise ValueError("alpha_floor must be tiny")


class DepthWeightProfile:
    """Ordered (depth, weight, primitive_index) entries for one pixel."""

    __slots__ = ("depths", "weights", "primitive_indices")

    def __init__(self, depths, weights, primitive_indices):
        self.depths = np.asarray(depths, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.primitive_indices = np.asarray(primitive_indices, dtype=int)

    def __len__(self) -> int:
        return self.depths.shape[0]

    @property
    def entries(self):
        return list(zip(self.depths.tolist(), self.weights.tolist(), self.primitive_indices.tolist()))

    def validate(self) -> None:
        if len(self) == 0:
            return
        if np.any(np.diff(self.depths) <= 0):
            raise ValueError("profile depths must be strictly increasing")
        if np.any(self.weights < 0):
            raise ValueError("profile weights must be non-negative")
        if self.weights.sum() > 1.0 + 1e-6:
            raise ValueError("profile weights must sum to <= 1")


class RenderOutput:
    """Rendered view plus per-pixel blend profiles.

    Profiles are stored in a CSR-style layout: ``profile_offsets`` has
    width*height+1 entries; pixel (row, col) owns the slice
    ``[offsets[row*width+col], offsets[row*width+col+1])`` of the entry arrays.
    """

    def __init__(self, color, depth, alpha, transmittance, profile_offsets,
                 entry_depths, entry_weights, entry_prims, max_weight_per_primitive):
        self.color = color
        self.depth = depth
        self.alpha = alpha
        self.transmittance = transmittance
        self.profile_offsets = profile_offsets
        self.entry_depths = entry_depths
        self.entry_weights = entry_weights
        self.entry_prims = entry_prims
        self.max_weight_per_primitive = max_weight_per_primitive

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]

    def profile(self, row: int, col: int) -> DepthWeightProfile:
        i = row * self.width + col
        lo, hi = self.profile_offsets[i], self.profile_offsets[i + 1]
        return DepthWeightProfile(
            self.entry_depths[lo:hi], self.entry_weights[lo:hi], self.entry_prims[lo:hi]
        )

    def profile_lengths(self) -> np.ndarray:
        """(height, width) number of stored entries per pixel."""
        return np.diff(self.profile_offsets).reshape(self.height, self.width)

    def coverage_mask(self) -> np.ndarray:
        """(height, width) bool: pixels with at least one stored entry."""
        return self.profile_lengths() > 0


def project_gaussian(primitive: GaussianPrimitive, view: Pose, intrinsics: CameraIntrinsics,
                     config: RenderConfig = RenderConfig()):
    """Project one primitive: (2D mean px, 2x2 covariance px^2, camera depth m).

    Standard perspective projection with first-order covariance propagation;
    the 2D covariance eigenvalues are floored at ``eigen_floor_px2``.
    """
    mean2d, cov2d, depth, ok = _project_arrays(
        primitive.mean[None], covariance(primitive)[None], view, intrinsics, config
    )
    if not ok[0]:
        raise BehindCamera(f"primitive depth {depth[0]:.4f} m is behind the near plane")
    return mean2d[0], cov2d[0], float(depth[0])


def _project_arrays(means, covs, view: Pose, intrinsics: CameraIntrinsics, config: RenderConfig):
    """Vectorized projection. Returns (mean2d (n,2), cov2d (n,2,2), depth (n,), in_front (n,))."""
    r_wc = view.rotation.T
    cam = (means - view.translation) @ r_wc.T
    z = cam[:, 2]
    ok = z > config.near_plane
    zs = np.where(ok, z, 1.0)  # placeholder depth for skipped primitives
    fx, fy = intrinsics.fx, intrinsics.fy
    u = fx * cam[:, 0] / zs + intrinsics.cx
    v = fy * cam[:, 1] / zs + intrinsics.cy
    mean2d = np.column_stack([u, v])

    # J @ (R^T Σ R) @ J^T with J the 2x3 projection Jacobian at the mean
    n = means.shape[0]
    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = fx / zs
    j[:, 0, 2] = -fx * cam[:, 0] / zs**2
    j[:, 1, 1] = fy / zs
    j[:, 1, 2] = -fy * cam[:, 1] / zs**2
    cov_cam = np.einsum("ij,njk,lk->nil", r_wc, covs, r_wc)
    cov2d = np.einsum("nij,njk,nlk->nil", j, cov_cam, j)

    # floor eigenvalues at eigen_floor_px2 (closed-form 2x2 eigendecomposition)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    half_tr = (a + c) / 2.0
    disc = np.sqrt(((a - c) / 2.0) ** 2 + b**2)
    lam1, lam2 = half_tr + disc, half_tr - disc
    f1 = np.maximum(lam1, config.eigen_floor_px2)
    f2 = np.maximum(lam2, config.eigen_floor_px2)
    # eigenvector for lam1; fall back to x-axis when isotropic
    ex = np.where(np.abs(b) > 1e-30, b, lam1 - c)
    ey = np.where(np.abs(b) > 1e-30, lam1 - a, np.abs(b))
    norm = np.sqrt(ex**2 + ey**2)
    degenerate = norm < 1e-30
    ex = np.where(degenerate, 1.0, ex / np.where(degenerate, 1.0, norm))
    ey = np.where(degenerate, 0.0, ey / np.where(degenerate, 1.0, norm))
    floored = np.empty_like(cov2d)
    floored[:, 0, 0] = f1 * ex**2 + f2 * ey**2
    floored[:, 0, 1] = floored[:, 1, 0] = (f1 - f2) * ex * ey
    floored[:, 1, 1] = f1 * ey**2 + f2 * ex**2
    return mean2d, floored, z, ok


@njit(cache=True)
def _composite(order, mean2d, inv_a, inv_b, inv_c, opacities, z, colors, radius,
               h, w, min_weight, alpha_floor, buffer_size):
    """Front-to-back alpha compositing over per-primitive footprint windows.

    Returns accumulated maps plus flat profile-entry arrays; ``used`` is -1 when
    the entry buffer overflowed (caller retries with a larger buffer).
    """
    trans = np.ones((h, w))
    color_acc = np.zeros((h, w, 3))
    depth_acc = np.zeros((h, w))
    weight_acc = np.zeros((h, w))
    max_w = np.zeros(len(radius))
    pix = np.empty(buffer_size, dtype=np.int64)
    depths = np.empty(buffer_size)
    weights = np.empty(buffer_size)
    prims = np.empty(buffer_size, dtype=np.int64)
    used = 0
    for oi in range(order.shape[0]):
        g = order[oi]
        u = mean2d[g, 0]
        v = mean2d[g, 1]
        r = radius[g]
        c0 = max(int(np.floor(u - r - 0.5)), 0)
        c1 = min(int(np.ceil(u + r - 0.5)) + 1, w)
        r0 = max(int(np.floor(v - r - 0.5)), 0)
        r1 = min(int(np.ceil(v + r - 0.5)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            continue
        a_g = inv_a[g]
        b_g = inv_b[g]
        c_g = inv_c[g]
        op = opacities[g]
        zg = z[g]
        best = 0.0
        for row in range(r0, r1):
            dy = row + 0.5 - v
            for col in range(c0, c1):
                dx = col + 0.5 - u
                q = a_g * dx * dx + 2.0 * b_g * dx * dy + c_g * dy * dy
                alpha = op * np.exp(-0.5 * q)
                if alpha < alpha_floor:
                    continue
                if alpha > 1.0:
                    alpha = 1.0
                t = trans[row, col]
                wt = alpha * t
                color_acc[row, col, 0] += wt * colors[g, 0]
                color_acc[row, col, 1] += wt * colors[g, 1]
                color_acc[row, col, 2] += wt * colors[g, 2]
                depth_acc[row, col] += wt * zg
                weight_acc[row, col] += wt
                if wt > best:
                    best = wt
                trans[row, col] = t * (1.0 - alpha)
                keep = wt >= min_weight if min_weight > 0 else wt > 0
                if keep:
                    if used >= buffer_size:
                        return (color_acc, depth_acc, weight_acc, trans, max_w,
                                pix, depths, weights, prims, -1)
                    pix[used] = row * w + col
                    depths[used] = zg
                    weights[used] = wt
                    prims[used] = g
                    used += 1
        max_w[g] = best
    return (color_acc, depth_acc, weight_acc, trans, max_w,
            pix, depths, weights, prims, used)


def _empty_output(intrinsics: CameraIntrinsics, n_primitives: int = 0) -> RenderOutput:
    h, w = intrinsics.height, intrinsics.width
    return RenderOutput(
        color=np.zeros((h, w, 3)),
        depth=np.zeros((h, w)),
        alpha=np.zeros((h, w)),
        transmittance=np.ones((h, w)),
        profile_offsets=np.zeros(h * w + 1, dtype=np.int64),
        entry_depths=np.zeros(0),
        entry_weights=np.zeros(0),
        entry_prims=np.zeros(0, dtype=np.int64),
        max_weight_per_primitive=np.zeros(n_primitives),
    )


def render(model: SplatModel | None, view: Pose, intrinsics: CameraIntrinsics,
           config: RenderConfig = RenderConfig()) -> RenderOutput:
    """Render a splat model from a camera-to-world pose.

    ``model=None`` renders an empty scene. Primitives behind the near plane are
    skipped. Raises RenderError naming the primitive index when a projection is
    non-finite.
    """
    if model is None:
        return _empty_output(intrinsics)

    mean2d, cov2d, z, in_front = _project_arrays(
        model.means, model.covariances(), view, intrinsics, config
    )
    bad = ~np.isfinite(mean2d).all(axis=1) | ~np.isfinite(cov2d).reshape(len(model), 4).all(axis=1)
    bad &= in_front
    if np.any(bad):
        raise RenderError(f"non-finite projection for primitive {int(np.nonzero(bad)[0][0])}")

    live = np.nonzero(in_front)[0]
    if live.size == 0:
        return _empty_output(intrinsics, len(model))
    order = live[np.argsort(z[live], kind="stable")]

    h, w = intrinsics.height, intrinsics.width
    npix = h * w

    # inverse 2D covariances (a, b, c) with q = a dx^2 + 2 b dx dy + c dy^2
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    inv_a = cov2d[:, 1, 1] / det
    inv_b = -cov2d[:, 0, 1] / det
    inv_c = cov2d[:, 0, 0] / det
    opacities = model.opacities
    # footprint window where alpha can exceed the floor: |delta| within
    # sqrt(q_cut * lambda_max) pixels of the projected mean
    lam_max = (cov2d[:, 0, 0] + cov2d[:, 1, 1]) / 2.0 + np.sqrt(
        ((cov2d[:, 0, 0] - cov2d[:, 1, 1]) / 2.0) ** 2 + cov2d[:, 0, 1] ** 2
    )
    if config.alpha_floor > 0:
        q_cut = 2.0 * (np.log(np.maximum(opacities, 1e-300)) - np.log(config.alpha_floor))
        radius = np.sqrt(np.maximum(q_cut, 0.0) * lam_max)
    else:
        radius = np.full(len(model), np.inf)

    thresh = max(config.min_weight, 0.0)
    buffer_size = max(npix * 32, 1 << 16)
    while True:
        (color_acc, depth_acc, weight_acc, trans, max_w,
         pix, depths, weights, prims, used) = _composite(
            order, mean2d, inv_a, inv_b, inv_c, opacities, z, model.colors, radius,
            h, w, thresh, config.alpha_floor, buffer_size,
        )
        if used >= 0:
            break
        buffer_size *= 4  # entry buffer overflowed; retry larger

    pix = pix[:used]
    depths = depths[:used]
    weights = weights[:used]
    prims = prims[:used]
    # stable sort groups entries by pixel, preserving front-to-back order
    perm = np.argsort(pix, kind="stable")
    pix, depths, weights, prims = pix[perm], depths[perm], weights[perm], prims[perm]
    counts = np.bincount(pix, minlength=npix)
    offsets = np.zeros(npix + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])

    if config.weight_form == "printed_difference" and weights.size:
        starts = offsets[:-1][counts > 0]
        shifted = np.concatenate([[0.0], weights[:-1]])
        shifted[starts] = 1.0
        weights = weights - shifted

    covered = weight_acc > 0
    depth_map = np.zeros((h, w))
    depth_map[covered] = depth_acc[covered] / weight_acc[covered]

    return RenderOutput(
        color=color_acc,
        depth=depth_map,
        alpha=weight_acc,
        transmittance=trans,
        profile_offsets=offsets,
        entry_depths=depths,
        entry_weights=weights,
        entry_prims=prims,
        max_weight_per_primitive=max_w,
    )
