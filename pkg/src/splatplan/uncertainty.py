"""Per-pixel depth-profile entropy and per-view uncertainty ratios.

A pixel's blend weights, aggregated into depth bins and normalized, form a
distribution over depth; its Shannon entropy (nats) measures how concentrated
the rendered surface is along the ray. Binning matters: neighboring splats of
one crisp surface share a depth bin and count as concentrated, while fog
scattered along the ray spreads across bins. A view's uncertainty is the
fraction of pixels whose entropy exceeds a calibrated threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import EmptyCalibration
from .geometry import CameraIntrinsics, Pose
from .render import DepthWeightProfile, RenderOutput


DEPTH_BIN_M = 0.02


@dataclass(frozen=True)
class UncertaintyConfig:
    """Entropy binning and empty-pixel policy for the uncertainty ratio.

    Default: empty pixels inside the object mask count as uncertain (missing
    geometry), pixels outside the mask are excluded from the denominator.
    ``strict_total_pixels`` restores the plain definition that divides by all
    pixels in the view.
    """

    depth_bin: float = DEPTH_BIN_M
    count_empty_as_uncertain: bool = True
    strict_total_pixels: bool = False


def pixel_entropy(profile: DepthWeightProfile, empty_value: float = float("inf"),
                  depth_bin: float = DEPTH_BIN_M) -> float:
    """Entropy (nats) of the blend-weight-over-depth distribution of one pixel.

    Weights aggregate into depth bins of width ``depth_bin`` before
    normalization, so weight split among same-surface splats stays
    concentrated. Empty profiles return ``empty_value`` (default +inf:
    maximally uncertain); the ratio computation handles empty pixels through
    its own policy. Negative weights (printed-difference form) clamp to zero.
    """
    w = np.maximum(profile.weights, 0.0)
    total = w.sum()
    if total <= 0.0:
        return empty_value
    bins = np.floor(profile.depths / depth_bin).astype(np.int64)
    agg = {}
    for b, wi in zip(bins, w):
        agg[b] = agg.get(b, 0.0) + wi
    p = np.array([v for v in agg.values() if v > 0]) / total
    return float(-(p * np.log(p)).sum())


def entropy_map(render: RenderOutput, depth_bin: float = DEPTH_BIN_M) -> np.ndarray:
    """(h, w) entropy per pixel; 0 where nothing rendered (use the coverage mask)."""
    w = np.maximum(render.entry_weights, 0.0)
    npix = render.width * render.height
    counts = np.diff(render.profile_offsets)
    pix = np.repeat(np.arange(npix), counts)
    if pix.size == 0:
        return np.zeros((render.height, render.width))
    bins = np.floor(render.entry_depths / depth_bin).astype(np.int64)
    # profiles are depth-sorted per pixel, so equal bins are consecutive
    new_group = np.ones(pix.size, dtype=bool)
    new_group[1:] = (pix[1:] != pix[:-1]) | (bins[1:] != bins[:-1])
    gid = np.cumsum(new_group) - 1
    agg = np.bincount(gid, weights=w)
    gpix = pix[new_group]
    totals = np.bincount(gpix, weights=agg, minlength=npix)
    safe = np.where(totals > 0, totals, 1.0)
    p = agg / safe[gpix]
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    ent = np.bincount(gpix, weights=terms, minlength=npix)
    ent[totals <= 0] = 0.0
    return ent.reshape(render.height, render.width)


@dataclass(frozen=True)
class UncertaintyMap:
    entropy: np.ndarray  # (h, w), nats, 0 for empty pixels
    ratio: float  # uncertain pixels / pixel_count
    threshold_used: float
    pixel_count: int
    uncertain_mask: np.ndarray  # (h, w) bool


def projected_hull_mask(points: np.ndarray, view: Pose, intrinsics: CameraIntrinsics,
                        erode_px: int = 1) -> np.ndarray:
    """(h, w) bool mask of pixels inside the convex hull of the projected points.

    Stands in for a perception-style 2D object mask when judging which empty
    pixels signal missing geometry; a one-pixel erosion trims silhouette
    boundary effects.
    """
    r_wc = view.rotation.T
    cam = (np.asarray(points, dtype=float) - view.translation) @ r_wc.T
    z = cam[:, 2]
    front = z > 1e-6
    if front.sum() < 3:
        return np.zeros((intrinsics.height, intrinsics.width), dtype=bool)
    u = intrinsics.fx * cam[front, 0] / z[front] + intrinsics.cx
    v = intrinsics.fy * cam[front, 1] / z[front] + intrinsics.cy
    pts2d = np.column_stack([u, v])
    try:
        hull = ConvexHull(pts2d)
    except Exception:
        return np.zeros((intrinsics.height, intrinsics.width), dtype=bool)
    cols, rows = np.meshgrid(np.arange(intrinsics.width), np.arange(intrinsics.height))
    px = np.stack([cols + 0.5, rows + 0.5], axis=-1)
    # hull.equations: A @ x + b <= 0 inside
    a = hull.equations[:, :2]
    b = hull.equations[:, 2]
    vals = px @ a.T + b
    mask = np.all(vals <= 1e-9, axis=-1)
    if erode_px > 0 and mask.any():
        from scipy.ndimage import binary_erosion

        mask = binary_erosion(mask, iterations=erode_px)
    return mask


def view_uncertainty(render: RenderOutput, threshold: float,
                     object_mask: np.ndarray | None = None,
                     config: UncertaintyConfig = UncertaintyConfig()) -> UncertaintyMap:
    """Fraction of pixels whose profile entropy exceeds the threshold.

    With an object mask (default policy), the counted population is covered
    pixels plus empty pixels inside the mask; empty pixels inside the mask
    count as uncertain. Without a mask, or in strict mode, the population is
    the full image.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    ent = entropy_map(render, depth_bin=config.depth_bin)
    covered = render.coverage_mask()
    empty = ~covered

    if config.strict_total_pixels or object_mask is None:
        in_scope_empty = empty
        population = np.ones_like(covered)
    else:
        in_scope_empty = empty & object_mask
        population = covered | in_scope_empty

    uncertain = (covered & (ent > threshold))
    if config.count_empty_as_uncertain:
        uncertain = uncertain | in_scope_empty
    m = int(population.sum())
    ratio = float(uncertain.sum()) / m if m > 0 else 0.0
    return UncertaintyMap(
        entropy=ent, ratio=ratio, threshold_used=float(threshold),
        pixel_count=m, uncertain_mask=uncertain,
    )


def calibrate_threshold(pristine_views, quantile: float = 0.99,
                        depth_bin: float = DEPTH_BIN_M) -> float:
    """Entropy threshold: the given quantile of pooled covered-pixel entropies."""
    if not (0.0 < quantile < 1.0):
        raise ValueError("quantile must be in (0, 1)")
    pools = []
    for rv in pristine_views:
        ent = entropy_map(rv, depth_bin=depth_bin)
        mask = rv.coverage_mask()
        pools.append(ent[mask])
    pooled = np.concatenate(pools) if pools else np.zeros(0)
    if pooled.size == 0:
        raise EmptyCalibration("no covered pixels in calibration views")
    return float(np.quantile(pooled, quantile))
