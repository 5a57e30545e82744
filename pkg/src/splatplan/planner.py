"""Viewpoint scoring and selection over the voxel field.

Each free cell p is scored

    score(p) = phi_omega(p) * W_task(p) * W_dist(p) * W_density(p)

with an indicator task weight over the option set, a Gaussian preference for
the configured camera distance, and a Gaussian preference for spacing relative
to already-chosen viewpoints. Views are selected by repeated argmax; every
selection joins the chosen set before the next argmax so the density term
steers spacing. Ties break on the lexicographic cell index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NoFeasibleCell
from .geometry import Pose, look_at_or_fallback
from .voxel import OBS_OBSERVABLE, OBS_OCCLUDED, VoxelField


@dataclass(frozen=True)
class PlannerConfig:
    kappa_r: float  # preferred camera distance (m)
    lambda_distance: float  # distance sharpness (1/m^2)
    kappa_m: float  # preferred inter-view spacing (m)
    lambda_density: float  # density sharpness (1/m^2)
    views_per_round: int = 1

    def __post_init__(self):
        if self.kappa_r <= 0 or self.kappa_m <= 0:
            raise ValueError("kappa_r and kappa_m must be positive")
        if self.lambda_distance < 0 or self.lambda_density < 0:
            raise ValueError("sharpness parameters must be >= 0")
        if self.views_per_round < 1:
            raise ValueError("views_per_round must be >= 1")


def default_planner_config(bbox_half_diagonal: float, views_per_round: int = 1) -> PlannerConfig:
    """Scale the distance/spacing peaks with the scene size."""
    kappa_r = 2.5 * bbox_half_diagonal
    kappa_m = kappa_r * np.pi / 6.0
    return PlannerConfig(
        kappa_r=kappa_r,
        lambda_distance=4.0 / kappa_r**2,
        kappa_m=kappa_m,
        lambda_density=4.0 / kappa_m**2,
        views_per_round=views_per_round,
    )


def task_weight(position, option_cells, field: VoxelField) -> float:
    """Indicator: 1 iff the cell containing ``position`` is in the option set."""
    idx = tuple(field.cell_index(position))
    return 1.0 if bool(option_cells[idx]) else 0.0


def distance_weight(position, centroid, config: PlannerConfig) -> float:
    kp = float(np.linalg.norm(np.asarray(position, dtype=float) - np.asarray(centroid, dtype=float)))
    return float(np.exp(-config.lambda_distance * (kp - config.kappa_r) ** 2))


def density_weight(position, chosen_positions, config: PlannerConfig) -> float:
    """Neutral (1.0) with no prior viewpoints: the spacing term treats the cell
    as if it sat exactly at the preferred spacing."""
    chosen = [np.asarray(c, dtype=float) for c in chosen_positions]
    if not chosen:
        near = config.kappa_m
    else:
        p = np.asarray(position, dtype=float)
        near = min(float(np.linalg.norm(p - c)) for c in chosen)
    return float(np.exp(-config.lambda_density * (near - config.kappa_m) ** 2))


def option_set_from_understanding(field: VoxelField, understanding) -> np.ndarray:
    """Cells whose target attribute matches a ranked target and are observable."""
    mask = np.zeros(field.dims, dtype=bool)
    for lab, _rank in understanding.targets:
        mask |= (field.phi_t == field.label_index(lab)) & (field.phi_o == OBS_OBSERVABLE)
    return mask & field.free_mask()


def widened_option_set(field: VoxelField) -> np.ndarray:
    """Fallback option set: free, not occluded, uncertainty above the median."""
    free = field.free_mask()
    omega = field.phi_omega
    med = np.nanmedian(omega[free]) if np.any(free) else 0.0
    return free & (field.phi_o != OBS_OCCLUDED) & (omega >= med) & ~np.isnan(omega)


@dataclass
class ViewPlan:
    """Selected viewpoints (pose, target region label or None, score) plus the
    first-round per-cell score map for audit."""

    viewpoints: list
    candidate_scores: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "viewpoints": [
                {
                    "pose": pose.matrix().reshape(-1).tolist(),  # 4x4 row-major
                    "target_region": target,
                    "score": score,
                }
                for pose, target, score in self.viewpoints
            ]
        }

    def save_json(self, path, include_scores: bool = False) -> None:
        data = self.to_json_dict()
        if include_scores:
            data["candidate_scores"] = self.candidate_scores.tolist()
        with open(path, "w") as f:
            json.dump(data, f, indent=2)


def plan_views(field: VoxelField, understanding, chosen, config: PlannerConfig,
               option_cells: np.ndarray | None = None, up=(0.0, 0.0, 1.0)) -> ViewPlan:
    """Select ``views_per_round`` viewpoint cells by repeated argmax.

    ``chosen`` holds prior viewpoint positions; each selection is appended
    before the next argmax. Raises NoFeasibleCell when every cell scores zero
    (callers may retry once with ``widened_option_set``).
    """
    free = field.free_mask()
    omega = field.phi_omega
    if np.any(free & np.isnan(omega)):
        raise ValueError("field is not fully filled: free cells with unset uncertainty")
    if option_cells is None:
        option_cells = option_set_from_understanding(field, understanding)

    centers = field.cell_centers()
    flat_centers = centers.reshape(-1, 3)
    base = np.where(free & option_cells, np.nan_to_num(omega, nan=0.0), 0.0).reshape(-1)
    diff = flat_centers - field.centroid
    kp = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    base = base * np.exp(-config.lambda_distance * (kp - config.kappa_r) ** 2)

    chosen_positions = [np.asarray(c, dtype=float) for c in chosen]
    if chosen_positions:
        from .voxel import _min_dist_kernel

        near = _min_dist_kernel(np.ascontiguousarray(flat_centers),
                                np.ascontiguousarray(np.array(chosen_positions)))
    else:
        near = np.full(flat_centers.shape[0], np.inf)  # neutral until something is chosen

    viewpoints = []
    first_scores = None
    for round_i in range(config.views_per_round):
        near_eff = np.where(np.isfinite(near), near, config.kappa_m)
        scores = base * np.exp(-config.lambda_density * (near_eff - config.kappa_m) ** 2)
        if first_scores is None:
            first_scores = scores.reshape(field.dims).copy()
        flat_best = int(np.argmax(scores))  # first max = lexicographic tie-break
        if scores[flat_best] <= 0.0:
            raise NoFeasibleCell("all candidate cells scored zero")
        idx = np.unravel_index(flat_best, field.dims)
        position = centers[idx]
        lab_idx = int(field.phi_t[idx])
        target = field.labels[lab_idx] if lab_idx >= 0 else None
        aim = field.region_centroids[target] if target is not None else field.centroid
        pose = look_at_or_fallback(position, aim, up)
        viewpoints.append((pose, target, float(scores[flat_best])))

        base[flat_best] = 0.0  # a cell is selected at most once
        dsel = flat_centers - position
        near = np.minimum(near, np.sqrt(np.einsum("ij,ij->i", dsel, dsel)))

    return ViewPlan(viewpoints=viewpoints, candidate_scores=first_scores)
