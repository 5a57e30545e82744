"""Closed-loop execution verification: compare the achieved state against the
desired state and emit corrective pose deltas until within tolerance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, look_at_or_fallback


@dataclass(frozen=True)
class StateDescriptor:
    """Post-action state: camera pose, cumulative object transform, the
    just-captured view's uncertainty, and the target region's visible fraction."""

    camera_pose: Pose
    object_transform: Pose
    captured_view_uncertainty: float
    target_visible_fraction: float

    def __post_init__(self):
        if not (0.0 <= self.target_visible_fraction <= 1.0):
            raise ValueError("visible fraction must be in [0, 1]")


@dataclass(frozen=True)
class ClosedLoopConfig:
    rotation_tol_deg: float = 2.0
    translation_tol_frac: float = 0.02  # fraction of the preferred camera distance
    visibility_gap_tol: float = 0.1
    max_attempts: int = 3
    gain: float = 1.0
    desired_visible_fraction: float = 0.9
    omega_max: float = float("inf")  # residual-uncertainty gate, disabled by default


@dataclass(frozen=True)
class Accept:
    attempt: int


@dataclass(frozen=True)
class Abort:
    attempt: int
    diagnostics: dict


@dataclass(frozen=True)
class Correction:
    pose_delta: Pose  # left-composed onto the camera pose
    reason: str  # "pose_error" | "target_not_visible" | "residual_uncertainty"
    attempt: int


def discrepancy(actual: StateDescriptor, desired: StateDescriptor):
    """(rotation error deg, translation error m, visibility gap in [0, 1])."""
    rot = actual.camera_pose.geodesic_angle_deg(desired.camera_pose)
    trans = float(np.linalg.norm(actual.camera_pose.translation - desired.camera_pose.translation))
    gap = max(0.0, desired.target_visible_fraction - actual.target_visible_fraction)
    return rot, trans, gap


def _interpolate_pose(actual: Pose, desired: Pose, gain: float) -> Pose:
    if gain >= 1.0:
        return desired
    from .geometry import quat_slerp, quat_to_matrix

    q = quat_slerp(actual.quat, desired.quat, gain)
    t = actual.translation + gain * (desired.translation - actual.translation)
    return Pose(quat_to_matrix(q), t)


def correct(actual: StateDescriptor, desired: StateDescriptor, attempt: int,
            config: ClosedLoopConfig, kappa_r: float, voxel_field=None):
    """Accept, correct, or abort the current attempt.

    The correction delta retargets the camera toward the desired pose (scaled
    by the gain); the simulator re-applies actuation noise when executing it.
    When a voxel field is supplied, corrections that would land in object or
    support occupancy are clamped to the nearest free cell and re-aimed.
    """
    if attempt < 1:
        raise ValueError("attempt must be >= 1")
    rot, trans, gap = discrepancy(actual, desired)
    trans_tol = config.translation_tol_frac * kappa_r
    pose_ok = rot <= config.rotation_tol_deg and trans <= trans_tol
    if pose_ok and gap <= config.visibility_gap_tol \
            and actual.captured_view_uncertainty <= config.omega_max:
        return Accept(attempt=attempt)
    if attempt >= config.max_attempts:
        return Abort(
            attempt=attempt,
            diagnostics={
                "rotation_error_deg": rot,
                "translation_error_m": trans,
                "visibility_gap": gap,
                "rotation_tol_deg": config.rotation_tol_deg,
                "translation_tol_m": trans_tol,
            },
        )
    if not pose_ok:
        reason = "pose_error"
    elif gap > config.visibility_gap_tol:
        reason = "target_not_visible"
    else:
        reason = "residual_uncertainty"

    target = _interpolate_pose(actual.camera_pose, desired.camera_pose, config.gain)
    if voxel_field is not None and voxel_field.contains(target.translation):
        idx = tuple(voxel_field.cell_index(target.translation))
        if voxel_field.occupancy[idx] != 0:
            target = _clamp_to_free(target, voxel_field)
    delta = target.compose(actual.camera_pose.inverse())
    return Correction(pose_delta=delta, reason=reason, attempt=attempt)


def _clamp_to_free(target: Pose, field) -> Pose:
    centers = field.cell_centers()
    free = field.free_mask()
    d = np.linalg.norm(centers - target.translation, axis=-1)
    d[~free] = np.inf
    idx = np.unravel_index(int(np.argmin(d)), field.dims)
    position = centers[idx]
    return look_at_or_fallback(position, field.centroid)
